/*
 * Copyright 2026 The fedmvc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <numeric>

#include "fedmvc/metrics.hpp"
#include "fedmvc/server.hpp"
#include "oracles.hpp"
#include "planted.hpp"

namespace fedmvc {
namespace {

ClientUpload upload(int view, std::vector<SampleId> ids, Matrix z, Matrix q) {
  return ClientUpload{view, std::move(ids), std::move(z), std::move(q)};
}

std::vector<Permutation> identities(std::size_t m, int k) {
  return std::vector<Permutation>(m, Permutation::identity(k));
}

TEST(IndicatorMatrix, CountsAndValidation) {
  IndicatorMatrix h(3, 2);
  h.set(0, 0);
  h.set(0, 1);
  h.set(1, 1);
  EXPECT_TRUE(h.complete(0));
  EXPECT_FALSE(h.complete(1));
  EXPECT_EQ(h.complete_rows(), (std::vector<Index>{0}));
  EXPECT_EQ(h.missing_blocks(), 3);
  EXPECT_THROW(h.validate(), IndicatorViolation);
  h.set(2, 0);
  EXPECT_NO_THROW(h.validate());
  EXPECT_THROW(h(3, 0), ContractViolation);
}

TEST(Aggregate, MeanOverAvailableViews) {
  Matrix q1(2, 2), q2(1, 2);
  q1 << 1, 0, 0.3, 0.7;
  q2 << 0.5, 0.5;
  const std::vector<ClientUpload> ups = {upload(0, {10, 11}, Matrix::Zero(2, 1), q1),
                                         upload(1, {10}, Matrix::Zero(1, 1), q2)};
  const GlobalIndex index = build_index(ups);
  const SoftAssignment q = aggregate(ups, identities(2, 2), index);
  EXPECT_DOUBLE_EQ(q(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(q(0, 1), 0.25);
  EXPECT_EQ(q.row(1), q1.row(1));
}

TEST(Aggregate, CompleteDataEqualsDenseAverageOfPermutedAssignments) {
  RngStream r(1);
  const int k = 4;
  std::vector<ClientUpload> ups;
  std::vector<Permutation> perms;
  Matrix expected = Matrix::Zero(30, k);
  std::vector<SampleId> ids(30);
  std::iota(ids.begin(), ids.end(), 0);
  for (int m = 0; m < 3; ++m) {
    const Matrix q = oracle::random_stochastic(30, k, r);
    Permutation p = Permutation::identity(k);
    r.shuffle(std::span<int>(p.target));
    expected += q * p.to_matrix() / 3.0;
    ups.push_back(upload(m, ids, Matrix::Zero(30, 1), q));
    perms.push_back(p);
  }
  EXPECT_LE((aggregate(ups, perms, build_index(ups)) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Aggregate, RowStochasticForRandomPatterns) {
  RngStream r(2);
  for (int t = 0; t < 20; ++t) {
    const planted::Model pm = planted::make(r, 40, static_cast<Index>(r.below(40)) + 1, 3);
    const SoftAssignment q = aggregate(pm.uploads, identities(3, 3), build_index(pm.uploads));
    for (Index i = 0; i < q.rows(); ++i) EXPECT_NEAR(q.row(i).sum(), 1.0, 1e-9);
  }
}

TEST(ConcatFeatures, ShapesAndMissingBlocks) {
  RngStream r(3);
  const Matrix z1 = oracle::random_matrix(2, 2, r), z2 = oracle::random_matrix(1, 3, r);
  const std::vector<ClientUpload> ups = {upload(0, {1, 2}, z1, Matrix::Ones(2, 1)),
                                         upload(1, {2}, z2, Matrix::Ones(1, 1))};
  const GlobalFeatures f = concat_features(ups, build_index(ups));
  EXPECT_EQ(f.z.rows(), 2);
  EXPECT_EQ(f.z.cols(), 5);
  EXPECT_FALSE(f.h(0, 1));
  EXPECT_TRUE(f.h(1, 1));
  EXPECT_EQ(f.block(1, 1), z2.row(0));
  EXPECT_EQ(f.block(0, 0), z1.row(0));

  const std::vector<ClientUpload> single = {upload(0, {1, 2}, z1, Matrix::Ones(2, 1))};
  EXPECT_EQ(concat_features(single, build_index(single)).z, z1);
}

TEST(ConcatFeatures, RejectsOutOfOrderViews) {
  const std::vector<ClientUpload> ups = {upload(1, {1}, Matrix::Zero(1, 1), Matrix::Ones(1, 1))};
  EXPECT_THROW(build_index(ups), ContractViolation);
}

GlobalFeatures complete_features(const Matrix& z, std::vector<Index> dims) {
  GlobalFeatures f;
  f.z = z;
  f.view_dims = std::move(dims);
  f.h = IndicatorMatrix(z.rows(), static_cast<Index>(f.view_dims.size()));
  for (Index i = 0; i < z.rows(); ++i) {
    for (Index m = 0; m < f.h.views(); ++m) f.h.set(i, m);
  }
  return f;
}

TEST(ComputePrototypes, OneHotPairsGiveMeans) {
  Matrix z(4, 2), q(4, 2);
  z << 0, 0, 2, 2, 10, 10, 12, 14;
  q << 1, 0, 1, 0, 0, 1, 0, 1;
  const GlobalPrototypes c = compute_prototypes(complete_features(z, {1, 1}), q, 2);
  Matrix expected(2, 2);
  expected << 1, 1, 11, 12;
  EXPECT_EQ(c.c, expected);
}

TEST(ComputePrototypes, EmptyClusterTakesFarthestPoint) {
  Matrix z(3, 1), q(3, 2);
  z << 0, 1, 5;
  q << 0.9, 0.1, 0.8, 0.2, 0.6, 0.4;
  const GlobalPrototypes c = compute_prototypes(complete_features(z, {1}), q, 2);
  EXPECT_DOUBLE_EQ(c.c(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(c.c(1, 0), 5.0);
}

TEST(ComputePrototypes, MatchesGroupByMeanAndIsOptimal) {
  RngStream r(4);
  const Matrix z = oracle::random_matrix(50, 5, r);
  const SoftAssignment q = oracle::random_stochastic(50, 3, r);
  const GlobalPrototypes c = compute_prototypes(complete_features(z, {2, 3}), q, 3);
  const LabelVector labels = oracle::argmax_rows(q);
  const auto objective = [&](const Matrix& cent) {
    double s = 0.0;
    for (Index i = 0; i < 50; ++i) s += (z.row(i) - cent.row(labels[i])).squaredNorm();
    return s;
  };
  for (int j = 0; j < 3; ++j) {
    RowVector mean = RowVector::Zero(5);
    int n = 0;
    for (Index i = 0; i < 50; ++i) {
      if (labels[i] == j) {
        mean += z.row(i);
        ++n;
      }
    }
    EXPECT_LE((c.c.row(j) - mean / n).cwiseAbs().maxCoeff(), 1e-12);
  }
  const double best = objective(c.c);
  for (int t = 0; t < 20; ++t) EXPECT_GT(objective(c.c + oracle::random_matrix(3, 5, r, 0.01)), best);
}

TEST(ComputePrototypes, UsesCompleteRowsOnlyAndNeedsOne) {
  RngStream r(5);
  planted::Model pm = planted::make(r, 20, 10);
  const GlobalIndex index = build_index(pm.uploads);
  GlobalFeatures f = concat_features(pm.uploads, index);
  const SoftAssignment q = aggregate(pm.uploads, identities(3, 4), index);
  const GlobalPrototypes before = compute_prototypes(f, q, 4);
  for (Index i = 10; i < 20; ++i) f.z.row(i).setConstant(1e6);  // incomplete rows
  EXPECT_EQ(compute_prototypes(f, q, 4), before);

  const planted::Model none = planted::make(r, 10, 0);
  const GlobalIndex idx = build_index(none.uploads);
  EXPECT_THROW(compute_prototypes(concat_features(none.uploads, idx),
                                  aggregate(none.uploads, identities(3, 4), idx), 4),
               NoOverlap);
}

TEST(FitViewPatterns, RecoversIdentityAndPlantedW) {
  RngStream r(6);
  const planted::Model pm = planted::make(r);
  const GlobalIndex index = build_index(pm.uploads);
  const SoftAssignment q = aggregate(pm.uploads, identities(3, 4), index);
  const GlobalFeatures f = concat_features(pm.uploads, index);
  PatternOptions exact;
  exact.ridge_eps = 0.0;
  const ViewPatterns w = fit_view_patterns(f, q, pm.c, exact);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_LE((w.w[m] - pm.w[m]).norm(), 1e-6);
    EXPECT_LE(w.residual_rmse[m], 1e-9);
  }
  RngStream r2(7);
  const planted::Model id = planted::make(r2, 120, 60, 4, {3, 4, 2}, 0.0, true);
  const GlobalIndex idx2 = build_index(id.uploads);
  const ViewPatterns wi = fit_view_patterns(concat_features(id.uploads, idx2),
                                            aggregate(id.uploads, identities(3, 4), idx2), id.c, exact);
  for (std::size_t m = 0; m < 3; ++m) {
    const Index d = id.c.view_dims[m];
    EXPECT_LE((wi.w[m] - Matrix::Identity(d, d)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FitViewPatterns, GradientSolverApproachesClosedForm) {
  RngStream r(7);
  const planted::Model pm = planted::make(r);
  const GlobalIndex index = build_index(pm.uploads);
  const SoftAssignment q = aggregate(pm.uploads, identities(3, 4), index);
  const GlobalFeatures f = concat_features(pm.uploads, index);
  const ViewPatterns exact = fit_view_patterns(f, q, pm.c);
  PatternOptions few, many;
  few.solver = many.solver = PatternSolver::kGradient;
  few.iters = 10;
  many.iters = 5000;
  const ViewPatterns a = fit_view_patterns(f, q, pm.c, few), b = fit_view_patterns(f, q, pm.c, many);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_LT((b.w[m] - exact.w[m]).norm(), (a.w[m] - exact.w[m]).norm());
    EXPECT_LE(b.residual_rmse[m], a.residual_rmse[m]);
  }
}

TEST(Impute, ZeroNoisePlantRecoversHiddenBlocks) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream r(10 + seed);
    EXPECT_LE(planted::impute_and_compare(planted::make(r), 0.0).max_abs, 1e-6);
  }
}

TEST(Impute, NoisyPlantStaysWithinThreeSigma) {
  const double sigma = 0.01;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream r(20 + seed);
    EXPECT_LT(planted::impute_and_compare(planted::make(r, 120, 60, 4, {3, 4, 2}, sigma)).rmse, 3.0 * sigma);
  }
}

TEST(Impute, WritesOnlyMissingBlocks) {
  RngStream r(8);
  const planted::Model pm = planted::make(r);
  const GlobalIndex index = build_index(pm.uploads);
  const SoftAssignment q = aggregate(pm.uploads, identities(3, 4), index);
  const GlobalFeatures f = concat_features(pm.uploads, index);
  const GlobalFeatures g = impute(f, q, pm.c, fit_view_patterns(f, q, pm.c));
  EXPECT_TRUE(g.imputed);
  for (Index i = 0; i < f.z.rows(); ++i) {
    for (std::size_t m = 0; m < 3; ++m) {
      if (f.h(i, static_cast<Index>(m))) {
        EXPECT_EQ(g.block(i, m), f.block(i, m));
      }
    }
  }
}

TEST(Impute, CompleteDataIsUnchanged) {
  RngStream r(9);
  const Matrix z = oracle::random_matrix(10, 4, r);
  const GlobalFeatures f = complete_features(z, {2, 2});
  const SoftAssignment q = oracle::random_stochastic(10, 2, r);
  const GlobalPrototypes c = compute_prototypes(f, q, 2);
  EXPECT_EQ(impute(f, q, c, fit_view_patterns(f, q, c)).z, z);
}

TEST(Impute, OneHotWithIdentityPatternGivesPrototype) {
  GlobalFeatures f;
  f.z = Matrix::Zero(1, 3);
  f.view_dims = {1, 2};
  f.h = IndicatorMatrix(1, 2);
  f.h.set(0, 0);
  Matrix q(1, 2);
  q << 0, 1;
  GlobalPrototypes c;
  c.c = Matrix(2, 3);
  c.c << 1, 2, 3, 4, 5, 6;
  c.view_dims = {1, 2};
  const GlobalFeatures g = impute(f, q, c, ViewPatterns::identity(f.view_dims));
  EXPECT_EQ(g.block(0, 1), c.c.block(1, 1, 1, 2));
  EXPECT_THROW(impute(f, q, c, ViewPatterns{}), OrderingError);
}

TEST(GlobalPseudoLabels, SeparatedBlobs) {
  RngStream r(11);
  Matrix z = oracle::random_matrix(90, 3, r, 0.3);
  LabelVector truth;
  for (Index i = 0; i < 90; ++i) {
    truth.push_back(static_cast<int>(i % 3));
    z(i, i % 3) += 10.0;
  }
  const GlobalClustering g = global_pseudo_labels(z, 3, r);
  EXPECT_EQ(acc(g.labels, truth), 1.0);
  for (Index i = 0; i < 90; ++i) EXPECT_NEAR(g.p.row(i).sum(), 1.0, 1e-12);
  EXPECT_EQ(predict(g.p), predict(g.s));
  EXPECT_EQ(g.labels, predict(g.p));
}

TEST(AlignToReference, PermutesEveryOutputConsistently) {
  RngStream r(12);
  const Matrix z = oracle::random_matrix(40, 2, r);
  GlobalClustering g = global_pseudo_labels(z, 3, r);
  const GlobalClustering before = g;
  const LabelVector reference = Permutation{{2, 0, 1}}.apply_labels(g.labels);
  const Permutation p = align_to_reference(g, reference, 3);
  EXPECT_EQ(p.target, (std::vector<int>{2, 0, 1}));
  EXPECT_EQ(g.labels, reference);
  EXPECT_EQ(predict(g.p), reference);
  EXPECT_EQ(g.centroids.row(2), before.centroids.row(0));
}

struct EpochInputs {
  std::vector<ClientUpload> uploads;
  ServerConfig config;
};

EpochInputs blob_uploads(std::uint64_t seed, bool complete) {
  RngStream r(seed);
  EpochInputs in;
  in.config.clusters = 3;
  const Index n = 60;
  for (int m = 0; m < 2; ++m) {
    ClientUpload up;
    up.view = m;
    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i) {
      if (complete || i < 40 || (i % 2) == m) rows.push_back(i);
    }
    up.z = Matrix(static_cast<Index>(rows.size()), 2);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const Index i = rows[k];
      up.z.row(static_cast<Index>(k)) = oracle::random_matrix(1, 2, r, 0.3);
      up.z(static_cast<Index>(k), 0) += 5.0 * static_cast<double>(i % 3);
      up.ids.push_back(i);
    }
    const Matrix centers = (Matrix(3, 2) << 0, 0, 5, 0, 10, 0).finished();
    up.q = student_t_assign(up.z, m == 0 ? centers : Permutation{{1, 2, 0}}.inverse().apply_rows(centers));
    in.uploads.push_back(std::move(up));
  }
  return in;
}

TEST(ServerEpoch, CompleteDataNeedsNoImputation) {
  const EpochInputs in = blob_uploads(13, true);
  RngStream r(14);
  const ServerOutput out = server_epoch(in.uploads, in.config, r);
  EXPECT_EQ(out.diagnostics.imputation_fraction, 0.0);
  EXPECT_EQ(out.diagnostics.complete_samples, 60);
  EXPECT_EQ(out.labels, predict(out.broadcast.p));
  LabelVector truth;
  for (Index i = 0; i < 60; ++i) truth.push_back(static_cast<int>(i % 3));
  EXPECT_EQ(acc(out.labels, truth), 1.0);
  // Pseudo-labels follow the anchor's cluster order.
  EXPECT_EQ(out.labels, predict(out.q));
}

TEST(ServerEpoch, DeterministicForFixedSeed) {
  const EpochInputs in = blob_uploads(15, false);
  RngStream a(16), b(16);
  const ServerOutput x = server_epoch(in.uploads, in.config, a), y = server_epoch(in.uploads, in.config, b);
  EXPECT_EQ(x.broadcast, y.broadcast);
  EXPECT_EQ(x.labels, y.labels);
  EXPECT_GT(x.diagnostics.imputation_fraction, 0.0);
}

TEST(ServerEpoch, RealignsPermutedClient) {
  const EpochInputs in = blob_uploads(17, false);
  RngStream r(18);
  const ServerOutput out = server_epoch(in.uploads, in.config, r);
  EXPECT_EQ(out.permutations[0], Permutation::identity(3));
  EXPECT_EQ(out.permutations[1].target, (std::vector<int>{1, 2, 0}));
}

TEST(ServerEpoch, NoExtensionUsesSharpenedAggregate) {
  EpochInputs in = blob_uploads(19, false);
  in.config.extension = ExtensionMode::kNone;
  RngStream r(20);
  const ServerOutput out = server_epoch(in.uploads, in.config, r);
  EXPECT_EQ(out.broadcast.p, sharpen(out.q));
  EXPECT_FALSE(out.diagnostics.kmeans_objective.has_value());
}

TEST(ServerEpoch, RejectsMalformedUploads) {
  EpochInputs in = blob_uploads(21, true);
  in.uploads[1].q(0, 0) = 5.0;
  RngStream r(22);
  EXPECT_THROW(server_epoch(in.uploads, in.config, r), ContractViolation);
  in = blob_uploads(21, true);
  in.config.clusters = 4;
  EXPECT_THROW(server_epoch(in.uploads, in.config, r), ContractViolation);
}

}  // namespace
}  // namespace fedmvc
