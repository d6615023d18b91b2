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

#include <cmath>
#include <map>

#include "fedmvc/client.hpp"
#include "fedmvc/metrics.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace fedmvc {
namespace {

struct Blobs {
  ViewDataset data;
  LabelVector truth;
};

Blobs two_blobs(std::uint64_t seed, Index n = 80) {
  RngStream r(seed);
  Blobs b;
  b.data.x = oracle::random_matrix(n, 6, r, 0.5);
  for (Index i = 0; i < n; ++i) {
    const int label = i % 2;
    b.truth.push_back(label);
    b.data.x.row(i).array() += label == 0 ? -3.0 : 3.0;
    b.data.ids.push_back(1000 + i);
  }
  b.data.x = standardize_columns(b.data.x);
  return b;
}

ClientConfig small_config() {
  ClientConfig cfg;
  cfg.clusters = 2;
  cfg.ae.hidden = {16};
  cfg.ae.embed_dim = 3;
  cfg.ae.batch_size = 32;
  cfg.ae.learning_rate = 1e-3;
  cfg.ae.pretrain_iters = 100;
  cfg.local_iters = 20;
  return cfg;
}

TEST(InitRoundOne, SeparatedBlobsAreClusteredLocally) {
  const Blobs b = two_blobs(1);
  RngStream r(2);
  const LocalModel m = init_round_one(b.data, small_config(), r);
  EXPECT_EQ(m.centroids.rows(), 2);
  EXPECT_EQ(m.centroids.cols(), 3);
  EXPECT_GE(acc(predict(make_upload(m, b.data).q), b.truth), 0.95);
}

TEST(InitRoundOne, DeterministicForFixedSeed) {
  const Blobs b = two_blobs(3);
  RngStream r1(4), r2(4);
  EXPECT_EQ(init_round_one(b.data, small_config(), r1), init_round_one(b.data, small_config(), r2));
}

TEST(InitRoundOne, TooFewSamplesForK) {
  Blobs b = two_blobs(5, 3);
  ClientConfig cfg = small_config();
  cfg.clusters = 4;
  RngStream r(6);
  EXPECT_THROW(init_round_one(b.data, cfg, r), InsufficientPoints);
}

LocalModel model_with_embed(Index embed, int view, int k = 2) {
  RngStream r(7);
  const std::vector<Index> enc = {5, embed};
  const std::vector<Index> dec = {embed, 5};
  LocalModel m;
  m.view = view;
  m.ae.encoder = make_mlp(enc, Activation::kLinear, r);
  m.ae.decoder = make_mlp(dec, Activation::kLinear, r);
  m.centroids = Matrix::Zero(k, embed);
  return m;
}

TEST(SetPrototypes, SingleViewTakesAllOfC) {
  RngStream r(8);
  GlobalPrototypes c{oracle::random_matrix(2, 3, r), {3}};
  EXPECT_EQ(set_prototypes(model_with_embed(3, 0), c).centroids, c.c);
}

TEST(SetPrototypes, SecondViewGetsItsColumnBlock) {
  RngStream r(9);
  GlobalPrototypes c{oracle::random_matrix(2, 4, r), {2, 2}};
  EXPECT_EQ(set_prototypes(model_with_embed(2, 1), c).centroids, c.c.middleCols(2, 2));
}

TEST(SetPrototypes, SlicesReassembleC) {
  RngStream r(10);
  GlobalPrototypes c{oracle::random_matrix(3, 9, r), {2, 4, 3}};
  Matrix joined(3, 9);
  Index off = 0;
  for (int m = 0; m < 3; ++m) {
    const Matrix u = set_prototypes(model_with_embed(c.view_dims[m], m, 3), c).centroids;
    joined.middleCols(off, u.cols()) = u;
    off += u.cols();
  }
  EXPECT_EQ(joined, c.c);
}

TEST(SetPrototypes, WidthMismatchThrows) {
  GlobalPrototypes c{Matrix::Zero(2, 4), {2, 2}};
  EXPECT_THROW(set_prototypes(model_with_embed(3, 0), c), ContractViolation);
  EXPECT_THROW(set_prototypes(model_with_embed(2, 2), c), ContractViolation);
}

TEST(MapPseudoLabels, Examples) {
  RngStream r(11);
  const SoftAssignment p = oracle::random_stochastic(4, 2, r);
  const std::vector<SampleId> ids = {0, 1, 2, 3};
  EXPECT_EQ(map_pseudo_labels(p, ids, ids).p, p);
  const Matrix picked = map_pseudo_labels(p, ids, {3, 1}).p;
  EXPECT_EQ(picked.row(0), p.row(3));
  EXPECT_EQ(picked.row(1), p.row(1));
}

TEST(MapPseudoLabels, MatchesPerIdLookup) {
  RngStream r(12);
  std::vector<SampleId> global;
  for (SampleId i = 0; i < 50; ++i) global.push_back(3 * i + 7);
  const SoftAssignment p = oracle::random_stochastic(50, 4, r);
  std::vector<SampleId> mine;
  for (SampleId id : global) {
    if (r.uniform() < 0.4) mine.push_back(id);
  }
  r.shuffle(std::span<SampleId>(mine));
  const Matrix got = map_pseudo_labels(p, global, mine).p;
  for (std::size_t k = 0; k < mine.size(); ++k) {
    const auto row = static_cast<Index>((mine[k] - 7) / 3);
    EXPECT_EQ(got.row(static_cast<Index>(k)), p.row(row));
  }
  EXPECT_THROW(map_pseudo_labels(p, global, {8}), MissingSample);
}

TEST(ClusteringLoss, Examples) {
  RngStream r(13);
  const SoftAssignment q = oracle::random_stochastic(5, 3, r);
  EXPECT_EQ(clustering_loss(q, q), 0.0);
  Matrix p(1, 2), h(1, 2);
  p << 1, 0;
  h << 0.5, 0.5;
  EXPECT_NEAR(clustering_loss(p, h), std::log(2.0), 1e-15);
}

TEST(ClusteringLoss, MatchesNaiveSum) {
  RngStream r(14);
  const SoftAssignment p = oracle::random_stochastic(20, 4, r), q = oracle::random_stochastic(20, 4, r);
  EXPECT_NEAR(clustering_loss(p, q), oracle::kl_sum(p, q), 1e-12);
}

TEST(LocalLossGrad, CompositeMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    RngStream r(100 + seed);
    for (Activation act : {Activation::kTanh, Activation::kRelu}) {
      const LocalModel m = gradcheck::random_model(act, r);
      const Matrix x = oracle::random_matrix(5, 6, r);
      const Matrix p = sharpen(oracle::random_stochastic(5, 3, r));
      EXPECT_LT(gradcheck::max_error(m, x, p, 0.1), 1e-4);
      EXPECT_LT(gradcheck::max_error(m, x, p, 1.0), 1e-4);
    }
  }
}

TEST(LocalLossGrad, ClusteringGradientMatchesLoopFormula) {
  RngStream r(15);
  const Matrix z = oracle::random_matrix(7, 3, r), u = oracle::random_matrix(4, 3, r);
  const SoftAssignment p = oracle::random_stochastic(7, 4, r);
  const ClusteringGradient g = clustering_loss_grad(z, u, p);
  const Matrix q = oracle::student_t(z, u);
  Matrix dz = Matrix::Zero(7, 3), du = Matrix::Zero(4, 3);
  for (Index i = 0; i < 7; ++i) {
    for (Index j = 0; j < 4; ++j) {
      const double w = 1.0 / (1.0 + (z.row(i) - u.row(j)).squaredNorm());
      dz.row(i) += 2.0 * w * (p(i, j) - q(i, j)) * (z.row(i) - u.row(j));
      du.row(j) -= 2.0 * w * (p(i, j) - q(i, j)) * (z.row(i) - u.row(j));
    }
  }
  EXPECT_LE((g.embed - dz).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((g.centroids - du).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LocalTrain, GammaZeroMatchesReconstructionOnly) {
  const Blobs b = two_blobs(16);
  ClientConfig cfg = small_config();
  RngStream init(17);
  LocalModel m = init_round_one(b.data, cfg, init);
  RngStream r(18);
  const SoftAssignment p = sharpen(oracle::random_stochastic(b.data.size(), 2, r));
  m.config.gamma = 0.0;
  RngStream ra(19), rb(19);
  const LocalTrainResult with_p = local_train(m, b.data, LocalPseudoLabels{p}, 30, ra);
  const LocalTrainResult without = local_train(m, b.data, std::nullopt, 30, rb);
  EXPECT_EQ(with_p.model, without.model);
  ASSERT_EQ(with_p.trace.size(), without.trace.size());
  for (std::size_t t = 0; t < with_p.trace.size(); ++t) EXPECT_EQ(with_p.trace[t].total, without.trace[t].total);
}

TEST(LocalTrain, ZeroStepsLeavesModelUnchanged) {
  const Blobs b = two_blobs(20);
  RngStream init(21);
  const LocalModel m = init_round_one(b.data, small_config(), init);
  RngStream r(22);
  const SoftAssignment p = make_upload(m, b.data).q;
  EXPECT_EQ(local_train(m, b.data, LocalPseudoLabels{sharpen(p)}, 0, r).model, m);
}

TEST(LocalTrain, FullBatchLossIsNonIncreasingAtSmallStep) {
  const Blobs b = two_blobs(23, 60);
  ClientConfig cfg = small_config();
  cfg.ae.batch_size = 60;
  RngStream init(24);
  LocalModel m = init_round_one(b.data, cfg, init);
  m.config.ae.learning_rate = 1e-4;
  const LocalPseudoLabels pseudo{sharpen(make_upload(m, b.data).q)};
  RngStream r(25);
  const LocalTrainResult res = local_train(m, b.data, pseudo, 50, r);
  for (std::size_t t = 1; t < res.trace.size(); ++t) EXPECT_LE(res.trace[t].total, res.trace[t - 1].total);
  EXPECT_GT(res.trace.front().cluster, 0.0);
}

TEST(LocalTrain, CentroidsMoveOnlyWithPseudoLabels) {
  const Blobs b = two_blobs(26);
  RngStream init(27);
  const LocalModel m = init_round_one(b.data, small_config(), init);
  RngStream r1(28), r2(28);
  EXPECT_EQ(local_train(m, b.data, std::nullopt, 5, r1).model.centroids, m.centroids);
  const LocalPseudoLabels pseudo{sharpen(make_upload(m, b.data).q)};
  EXPECT_NE(local_train(m, b.data, pseudo, 5, r2).model.centroids, m.centroids);
}

TEST(LocalTrain, RejectsMismatchedPseudoLabels) {
  const Blobs b = two_blobs(29);
  RngStream init(30);
  const LocalModel m = init_round_one(b.data, small_config(), init);
  RngStream r(31);
  EXPECT_THROW(local_train(m, b.data, LocalPseudoLabels{Matrix::Constant(3, 2, 0.5)}, 1, r), ContractViolation);
  EXPECT_THROW(local_train(m, b.data, std::nullopt, -1, r), ContractViolation);
}

TEST(MakeUpload, ShapesStochasticRowsAndPurity) {
  const Blobs b = two_blobs(32);
  RngStream init(33);
  const LocalModel m = init_round_one(b.data, small_config(), init);
  const ClientUpload a = make_upload(m, b.data), c = make_upload(m, b.data);
  EXPECT_EQ(a.z.rows(), b.data.size());
  EXPECT_EQ(a.q.rows(), b.data.size());
  EXPECT_EQ(a.ids, b.data.ids);
  for (Index i = 0; i < a.q.rows(); ++i) EXPECT_NEAR(a.q.row(i).sum(), 1.0, 1e-12);
  EXPECT_EQ(a, c);
}

TEST(AlignPseudoLabels, MapsOntoLocalOrder) {
  const SoftAssignment local = [] {
    Matrix q(4, 2);
    q << 0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6;
    return q;
  }();
  const SoftAssignment swapped = Permutation{{1, 0}}.apply_columns(local);
  EXPECT_EQ(align_pseudo_labels({swapped}, local).p, local);
}

}  // namespace
}  // namespace fedmvc
