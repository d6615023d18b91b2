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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedmvc/alignment.hpp"
#include "fedmvc/clustering.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"
#include "fedmvc/protocol.hpp"

namespace fedmvc {

// N x M availability: (i, m) is set when view m holds sample i.
class IndicatorMatrix {
 public:
  IndicatorMatrix() = default;
  IndicatorMatrix(Index samples, Index views)
      : samples_(samples), views_(views), bits_(static_cast<std::size_t>(samples * views), 0) {}

  Index samples() const { return samples_; }
  Index views() const { return views_; }

  bool operator()(Index i, Index m) const { return bits_[flat(i, m)] != 0; }
  void set(Index i, Index m, bool value = true) { bits_[flat(i, m)] = value ? 1 : 0; }

  Index row_count(Index i) const {
    Index c = 0;
    for (Index m = 0; m < views_; ++m) c += (*this)(i, m) ? 1 : 0;
    return c;
  }

  bool complete(Index i) const { return row_count(i) == views_; }

  std::vector<Index> complete_rows() const {
    std::vector<Index> rows;
    for (Index i = 0; i < samples_; ++i) {
      if (complete(i)) rows.push_back(i);
    }
    return rows;
  }

  Index missing_blocks() const {
    Index c = 0;
    for (auto b : bits_) c += b == 0 ? 1 : 0;
    return c;
  }

  void validate() const {
    for (Index i = 0; i < samples_; ++i) {
      if (row_count(i) == 0) {
        throw IndicatorViolation("sample row " + std::to_string(i) + " is absent from every view");
      }
    }
  }

  bool operator==(const IndicatorMatrix&) const = default;

 private:
  std::size_t flat(Index i, Index m) const {
    if (i < 0 || i >= samples_ || m < 0 || m >= views_) {
      throw ContractViolation("IndicatorMatrix: index out of range");
    }
    return static_cast<std::size_t>(i * views_ + m);
  }

  Index samples_ = 0;
  Index views_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Global row order (sorted ids) plus availability.
struct GlobalIndex {
  std::vector<SampleId> ids;
  std::unordered_map<SampleId, Index> row_of;
  IndicatorMatrix h;

  Index size() const { return static_cast<Index>(ids.size()); }

  Index row(SampleId id) const {
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw MissingSample("sample " + std::to_string(id) + " is not indexed");
    return it->second;
  }
};

// uploads[m] must carry view m.
inline void require_view_order(const std::vector<ClientUpload>& uploads) {
  if (uploads.empty()) throw ContractViolation("server: no uploads");
  for (std::size_t m = 0; m < uploads.size(); ++m) {
    if (uploads[m].view != static_cast<int>(m)) {
      throw ContractViolation("server: upload " + std::to_string(m) + " carries view " +
                              std::to_string(uploads[m].view));
    }
    if (static_cast<std::size_t>(uploads[m].z.rows()) != uploads[m].ids.size() ||
        static_cast<std::size_t>(uploads[m].q.rows()) != uploads[m].ids.size()) {
      throw ContractViolation("server: upload " + std::to_string(m) + " row counts disagree");
    }
  }
}

inline GlobalIndex build_index(const std::vector<ClientUpload>& uploads) {
  require_view_order(uploads);
  GlobalIndex index;
  for (const auto& up : uploads) index.ids.insert(index.ids.end(), up.ids.begin(), up.ids.end());
  std::sort(index.ids.begin(), index.ids.end());
  index.ids.erase(std::unique(index.ids.begin(), index.ids.end()), index.ids.end());
  index.row_of.reserve(index.ids.size());
  for (std::size_t i = 0; i < index.ids.size(); ++i) {
    index.row_of.emplace(index.ids[i], static_cast<Index>(i));
  }
  index.h = IndicatorMatrix(index.size(), static_cast<Index>(uploads.size()));
  for (std::size_t m = 0; m < uploads.size(); ++m) {
    for (SampleId id : uploads[m].ids) {
      const Index i = index.row(id);
      if (index.h(i, static_cast<Index>(m))) {
        throw ContractViolation("view " + std::to_string(m) + " uploads sample " +
                                std::to_string(id) + " twice");
      }
      index.h.set(i, static_cast<Index>(m));
    }
  }
  return index;
}

// Global soft assignment: for every sample, the mean of the aligned rows
// Q^m A^m over the views that hold it.
inline SoftAssignment aggregate(const std::vector<ClientUpload>& uploads,
                                const std::vector<Permutation>& perms, const GlobalIndex& index) {
  require_view_order(uploads);
  if (perms.size() != uploads.size()) throw ContractViolation("aggregate: one permutation per view");
  const Index k = uploads.front().q.cols();
  SoftAssignment q = SoftAssignment::Zero(index.size(), k);
  std::vector<double> counts(static_cast<std::size_t>(index.size()), 0.0);
  for (std::size_t m = 0; m < uploads.size(); ++m) {
    if (uploads[m].q.cols() != k) throw ContractViolation("aggregate: views disagree on K");
    const Matrix aligned = perms[m].apply_columns(uploads[m].q);
    for (std::size_t r = 0; r < uploads[m].ids.size(); ++r) {
      const Index i = index.row(uploads[m].ids[r]);
      q.row(i) += aligned.row(static_cast<Index>(r));
      counts[i] += 1.0;
    }
  }
  for (Index i = 0; i < q.rows(); ++i) {
    if (counts[i] == 0.0) {
      throw IndicatorViolation("aggregate: sample " + std::to_string(index.ids[i]) +
                               " is absent from every upload");
    }
    q.row(i) /= counts[i];
  }
  return q;
}

// Concatenated embeddings, N x sum(d_m). Blocks a view does not hold are
// zero and flagged in `h` until imputed.
struct GlobalFeatures {
  Matrix z;
  std::vector<Index> view_dims;
  IndicatorMatrix h;
  bool imputed = false;

  Index offset(std::size_t view) const {
    Index off = 0;
    for (std::size_t m = 0; m < view; ++m) off += view_dims.at(m);
    return off;
  }

  auto block(Index row, std::size_t view) { return z.row(row).segment(offset(view), view_dims[view]); }
  auto block(Index row, std::size_t view) const {
    return z.row(row).segment(offset(view), view_dims[view]);
  }

  std::vector<Index> complete_rows() const { return h.complete_rows(); }
};

inline GlobalFeatures concat_features(const std::vector<ClientUpload>& uploads,
                                      const GlobalIndex& index) {
  require_view_order(uploads);
  GlobalFeatures g;
  for (const auto& up : uploads) g.view_dims.push_back(up.z.cols());
  Index total = 0;
  for (Index d : g.view_dims) total += d;
  g.z = Matrix::Zero(index.size(), total);
  g.h = IndicatorMatrix(index.size(), static_cast<Index>(uploads.size()));
  for (std::size_t m = 0; m < uploads.size(); ++m) {
    for (std::size_t r = 0; r < uploads[m].ids.size(); ++r) {
      const Index i = index.row(uploads[m].ids[r]);
      if (g.h(i, static_cast<Index>(m))) {
        throw ContractViolation("concat_features: view " + std::to_string(m) +
                                " holds sample " + std::to_string(uploads[m].ids[r]) + " twice");
      }
      g.h.set(i, static_cast<Index>(m));
      g.block(i, m) = uploads[m].z.row(static_cast<Index>(r));
    }
  }
  return g;
}

inline Matrix gather(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

// Hard prototypes on the complete samples: c_j is the mean of the complete
// rows whose assignment argmax is j. A cluster with no such row takes the
// complete row farthest from its own cluster's prototype.
inline GlobalPrototypes compute_prototypes(const GlobalFeatures& features, const SoftAssignment& q,
                                           int k) {
  if (k < 1) throw ContractViolation("compute_prototypes: K must be >= 1");
  if (q.rows() != features.z.rows() || q.cols() != k) {
    throw ContractViolation("compute_prototypes: Q shape does not match features and K");
  }
  const auto rows = features.complete_rows();
  if (rows.empty()) {
    throw NoOverlap("compute_prototypes: no sample is present in every view");
  }
  const Matrix zc = gather(features.z, rows);
  const LabelVector labels = predict(gather(q, rows));

  GlobalPrototypes out;
  out.view_dims = features.view_dims;
  out.c = Matrix::Zero(k, zc.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Index r = 0; r < zc.rows(); ++r) {
    out.c.row(labels[r]) += zc.row(r);
    counts[labels[r]] += 1.0;
  }
  for (int j = 0; j < k; ++j) {
    if (counts[j] > 0.0) out.c.row(j) /= counts[j];
  }
  std::vector<bool> used(static_cast<std::size_t>(zc.rows()), false);
  for (int j = 0; j < k; ++j) {
    if (counts[j] > 0.0) continue;
    Index far = -1;
    double far_d = -1.0;
    for (Index r = 0; r < zc.rows(); ++r) {
      if (used[r] || counts[labels[r]] == 0.0) continue;
      const double d = (zc.row(r) - out.c.row(labels[r])).squaredNorm();
      if (d > far_d) {
        far_d = d;
        far = r;
      }
    }
    if (far < 0) far = 0;  // fewer complete rows than empty clusters
    used[far] = true;
    out.c.row(j) = zc.row(far);
  }
  return out;
}

enum class PatternSolver : std::uint8_t { kClosedForm = 0, kGradient = 1 };

struct PatternOptions {
  double ridge_eps = 1e-6;
  PatternSolver solver = PatternSolver::kClosedForm;
  int iters = 1;             // T2; only the gradient solver iterates
  double step_scale = 1.0;   // gradient solver step, in units of 1 / Lipschitz bound
};

// One d_m x d_m map per view: z^m ~ (q C^m) W^m.
struct ViewPatterns {
  std::vector<Matrix> w;
  std::vector<double> residual_rmse;  // fit residual on the complete rows, per view

  bool fitted() const { return !w.empty(); }

  static ViewPatterns identity(const std::vector<Index>& view_dims) {
    ViewPatterns p;
    for (Index d : view_dims) {
      p.w.push_back(Matrix::Identity(d, d));
      p.residual_rmse.push_back(0.0);
    }
    return p;
  }
};

namespace detail {

inline Matrix ridge_gradient_descent(const Matrix& x, const Matrix& y, double eps, int iters,
                                     double step_scale) {
  const Matrix gram = x.transpose() * x;
  const Matrix xty = x.transpose() * y;
  // trace(X^T X) bounds the largest eigenvalue.
  const double lipschitz = 2.0 * (gram.trace() + eps * static_cast<double>(gram.rows()));
  const double step = lipschitz > 0.0 ? step_scale / lipschitz : 0.0;
  Matrix w = Matrix::Identity(x.cols(), y.cols());
  for (int t = 0; t < iters; ++t) {
    const Matrix grad = 2.0 * (gram * w - xty + eps * w);
    w -= step * grad;
  }
  return w;
}

}  // namespace detail

inline ViewPatterns fit_view_patterns(const GlobalFeatures& features, const SoftAssignment& q,
                                      const GlobalPrototypes& prototypes,
                                      const PatternOptions& opt = {}) {
  const auto rows = features.complete_rows();
  if (rows.empty()) throw NoOverlap("fit_view_patterns: no complete samples");
  if (prototypes.view_dims != features.view_dims) {
    throw ContractViolation("fit_view_patterns: prototype and feature layouts differ");
  }
  const Matrix qc = gather(q, rows);
  ViewPatterns out;
  for (std::size_t m = 0; m < features.view_dims.size(); ++m) {
    const Matrix design = qc * prototypes.slice(m);
    const Matrix target = gather(features.z, rows).middleCols(features.offset(m), features.view_dims[m]);
    Matrix w = opt.solver == PatternSolver::kClosedForm
                   ? solve_ridge(design, target, opt.ridge_eps)
                   : detail::ridge_gradient_descent(design, target, opt.ridge_eps, opt.iters,
                                                    opt.step_scale);
    const double rmse =
        std::sqrt((target - design * w).squaredNorm() / static_cast<double>(target.size()));
    out.w.push_back(std::move(w));
    out.residual_rmse.push_back(rmse);
  }
  return out;
}

// Writes (q_i C^m) W^m into every block flagged missing; available blocks
// are left untouched.
inline GlobalFeatures impute(GlobalFeatures features, const SoftAssignment& q,
                             const GlobalPrototypes& prototypes, const ViewPatterns& patterns) {
  if (!patterns.fitted()) {
    throw OrderingError("impute: view patterns have not been fitted");
  }
  if (patterns.w.size() != features.view_dims.size()) {
    throw ContractViolation("impute: one pattern per view required");
  }
  if (q.rows() != features.z.rows()) throw ContractViolation("impute: Q rows != feature rows");
  for (std::size_t m = 0; m < features.view_dims.size(); ++m) {
    const Matrix cm = prototypes.slice(m);
    const Matrix& w = patterns.w[m];
    for (Index i = 0; i < features.z.rows(); ++i) {
      if (features.h(i, static_cast<Index>(m))) continue;
      features.block(i, m) = (q.row(i) * cm) * w;
    }
  }
  features.imputed = true;
  return features;
}

struct GlobalClustering {
  Centroids centroids;
  SoftAssignment s;
  SoftAssignment p;
  LabelVector labels;
  double kmeans_objective = 0.0;
};

// k-means on the filled features, then Student's t similarity, sharpening
// and argmax.
inline GlobalClustering global_pseudo_labels(const Matrix& z, int k, RngStream& rng,
                                             const KMeansOptions& opt = {}) {
  GlobalClustering out;
  KMeansResult km = kmeans(z, k, rng, opt);
  out.centroids = std::move(km.centroids);
  out.kmeans_objective = km.objective;
  out.s = student_t_assign(z, out.centroids);
  out.p = sharpen(out.s);
  out.labels = predict(out.p);
  return out;
}

// Renames the clusters of `g` so they agree as much as possible with
// `reference` (hungarian on the confusion counts).
inline Permutation align_to_reference(GlobalClustering& g, const LabelVector& reference, int k) {
  const Permutation perm = hungarian(cost_from_confusion(confusion(g.labels, reference, k)));
  g.centroids = perm.apply_rows(g.centroids);
  g.s = perm.apply_columns(g.s);
  g.p = perm.apply_columns(g.p);
  g.labels = perm.apply_labels(g.labels);
  return perm;
}

enum class ExtensionMode : std::uint8_t {
  kFull = 0,            // impute with (q C^m) W^m
  kPrototypesOnly = 1,  // impute with q C^m (W = I)
  kNone = 2,            // no imputation; the aggregated Q is the global structure
};

struct ServerConfig {
  int clusters = 2;
  std::size_t anchor = 0;
  PatternOptions patterns;
  ExtensionMode extension = ExtensionMode::kFull;
  KMeansOptions kmeans;
};

struct ServerDiagnostics {
  double imputation_fraction = 0.0;
  std::vector<double> pattern_residuals;
  std::optional<double> kmeans_objective;
  double assignment_entropy = 0.0;
  Index complete_samples = 0;
};

struct ServerOutput {
  Broadcast broadcast;
  LabelVector labels;  // global row order
  SoftAssignment q;    // aggregated, aligned
  std::vector<Permutation> permutations;
  ServerDiagnostics diagnostics;
};

// align -> aggregate -> concatenate -> prototypes -> patterns -> impute ->
// pseudo-labels. Pure: failure leaves no partial result behind.
inline ServerOutput server_epoch(const std::vector<ClientUpload>& uploads,
                                 const ServerConfig& config, RngStream& rng) {
  require_view_order(uploads);
  const int k = config.clusters;
  for (const auto& up : uploads) {
    if (up.q.cols() != k) throw ContractViolation("server_epoch: upload K differs from config");
    require_finite(up.z, "uploaded embeddings");
    require_row_stochastic(up.q, "uploaded assignment");
  }
  const GlobalIndex index = build_index(uploads);
  index.h.validate();

  std::vector<ClientAssignment> assignments;
  assignments.reserve(uploads.size());
  for (const auto& up : uploads) assignments.push_back({up.ids, up.q});
  const AlignmentResult aligned = align_all(assignments, config.anchor);

  ServerOutput out;
  out.permutations = aligned.permutations;
  out.q = aggregate(uploads, aligned.permutations, index);
  GlobalFeatures features = concat_features(uploads, index);
  const GlobalPrototypes prototypes = compute_prototypes(features, out.q, k);
  out.diagnostics.complete_samples = static_cast<Index>(features.complete_rows().size());
  out.diagnostics.imputation_fraction =
      static_cast<double>(features.h.missing_blocks()) /
      static_cast<double>(features.h.samples() * features.h.views());

  GlobalClustering clustering;
  if (config.extension == ExtensionMode::kNone) {
    clustering.s = out.q;
    clustering.p = sharpen(out.q);
    clustering.labels = predict(clustering.p);
  } else {
    const ViewPatterns patterns = config.extension == ExtensionMode::kFull
                                      ? fit_view_patterns(features, out.q, prototypes, config.patterns)
                                      : ViewPatterns::identity(features.view_dims);
    out.diagnostics.pattern_residuals = patterns.residual_rmse;
    features = impute(std::move(features), out.q, prototypes, patterns);
    clustering = global_pseudo_labels(features.z, k, rng, config.kmeans);
    out.diagnostics.kmeans_objective = clustering.kmeans_objective;
    // k-means numbers its clusters arbitrarily; the prototypes and every
    // client's centroids follow the anchor's order, so the pseudo-labels must
    // too.
    align_to_reference(clustering, predict(out.q), k);
  }
  out.diagnostics.assignment_entropy = mean_row_entropy(clustering.p);
  out.labels = clustering.labels;
  out.broadcast.prototypes = prototypes;
  out.broadcast.p = std::move(clustering.p);
  out.broadcast.ids = index.ids;
  return out;
}

}  // namespace fedmvc
