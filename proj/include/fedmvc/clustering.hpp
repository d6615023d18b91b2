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

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"

namespace fedmvc {

// K x d, one centroid per row.
using Centroids = Matrix;

// n x K, every row a probability vector over clusters.
using SoftAssignment = Matrix;

using LabelVector = std::vector<int>;

inline void require_row_stochastic(const SoftAssignment& s, const char* what,
                                   double tol = 1e-9) {
  for (Index i = 0; i < s.rows(); ++i) {
    if ((s.row(i).array() < 0.0).any() || (s.row(i).array() > 1.0 + tol).any() ||
        std::abs(s.row(i).sum() - 1.0) > tol) {
      throw ContractViolation(std::string(what) + ": row " + std::to_string(i) +
                              " is not a probability vector");
    }
  }
}

struct KMeansOptions {
  int max_iter = 300;
  double tol = 1e-6;  // relative objective decrease
  int n_init = 10;    // independent k-means++ restarts; best objective wins
};

struct KMeansResult {
  Centroids centroids;
  LabelVector labels;
  std::vector<double> objective_trace;  // one entry per Lloyd iteration
  double objective = 0.0;
};

namespace detail {

inline Centroids kmeanspp_seed(const Matrix& z, int k, RngStream& rng) {
  const Index n = z.rows();
  Centroids c(k, z.cols());
  c.row(0) = z.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[i] = (z.row(i) - c.row(0)).squaredNorm();
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (double v : d2) total += v;
    Index pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    c.row(j) = z.row(pick);
    for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (z.row(i) - c.row(j)).squaredNorm());
  }
  return c;
}

// Nearest centroid, ties to the lowest index. Returns the distance to it.
inline void assign_nearest(const Matrix& z, const Centroids& c, LabelVector& labels,
                           std::vector<double>& dist) {
  const Matrix d = pairwise_sqdist(z, c);
  for (Index i = 0; i < z.rows(); ++i) {
    Index best = 0;
    double best_d = d(i, 0);
    for (Index j = 1; j < d.cols(); ++j) {
      if (d(i, j) < best_d) {
        best_d = d(i, j);
        best = j;
      }
    }
    labels[i] = static_cast<int>(best);
    dist[i] = best_d;
  }
}

// Gives every empty cluster the point farthest from its centroid, taken from
// a cluster that can spare one.
inline void repair_empty(LabelVector& labels, std::vector<double>& dist, int k) {
  std::vector<Index> counts(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++counts[l];
  for (int j = 0; j < k; ++j) {
    if (counts[j] > 0) continue;
    Index far = -1;
    double far_d = -1.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (counts[labels[i]] > 1 && dist[i] > far_d) {
        far_d = dist[i];
        far = static_cast<Index>(i);
      }
    }
    --counts[labels[far]];
    labels[far] = j;
    dist[far] = 0.0;
    ++counts[j];
  }
}

inline Centroids cluster_means(const Matrix& z, const LabelVector& labels, int k) {
  Centroids c = Centroids::Zero(k, z.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Index i = 0; i < z.rows(); ++i) {
    c.row(labels[i]) += z.row(i);
    counts[labels[i]] += 1.0;
  }
  for (int j = 0; j < k; ++j) {
    if (counts[j] > 0.0) c.row(j) /= counts[j];
  }
  return c;
}

inline double kmeans_objective(const Matrix& z, const Centroids& c, const LabelVector& labels) {
  double total = 0.0;
  for (Index i = 0; i < z.rows(); ++i) total += (z.row(i) - c.row(labels[i])).squaredNorm();
  return total;
}

// Hartigan single-point moves from a Lloyd fixed point: a point leaves cluster
// a for b when n_b/(n_b+1) |z-c_b|^2 < n_a/(n_a-1) |z-c_a|^2. Every move lowers
// the objective and no cluster is emptied. Returns true if anything moved.
inline bool hartigan_refine(const Matrix& z, int k, LabelVector& labels, Centroids& c, int max_passes) {
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (int l : labels) counts[l] += 1.0;
  bool moved_any = false;
  for (int pass = 0; pass < max_passes; ++pass) {
    bool moved = false;
    for (Index i = 0; i < z.rows(); ++i) {
      const int a = labels[i];
      if (counts[a] <= 1.0) continue;
      const double leave = counts[a] / (counts[a] - 1.0) * (z.row(i) - c.row(a)).squaredNorm();
      int best = a;
      double best_join = leave * (1.0 - 1e-12);
      for (int b = 0; b < k; ++b) {
        if (b == a) continue;
        const double join = counts[b] / (counts[b] + 1.0) * (z.row(i) - c.row(b)).squaredNorm();
        if (join < best_join) {
          best_join = join;
          best = b;
        }
      }
      if (best == a) continue;
      c.row(a) = (counts[a] * c.row(a) - z.row(i)) / (counts[a] - 1.0);
      c.row(best) = (counts[best] * c.row(best) + z.row(i)) / (counts[best] + 1.0);
      counts[a] -= 1.0;
      counts[best] += 1.0;
      labels[i] = best;
      moved = true;
    }
    if (!moved) break;
    moved_any = true;
  }
  return moved_any;
}

inline KMeansResult lloyd(const Matrix& z, int k, RngStream& rng, const KMeansOptions& opt) {
  const Index n = z.rows();
  KMeansResult r;
  r.centroids = kmeanspp_seed(z, k, rng);
  r.labels.assign(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  for (int it = 0; it < opt.max_iter; ++it) {
    assign_nearest(z, r.centroids, r.labels, dist);
    repair_empty(r.labels, dist, k);
    r.centroids = cluster_means(z, r.labels, k);
    const double obj = kmeans_objective(z, r.centroids, r.labels);
    const bool converged =
        !r.objective_trace.empty() && (r.objective_trace.back() - obj) <= opt.tol * r.objective_trace.back();
    r.objective_trace.push_back(obj);
    if (converged || obj == 0.0) break;
  }
  LabelVector refined = r.labels;
  Centroids refined_c = r.centroids;
  if (hartigan_refine(z, k, refined, refined_c, opt.max_iter)) {
    refined_c = cluster_means(z, refined, k);
    const double obj = kmeans_objective(z, refined_c, refined);
    if (obj < r.objective_trace.back()) {
      r.labels = std::move(refined);
      r.centroids = std::move(refined_c);
      r.objective_trace.push_back(obj);
    }
  }
  r.objective = r.objective_trace.back();
  return r;
}

}  // namespace detail

// Lloyd's algorithm from k-means++ seeding, then Hartigan refinement. Every returned cluster owns at
// least one point and `centroids` are the means of `labels`.
inline KMeansResult kmeans(const Matrix& z, int k, RngStream& rng, const KMeansOptions& opt = {}) {
  if (k < 1) throw ContractViolation("kmeans: K must be >= 1");
  if (z.rows() < k) {
    throw InsufficientPoints("kmeans: " + std::to_string(z.rows()) + " points for K = " +
                             std::to_string(k));
  }
  if (opt.max_iter < 1 || opt.n_init < 1) throw ContractViolation("kmeans: bad options");
  require_finite(z, "kmeans input");
  KMeansResult best;
  for (int init = 0; init < opt.n_init; ++init) {
    KMeansResult r = detail::lloyd(z, k, rng, opt);
    if (init == 0 || r.objective < best.objective) best = std::move(r);
  }
  return best;
}

// Degree-one Student's t kernel, normalized over clusters.
inline SoftAssignment student_t_assign(const Matrix& z, const Centroids& centers) {
  if (z.cols() != centers.cols()) {
    throw ContractViolation("student_t_assign: embedding width " + std::to_string(z.cols()) +
                            " vs centroid width " + std::to_string(centers.cols()));
  }
  Matrix kernel = pairwise_sqdist(z, centers);
  kernel = (1.0 + kernel.array()).inverse().matrix();
  return row_normalize(kernel);
}

// Row-normalize, square, row-normalize again.
inline SoftAssignment sharpen(const SoftAssignment& s) {
  const Matrix normalized = row_normalize(s);
  return row_normalize(normalized.array().square().matrix());
}

// Row argmax; ties go to the lowest cluster index.
inline LabelVector predict(const SoftAssignment& p) {
  LabelVector labels(static_cast<std::size_t>(p.rows()), 0);
  for (Index i = 0; i < p.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < p.cols(); ++j) {
      if (p(i, j) > p(i, best)) best = j;
    }
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

// Mean Shannon entropy (nats) of the rows.
inline double mean_row_entropy(const SoftAssignment& s) {
  if (s.rows() == 0) return 0.0;
  double total = 0.0;
  for (Index i = 0; i < s.rows(); ++i) {
    for (Index j = 0; j < s.cols(); ++j) {
      const double v = s(i, j);
      if (v > 0.0) total -= v * std::log(v);
    }
  }
  return total / static_cast<double>(s.rows());
}

}  // namespace fedmvc
