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
#include <map>
#include <string>
#include <vector>

#include "fedmvc/alignment.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"

namespace fedmvc {

// Contingency counts between two labelings, with arbitrary integer labels
// remapped to dense indices in ascending order.
class Contingency {
 public:
  Contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) {
      throw ContractViolation("metrics: prediction has " + std::to_string(pred.size()) +
                              " labels, truth has " + std::to_string(truth.size()));
    }
    if (pred.empty()) throw ContractViolation("metrics: empty labelings");
    const auto p = densify(pred, pred_classes_);
    const auto t = densify(truth, truth_classes_);
    table_ = Matrix::Zero(pred_classes_, truth_classes_);
    for (std::size_t i = 0; i < p.size(); ++i) table_(p[i], t[i]) += 1.0;
    n_ = static_cast<double>(pred.size());
  }

  const Matrix& table() const { return table_; }
  double n() const { return n_; }
  Index pred_classes() const { return pred_classes_; }
  Index truth_classes() const { return truth_classes_; }

 private:
  static std::vector<Index> densify(const std::vector<int>& labels, Index& count) {
    std::map<int, Index> code;
    for (int l : labels) code.emplace(l, 0);
    Index next = 0;
    for (auto& [label, idx] : code) idx = next++;
    count = next;
    std::vector<Index> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = code[labels[i]];
    return out;
  }

  Matrix table_;
  double n_ = 0.0;
  Index pred_classes_ = 0;
  Index truth_classes_ = 0;
};

// Best one-to-one cluster-to-class matching, as a fraction of samples.
inline double acc(const std::vector<int>& pred, const std::vector<int>& truth) {
  const Contingency c(pred, truth);
  const Index k = std::max(c.pred_classes(), c.truth_classes());
  Matrix square = Matrix::Zero(k, k);
  square.topLeftCorner(c.pred_classes(), c.truth_classes()) = c.table();
  const Permutation match = hungarian(cost_from_confusion(square));
  double matched = 0.0;
  for (Index i = 0; i < k; ++i) matched += square(i, match.target[i]);
  return matched / c.n();
}

namespace detail {

inline double entropy_of_counts(const Eigen::VectorXd& counts, double n) {
  double h = 0.0;
  for (Index i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0.0) {
      const double p = counts[i] / n;
      h -= p * std::log(p);
    }
  }
  return h;
}

inline double comb2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace detail

// Mutual information normalized by the arithmetic mean of the two entropies.
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  const Contingency c(pred, truth);
  const Matrix& t = c.table();
  const double n = c.n();
  const Eigen::VectorXd rows = t.rowwise().sum();
  const Eigen::VectorXd cols = t.colwise().sum().transpose();
  const double h_pred = detail::entropy_of_counts(rows, n);
  const double h_truth = detail::entropy_of_counts(cols, n);
  if (h_pred == 0.0 && h_truth == 0.0) return 1.0;  // both a single cluster
  double mi = 0.0;
  for (Index i = 0; i < t.rows(); ++i) {
    for (Index j = 0; j < t.cols(); ++j) {
      if (t(i, j) > 0.0) mi += (t(i, j) / n) * std::log(n * t(i, j) / (rows[i] * cols[j]));
    }
  }
  const double denom = 0.5 * (h_pred + h_truth);
  return std::clamp(mi / denom, 0.0, 1.0);
}

// Hubert-Arabie adjusted Rand index from the contingency table.
inline double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
  const Contingency c(pred, truth);
  const Matrix& t = c.table();
  double sum_cells = 0.0;
  for (Index i = 0; i < t.size(); ++i) sum_cells += detail::comb2(t.data()[i]);
  double sum_rows = 0.0;
  for (Index i = 0; i < t.rows(); ++i) sum_rows += detail::comb2(t.row(i).sum());
  double sum_cols = 0.0;
  for (Index j = 0; j < t.cols(); ++j) sum_cols += detail::comb2(t.col(j).sum());
  const double total = detail::comb2(c.n());
  const double expected = total > 0.0 ? sum_rows * sum_cols / total : 0.0;
  const double max_index = 0.5 * (sum_rows + sum_cols);
  const double denom = max_index - expected;
  // Both partitions trivial (one cluster each, or all singletons).
  if (denom == 0.0) return sum_cells == max_index ? 1.0 : 0.0;
  return (sum_cells - expected) / denom;
}

struct ClusterScores {
  double acc = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
};

inline ClusterScores score(const std::vector<int>& pred, const std::vector<int>& truth) {
  return {acc(pred, truth), nmi(pred, truth), ari(pred, truth)};
}

}  // namespace fedmvc
