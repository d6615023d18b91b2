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
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedmvc/clustering.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"

namespace fedmvc {

// K x K, non-negative.
using CostMatrix = Matrix;

// Boolean K x K permutation stored as the column chosen for each row:
// A(i, target[i]) = 1. Applied to a soft assignment, client cluster i becomes
// reference cluster target[i].
struct Permutation {
  std::vector<int> target;

  static Permutation identity(int k) {
    Permutation p;
    p.target.resize(static_cast<std::size_t>(k));
    std::iota(p.target.begin(), p.target.end(), 0);
    return p;
  }

  int size() const { return static_cast<int>(target.size()); }

  bool valid() const {
    std::vector<bool> seen(target.size(), false);
    for (int t : target) {
      if (t < 0 || t >= size() || seen[t]) return false;
      seen[t] = true;
    }
    return true;
  }

  Matrix to_matrix() const {
    Matrix a = Matrix::Zero(size(), size());
    for (int i = 0; i < size(); ++i) a(i, target[i]) = 1.0;
    return a;
  }

  Permutation inverse() const {
    Permutation inv;
    inv.target.resize(target.size());
    for (int i = 0; i < size(); ++i) inv.target[target[i]] = i;
    return inv;
  }

  // Q A: column i of q moves to column target[i].
  Matrix apply_columns(const Matrix& q) const {
    if (q.cols() != size()) throw ContractViolation("Permutation: width mismatch");
    Matrix out(q.rows(), q.cols());
    for (int i = 0; i < size(); ++i) out.col(target[i]) = q.col(i);
    return out;
  }

  // Rows of a K x d matrix (e.g. centroids) follow their cluster.
  Matrix apply_rows(const Matrix& c) const {
    if (c.rows() != size()) throw ContractViolation("Permutation: height mismatch");
    Matrix out(c.rows(), c.cols());
    for (int i = 0; i < size(); ++i) out.row(target[i]) = c.row(i);
    return out;
  }

  LabelVector apply_labels(const LabelVector& labels) const {
    LabelVector out(labels.size());
    for (std::size_t n = 0; n < labels.size(); ++n) out[n] = target.at(labels[n]);
    return out;
  }

  bool operator==(const Permutation&) const = default;
};

// m(i, j) = #{n : labels[n] = i and anchor[n] = j}.
inline CostMatrix confusion(const LabelVector& labels, const LabelVector& anchor, int k) {
  if (labels.size() != anchor.size()) {
    throw ContractViolation("confusion: label vectors differ in length");
  }
  CostMatrix m = CostMatrix::Zero(k, k);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || labels[n] >= k || anchor[n] < 0 || anchor[n] >= k) {
      throw ContractViolation("confusion: label out of range at position " + std::to_string(n));
    }
    m(labels[n], anchor[n]) += 1.0;
  }
  return m;
}

// max(m) - m, so that minimizing cost maximizes agreement.
inline CostMatrix cost_from_confusion(const CostMatrix& m) {
  if (m.size() == 0) return m;
  return (m.maxCoeff() - m.array()).matrix();
}

namespace detail {

// Shortest augmenting path Hungarian method with row/column potentials,
// O(n^3). Returns the column assigned to each row.
inline std::vector<int> hungarian_assign(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assign(n, -1);
  for (int j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

inline double assignment_cost(const Matrix& cost, const std::vector<int>& assign) {
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) total += cost(static_cast<Index>(i), assign[i]);
  return total;
}

inline double optimal_cost(const Matrix& cost) {
  if (cost.rows() == 0) return 0.0;
  return assignment_cost(cost, hungarian_assign(cost));
}

}  // namespace detail

// Minimum-cost permutation. Among optimal permutations the lexicographically
// smallest target vector is returned: rows are fixed in order, each to the
// lowest column that still admits an optimal completion.
inline Permutation hungarian(const CostMatrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw ContractViolation("hungarian: cost matrix is " + std::to_string(cost.rows()) + "x" +
                            std::to_string(cost.cols()) + ", expected square");
  }
  require_finite(cost, "hungarian cost");
  const int k = static_cast<int>(cost.rows());
  Permutation result;
  if (k == 0) return result;
  const double best = detail::optimal_cost(cost);
  const double tol = 1e-9 * (1.0 + std::abs(best));

  std::vector<int> rows_left(k), cols_left(k);
  std::iota(rows_left.begin(), rows_left.end(), 0);
  std::iota(cols_left.begin(), cols_left.end(), 0);
  result.target.assign(static_cast<std::size_t>(k), -1);
  double fixed = 0.0;
  for (int r = 0; r < k; ++r) {
    const int remaining = k - r - 1;
    bool placed = false;
    for (std::size_t ci = 0; ci < cols_left.size() && !placed; ++ci) {
      const int c = cols_left[ci];
      Matrix sub(remaining, remaining);
      for (int a = 0; a < remaining; ++a) {
        int b_out = 0;
        for (std::size_t cj = 0; cj < cols_left.size(); ++cj) {
          if (cj == ci) continue;
          sub(a, b_out++) = cost(r + 1 + a, cols_left[cj]);
        }
      }
      const double total = fixed + cost(r, c) + detail::optimal_cost(sub);
      if (total <= best + tol) {
        result.target[r] = c;
        fixed += cost(r, c);
        cols_left.erase(cols_left.begin() + static_cast<std::ptrdiff_t>(ci));
        placed = true;
      }
    }
    if (!placed) {
      // Unreachable with exact arithmetic; fall back to the plain solution.
      result.target = detail::hungarian_assign(cost);
      return result;
    }
  }
  return result;
}

// Sample-id keyed soft assignment produced by one client.
struct ClientAssignment {
  std::vector<std::int64_t> ids;
  SoftAssignment q;
};

struct AlignmentResult {
  std::vector<SoftAssignment> aligned;
  std::vector<Permutation> permutations;
};

// Matches every client's hard labels to the anchor's on the samples both
// hold, and permutes the client's columns accordingly. The anchor keeps the
// identity.
inline AlignmentResult align_all(const std::vector<ClientAssignment>& clients, std::size_t anchor = 0) {
  if (clients.empty()) throw ContractViolation("align_all: no clients");
  if (anchor >= clients.size()) throw ContractViolation("align_all: anchor index out of range");
  const int k = static_cast<int>(clients[anchor].q.cols());
  const LabelVector anchor_labels = predict(clients[anchor].q);
  std::unordered_map<std::int64_t, std::size_t> anchor_pos;
  for (std::size_t i = 0; i < clients[anchor].ids.size(); ++i) {
    anchor_pos.emplace(clients[anchor].ids[i], i);
  }

  AlignmentResult out;
  for (std::size_t m = 0; m < clients.size(); ++m) {
    const auto& c = clients[m];
    if (c.q.cols() != k) throw ContractViolation("align_all: clients disagree on K");
    if (static_cast<std::size_t>(c.q.rows()) != c.ids.size()) {
      throw ContractViolation("align_all: id count does not match assignment rows");
    }
    if (m == anchor) {
      out.aligned.push_back(c.q);
      out.permutations.push_back(Permutation::identity(k));
      continue;
    }
    const LabelVector labels = predict(c.q);
    LabelVector mine, theirs;
    for (std::size_t i = 0; i < c.ids.size(); ++i) {
      const auto it = anchor_pos.find(c.ids[i]);
      if (it == anchor_pos.end()) continue;
      mine.push_back(labels[i]);
      theirs.push_back(anchor_labels[it->second]);
    }
    if (mine.empty()) {
      throw AlignmentImpossible("align_all: client " + std::to_string(m) +
                                " shares no samples with the anchor");
    }
    const Permutation perm = hungarian(cost_from_confusion(confusion(mine, theirs, k)));
    out.aligned.push_back(perm.apply_columns(c.q));
    out.permutations.push_back(perm);
  }
  return out;
}

}  // namespace fedmvc
