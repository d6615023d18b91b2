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

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fedmvc/errors.hpp"

namespace fedmvc {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Exact equality including shape (Eigen's operator== requires equal shapes).
inline bool same_matrix(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw ContractViolation(std::string(what) + " contains non-finite entries");
  }
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractViolation(std::string(what) + ": shape mismatch " +
                            std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
  }
}

// ---------------------------------------------------------------------------
// Counter-based random numbers.
//
// RngStream is Philox4x32-10 keyed by the 64-bit seed, with the 64-bit stream
// id occupying the upper half of the 128-bit counter. Every draw is a pure
// function of (seed, stream, position), so the sequence is identical on any
// platform and independent of thread scheduling. Distributions are
// implemented here rather than through <random> because the standard
// distributions are not specified bit-for-bit.
// ---------------------------------------------------------------------------

namespace detail {

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

  // Child streams with distinct ids never share a (key, counter) pair with
  // each other or with the parent.
  RngStream split(std::uint64_t child_id) const {
    const std::uint64_t child_seed =
        detail::splitmix64(seed_ ^ detail::splitmix64(stream_ + 0x632BE59BD9B4E019ull));
    return RngStream(child_seed, child_id);
  }

  std::uint64_t next_u64() {
    if (buffered_ == 0) refill();
    const std::size_t i = 2 - buffered_;
    --buffered_;
    return buffer_[i];
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform double in (0, 1].
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ContractViolation("RngStream::below: empty range");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // log of a Gamma(shape, 1) variate. Working in log space keeps tiny shapes
  // (where the variate underflows) usable for Dirichlet draws.
  double log_gamma_variate(double shape) {
    if (!(shape > 0.0)) throw ContractViolation("gamma shape must be positive");
    if (shape < 1.0) {
      return log_gamma_variate(shape + 1.0) + std::log(uniform_pos()) / shape;
    }
    // Marsaglia and Tsang.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = 0.0;
      double v = 0.0;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
        return std::log(d * v);
      }
    }
  }

  std::vector<double> dirichlet(std::size_t dim, double alpha) {
    std::vector<double> logs(dim);
    double max_log = -INFINITY;
    for (auto& l : logs) {
      l = log_gamma_variate(alpha);
      max_log = std::max(max_log, l);
    }
    double total = 0.0;
    for (auto& l : logs) {
      l = std::exp(l - max_log);
      total += l;
    }
    for (auto& l : logs) l /= total;
    return logs;
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  void refill() {
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                              static_cast<std::uint32_t>(seed_ >> 32)};
    const auto out = detail::philox4x32_10(ctr, key);
    buffer_[0] = std::uint64_t{out[0]} | (std::uint64_t{out[1]} << 32);
    buffer_[1] = std::uint64_t{out[2]} | (std::uint64_t{out[3]} << 32);
    buffered_ = 2;
    ++counter_;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  std::size_t buffered_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Dense kernels
// ---------------------------------------------------------------------------

// out(i, j) = ||a_i - b_j||^2, evaluated directly so that identical rows give
// exactly zero and the result of pairwise_sqdist(A, A) is exactly symmetric.
inline Matrix pairwise_sqdist(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ContractViolation("pairwise_sqdist: column mismatch " + std::to_string(a.cols()) +
                            " vs " + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.rows(); ++j) {
      out(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    }
  }
  return out;
}

// argmin_B ||Y - X B||_F^2 + eps ||B||_F^2 through a Cholesky factorization of
// the p x p normal matrix.
inline Matrix solve_ridge(const Matrix& x, const Matrix& y, double eps) {
  if (x.rows() != y.rows()) {
    throw ContractViolation("solve_ridge: X has " + std::to_string(x.rows()) +
                            " rows but Y has " + std::to_string(y.rows()));
  }
  if (!(eps >= 0.0) || !std::isfinite(eps)) {
    throw ContractViolation("solve_ridge: eps must be finite and non-negative");
  }
  const Index p = x.cols();
  Matrix gram = x.transpose() * x;
  gram.diagonal().array() += eps;
  const Matrix rhs = x.transpose() * y;

  Eigen::LLT<Matrix> llt(gram);
  // Without regularization LLT can succeed on a numerically singular matrix;
  // reject pivots at roundoff level relative to the largest diagonal entry.
  const double scale = std::max(gram.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  bool singular = llt.info() != Eigen::Success;
  if (!singular && eps == 0.0) {
    const auto diag = llt.matrixLLT().diagonal();
    singular = (diag.array().square() <= scale * 1e-13).any();
  }
  if (singular) {
    Eigen::ColPivHouseholderQR<Matrix> qr(gram);
    qr.setThreshold(1e-13);
    throw SingularSystem(static_cast<std::size_t>(qr.rank()), static_cast<std::size_t>(p));
  }
  return llt.solve(rhs);
}

inline Matrix row_normalize(const Matrix& m) {
  Matrix out = m;
  for (Index i = 0; i < m.rows(); ++i) {
    if ((m.row(i).array() < 0.0).any()) throw DegenerateRow(static_cast<std::size_t>(i));
    const double sum = m.row(i).sum();
    if (!(sum > 0.0) || !std::isfinite(sum)) throw DegenerateRow(static_cast<std::size_t>(i));
    out.row(i) /= sum;
  }
  return out;
}

// Column-wise z-scores; constant columns are only centered.
inline Matrix standardize_columns(const Matrix& m) {
  if (m.rows() == 0) return m;
  const RowVector mean = m.colwise().mean();
  Matrix out = m.rowwise() - mean;
  const RowVector var = out.colwise().squaredNorm() / static_cast<double>(m.rows());
  for (Index c = 0; c < m.cols(); ++c) {
    const double sd = std::sqrt(var[c]);
    if (sd > 0.0) out.col(c) /= sd;
  }
  return out;
}

}  // namespace fedmvc
