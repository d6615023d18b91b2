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
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "fedmvc/dataset.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"
#include "fedmvc/protocol.hpp"

namespace fedmvc {

// Gaussian-mixture latent samples observed through one random map per view.
//
//   latent   z_i = mu_{y_i} + noise * e_i,  e_i ~ N(0, I_L)
//   view m   x_i = f_m(z_i) + noise * e'_i, f_m(z) = A_m z + b_m, optionally
//            squashed as s * tanh(f_m(z) / s) with s = separation
//
// A_m has orthonormal columns (or rows when D_m < L), so latent distances are
// preserved. When K <= L the cluster means form a regular simplex with
// pairwise distance `separation`; otherwise they are random with minimum
// pairwise distance `separation`.
struct SynthConfig {
  Index samples = 500;
  int views = 3;
  int clusters = 4;
  Index latent_dim = 5;
  std::vector<Index> view_dims = {12, 10, 8};
  double noise = 1.0;
  double separation = 6.0;
  bool nonlinear = false;
  // Each view scales latent directions by gains drawn from [gain_floor, 1],
  // so every view resolves some cluster pairs better than others.
  double gain_floor = 0.8;

  void validate() const {
    if (samples < 1 || views < 1 || clusters < 1 || latent_dim < 1) {
      throw ContractViolation("synth: sizes must be >= 1");
    }
    if (view_dims.size() != static_cast<std::size_t>(views)) {
      throw ContractViolation("synth: need one dimension per view");
    }
    for (Index d : view_dims) {
      if (d < 1) throw ContractViolation("synth: view dims must be >= 1");
    }
    if (!(gain_floor > 0.0 && gain_floor <= 1.0)) {
      throw ContractViolation("synth: gain floor must be in (0, 1]");
    }
    if (!(noise >= 0.0) || !(separation >= 0.0)) {
      throw ContractViolation("synth: noise and separation must be >= 0");
    }
  }
};

struct SynthData {
  MultiViewData data;  // every view holds every sample, ids 0..N-1
  LabelMap labels;
  Matrix latent;
};

namespace detail {

inline Matrix gaussian_matrix(Index rows, Index cols, RngStream& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// rows x cols with orthonormal columns (rows >= cols) or rows (rows < cols).
inline Matrix random_orthonormal(Index rows, Index cols, RngStream& rng) {
  if (rows >= cols) {
    Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(rows, cols, rng));
    Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
    return q;
  }
  return random_orthonormal(cols, rows, rng).transpose();
}

inline Matrix cluster_means(int k, Index dim, double separation, RngStream& rng) {
  if (k == 1) return Matrix::Zero(1, dim);
  if (k <= dim) {
    const Matrix rotation = random_orthonormal(dim, dim, rng);
    Matrix simplex = Matrix::Zero(k, dim);
    for (int j = 0; j < k; ++j) simplex(j, j) = separation / std::sqrt(2.0);
    // Center so the mixture sits around the origin.
    simplex.rowwise() -= simplex.colwise().mean();
    return simplex * rotation.transpose();
  }
  Matrix means = gaussian_matrix(k, dim, rng);
  const Matrix d2 = pairwise_sqdist(means, means);
  double min_d = INFINITY;
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) min_d = std::min(min_d, std::sqrt(d2(a, b)));
  }
  return min_d > 0.0 ? Matrix(means * (separation / min_d)) : means;
}

}  // namespace detail

inline SynthData synth(const SynthConfig& config, RngStream& rng) {
  config.validate();
  RngStream mean_rng = rng.split(1);
  RngStream label_rng = rng.split(2);
  RngStream latent_rng = rng.split(3);
  RngStream view_rng = rng.split(4);

  const Index n = config.samples;
  const Matrix means = detail::cluster_means(config.clusters, config.latent_dim, config.separation, mean_rng);

  // Balanced labels in random order.
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) labels[i] = static_cast<int>(i % config.clusters);
  label_rng.shuffle(std::span<int>(labels));

  SynthData out;
  out.latent.resize(n, config.latent_dim);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < config.latent_dim; ++c) {
      out.latent(i, c) = means(labels[i], c) + config.noise * latent_rng.normal();
    }
  }

  std::vector<SampleId> ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    ids[i] = i;
    out.labels.emplace(i, labels[i]);
  }

  for (int m = 0; m < config.views; ++m) {
    RngStream vr = view_rng.split(static_cast<std::uint64_t>(m));
    const Index d = config.view_dims[m];
    Matrix a = detail::random_orthonormal(d, config.latent_dim, vr);
    if (config.gain_floor < 1.0) {
      // A = U diag(g) V^T with a random rotation V of the latent space.
      const Matrix v = detail::random_orthonormal(config.latent_dim, config.latent_dim, vr);
      Eigen::VectorXd gains(config.latent_dim);
      for (Index c = 0; c < config.latent_dim; ++c) gains[c] = vr.uniform(config.gain_floor, 1.0);
      if (d >= config.latent_dim) {
        a = a * gains.asDiagonal() * v.transpose();
      } else {
        a = (a.transpose() * gains.head(d).asDiagonal()).transpose() * v.transpose();
      }
    }
    RowVector b(d);
    for (Index c = 0; c < d; ++c) b[c] = vr.normal();
    Matrix x = out.latent * a.transpose();
    x.rowwise() += b;
    if (config.nonlinear && config.separation > 0.0) {
      const double s = config.separation;
      x = (s * (x.array() / s).tanh()).matrix();
    }
    for (Index i = 0; i < x.size(); ++i) x.data()[i] += config.noise * vr.normal();
    ViewDataset view;
    view.view = m;
    view.ids = ids;
    view.x = std::move(x);
    out.data.views.push_back(std::move(view));
  }
  return out;
}

}  // namespace fedmvc
