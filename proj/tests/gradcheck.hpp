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

// Finite-difference check of the local objective L_r + gamma * KL(P || Q)
// over encoder, decoder and centroid parameters. Shared by the unit and
// acceptance suites.

#include <algorithm>
#include <vector>

#include "fedmvc/client.hpp"
#include "oracles.hpp"

namespace gradcheck {

using fedmvc::Index;
using fedmvc::Matrix;

inline double composite_loss(const fedmvc::LocalModel& m, const Matrix& x, const Matrix& p, double gamma) {
  const Matrix z = oracle::mlp_forward(m.ae.encoder, x);
  const Matrix xhat = oracle::mlp_forward(m.ae.decoder, z);
  return (x - xhat).squaredNorm() + gamma * oracle::kl_sum(p, oracle::student_t(z, m.centroids));
}

// 3-layer encoder and decoder, at most 16 units per layer.
inline fedmvc::LocalModel random_model(fedmvc::Activation act, fedmvc::RngStream& rng, Index in = 6,
                                       Index embed = 4, int k = 3) {
  const std::vector<Index> enc = {in, 16, 12, embed};
  const std::vector<Index> dec = {embed, 12, 16, in};
  fedmvc::LocalModel m;
  m.ae.encoder = fedmvc::make_mlp(enc, act, rng);
  m.ae.decoder = fedmvc::make_mlp(dec, act, rng);
  for (auto* mlp : {&m.ae.encoder, &m.ae.decoder}) {
    for (auto& layer : mlp->layers) {
      for (Index j = 0; j < layer.bias.size(); ++j) layer.bias[j] = 0.1 * rng.normal();
    }
  }
  m.centroids = oracle::random_matrix(k, embed, rng, 0.5);
  return m;
}

// Largest relative error over every parameter entry.
inline double max_error(fedmvc::LocalModel m, const Matrix& x, const Matrix& p, double gamma) {
  const fedmvc::LocalGradient g = fedmvc::local_loss_and_grad(m, x, &p, gamma);
  const auto loss = [&] { return composite_loss(m, x, p, gamma); };
  double worst = 0.0;
  const std::pair<fedmvc::MlpParams*, const fedmvc::MlpGradient*> nets[] = {{&m.ae.encoder, &g.ae.encoder},
                                                                            {&m.ae.decoder, &g.ae.decoder}};
  for (auto [mlp, grad] : nets) {
    for (std::size_t l = 0; l < mlp->layers.size(); ++l) {
      worst = std::max(worst, oracle::max_rel_error(grad->weight[l],
                                                    oracle::numeric_grad(mlp->layers[l].weight, loss)));
      Matrix b = mlp->layers[l].bias;
      const auto loss_b = [&] {
        mlp->layers[l].bias = b.row(0);
        return loss();
      };
      const Matrix nb = oracle::numeric_grad(b, loss_b);
      mlp->layers[l].bias = b.row(0);
      worst = std::max(worst, oracle::max_rel_error(grad->bias[l], nb));
    }
  }
  if (gamma > 0.0) {
    worst = std::max(worst, oracle::max_rel_error(g.centroids, oracle::numeric_grad(m.centroids, loss)));
  }
  return worst;
}

}  // namespace gradcheck
