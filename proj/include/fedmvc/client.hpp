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
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedmvc/alignment.hpp"
#include "fedmvc/autoencoder.hpp"
#include "fedmvc/clustering.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"
#include "fedmvc/protocol.hpp"

namespace fedmvc {

struct ClientConfig {
  int clusters = 2;
  double gamma = 0.1;    // weight of the clustering loss
  int local_iters = 100;  // T1
  AeConfig ae;
  KMeansOptions kmeans;

  void validate() const {
    if (clusters < 1) throw ContractViolation("ClientConfig: K must be >= 1");
    if (!(gamma >= 0.0)) throw ContractViolation("ClientConfig: gamma must be >= 0");
    if (local_iters < 0) throw ContractViolation("ClientConfig: T1 must be >= 0");
    ae.validate();
  }
};

struct LocalModel {
  Autoencoder ae;
  Centroids centroids;  // K x d_m, trainable
  ClientConfig config;
  int view = 0;

  bool operator==(const LocalModel& o) const {
    return view == o.view && ae == o.ae && same_matrix(centroids, o.centroids);
  }
};

// Pseudo-label rows for this client's samples, in the client's row order.
struct LocalPseudoLabels {
  SoftAssignment p;
};

// Pretrain on reconstruction only, then seed the local centroids with
// k-means on the pretrained embeddings.
inline LocalModel init_round_one(const ViewDataset& data, ClientConfig config, RngStream& rng) {
  data.validate();
  config.ae.input_dim = data.width();
  config.validate();
  if (data.size() < config.clusters) {
    throw InsufficientPoints("client " + std::to_string(data.view) + " holds " +
                             std::to_string(data.size()) + " samples for K = " +
                             std::to_string(config.clusters));
  }
  RngStream init_rng = rng.split(1);
  RngStream train_rng = rng.split(2);
  RngStream kmeans_rng = rng.split(3);
  LocalModel model;
  model.view = data.view;
  model.config = config;
  model.ae = pretrain(make_autoencoder(config.ae, init_rng), data.x, config.ae, train_rng).ae;
  const Matrix z = encode(model.ae.encoder, data.x);
  model.centroids = kmeans(z, config.clusters, kmeans_rng, config.kmeans).centroids;
  return model;
}

// U^m <- this view's column block of the global prototypes.
inline LocalModel set_prototypes(LocalModel model, const GlobalPrototypes& prototypes) {
  if (static_cast<std::size_t>(model.view) >= prototypes.view_dims.size()) {
    throw ContractViolation("set_prototypes: prototypes have no block for view " +
                            std::to_string(model.view));
  }
  Matrix slice = prototypes.slice(static_cast<std::size_t>(model.view));
  if (slice.cols() != model.ae.encoder.output_dim()) {
    throw ContractViolation("set_prototypes: slice width " + std::to_string(slice.cols()) +
                            " != embedding width " +
                            std::to_string(model.ae.encoder.output_dim()));
  }
  if (slice.rows() != model.centroids.rows()) {
    throw ContractViolation("set_prototypes: prototype count differs from K");
  }
  model.centroids = std::move(slice);
  return model;
}

// Selects the rows of the global pseudo-labels that belong to `ids`.
inline LocalPseudoLabels map_pseudo_labels(const SoftAssignment& p,
                                           const std::vector<SampleId>& global_ids,
                                           const std::vector<SampleId>& ids) {
  if (static_cast<std::size_t>(p.rows()) != global_ids.size()) {
    throw ContractViolation("map_pseudo_labels: P rows != global id count");
  }
  std::unordered_map<SampleId, Index> row_of;
  row_of.reserve(global_ids.size());
  for (std::size_t i = 0; i < global_ids.size(); ++i) {
    row_of.emplace(global_ids[i], static_cast<Index>(i));
  }
  LocalPseudoLabels out;
  out.p.resize(static_cast<Index>(ids.size()), p.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto it = row_of.find(ids[r]);
    if (it == row_of.end()) {
      throw MissingSample("map_pseudo_labels: sample " + std::to_string(ids[r]) +
                          " is not in the global index");
    }
    out.p.row(static_cast<Index>(r)) = p.row(it->second);
  }
  return out;
}

// Permutes pseudo-label columns onto the client's own cluster order, using
// only local quantities. A no-op once the client's centroids come from the
// global prototypes, whose order the pseudo-labels already follow.
inline LocalPseudoLabels align_pseudo_labels(const LocalPseudoLabels& labels,
                                             const SoftAssignment& local_q) {
  const int k = static_cast<int>(local_q.cols());
  const Permutation perm =
      hungarian(cost_from_confusion(confusion(predict(labels.p), predict(local_q), k)));
  return LocalPseudoLabels{perm.apply_columns(labels.p)};
}

// KL(P || Q) summed over rows, with 0 log 0 = 0.
inline double clustering_loss(const SoftAssignment& p, const SoftAssignment& q) {
  require_same_shape(p, q, "clustering_loss");
  double total = 0.0;
  for (Index i = 0; i < p.rows(); ++i) {
    for (Index j = 0; j < p.cols(); ++j) {
      const double pij = p(i, j);
      if (pij > 0.0) total += pij * std::log(pij / q(i, j));
    }
  }
  return total;
}

struct ClusteringGradient {
  double loss = 0.0;
  Matrix embed;      // dL/dZ
  Matrix centroids;  // dL/dU
};

// KL(P || Q) with Q the Student's t assignment of z to u, and its gradient.
// With w_ij = 1 / (1 + |z_i - u_j|^2):
//   dL/dz_i =  2 sum_j w_ij (p_ij - q_ij)(z_i - u_j)
//   dL/du_j = -2 sum_i w_ij (p_ij - q_ij)(z_i - u_j)
inline ClusteringGradient clustering_loss_grad(const Matrix& z, const Centroids& u,
                                               const SoftAssignment& p) {
  if (p.rows() != z.rows() || p.cols() != u.rows()) {
    throw ContractViolation("clustering_loss_grad: P shape does not match Z and U");
  }
  const Matrix d2 = pairwise_sqdist(z, u);
  const Matrix w = (1.0 + d2.array()).inverse().matrix();
  const SoftAssignment q = row_normalize(w);
  ClusteringGradient g;
  g.loss = clustering_loss(p, q);
  const Matrix coeff = 2.0 * (w.array() * (p - q).array()).matrix();  // n x K
  // sum_j c_ij (z_i - u_j) = z_i * rowsum(c)_i - (C U)_i
  g.embed = z.array().colwise() * coeff.rowwise().sum().array();
  g.embed.noalias() -= coeff * u;
  // -sum_i c_ij (z_i - u_j) = u_j * colsum(c)_j - (C^T Z)_j
  g.centroids = u.array().colwise() * coeff.colwise().sum().transpose().array();
  g.centroids.noalias() -= coeff.transpose() * z;
  return g;
}

struct LocalLoss {
  double recon = 0.0;
  double cluster = 0.0;
  double total = 0.0;
};

struct LocalGradient {
  LocalLoss loss;
  AeGradient ae;
  Matrix centroids;  // empty when no clustering term is active
};

// L = L_r + gamma * KL(P || Q) on one batch. `p` null or gamma == 0 leaves
// only the reconstruction term, bit for bit.
inline LocalGradient local_loss_and_grad(const LocalModel& model, const Matrix& x,
                                         const SoftAssignment* p, double gamma) {
  LocalGradient out;
  const bool clustering = p != nullptr && gamma > 0.0;
  if (!clustering) {
    out.ae = ae_loss_and_grad(model.ae, x);
    out.loss.recon = out.ae.loss;
    out.loss.total = out.ae.loss;
    return out;
  }
  const ForwardTrace enc = forward_trace(model.ae.encoder, x);
  ClusteringGradient cg = clustering_loss_grad(enc.output(), model.centroids, *p);
  const Matrix extra = gamma * cg.embed;
  out.ae = ae_loss_and_grad(model.ae, x, &extra, &enc);
  out.loss.recon = out.ae.loss;
  out.loss.cluster = cg.loss;
  out.loss.total = out.loss.recon + gamma * cg.loss;
  out.centroids = gamma * cg.centroids;
  return out;
}

struct LocalTrainResult {
  LocalModel model;
  std::vector<LocalLoss> trace;  // per-step batch losses
};

// T1 minibatch steps on L_r + gamma L_c, jointly over encoder, decoder and
// centroids. Without pseudo-labels the clustering term is dropped.
inline LocalTrainResult local_train(LocalModel model, const ViewDataset& data,
                                    const std::optional<LocalPseudoLabels>& pseudo, int iters,
                                    RngStream& rng) {
  if (iters < 0) throw ContractViolation("local_train: T1 must be >= 0");
  if (data.width() != model.ae.encoder.input_dim()) {
    throw ContractViolation("local_train: data width does not match the model");
  }
  if (pseudo && (pseudo->p.rows() != data.size() || pseudo->p.cols() != model.centroids.rows())) {
    throw ContractViolation("local_train: pseudo-labels do not match the client's samples");
  }
  const AeConfig& ae_cfg = model.config.ae;
  const double gamma = pseudo ? model.config.gamma : 0.0;
  const double lr = ae_cfg.learning_rate;
  BatchSampler sampler(data.size(), ae_cfg.batch_size);
  SgdState enc_state{ae_cfg.momentum, {}, {}};
  SgdState dec_state{ae_cfg.momentum, {}, {}};
  Matrix centroid_velocity = Matrix::Zero(model.centroids.rows(), model.centroids.cols());

  LocalTrainResult result;
  result.trace.reserve(static_cast<std::size_t>(iters));
  for (int step = 0; step < iters; ++step) {
    const auto batch = sampler.next(rng);
    const bool full = sampler.full_batch();
    const Matrix xb = full ? data.x : gather_rows(data.x, batch);
    SoftAssignment pb;
    if (pseudo && gamma > 0.0) pb = full ? pseudo->p : gather_rows(pseudo->p, batch);
    const LocalGradient g =
        local_loss_and_grad(model, xb, (pseudo && gamma > 0.0) ? &pb : nullptr, gamma);
    if (!std::isfinite(g.loss.total)) throw Divergence("local_train: non-finite loss", step);
    result.trace.push_back(g.loss);
    sgd_update(model.ae.decoder, g.ae.decoder, lr, &dec_state, step);
    sgd_update(model.ae.encoder, g.ae.encoder, lr, &enc_state, step);
    if (g.centroids.size() > 0) {
      if (!g.centroids.allFinite()) throw Divergence("local_train: non-finite centroid gradient", step);
      if (ae_cfg.momentum > 0.0) {
        centroid_velocity = ae_cfg.momentum * centroid_velocity + g.centroids;
        model.centroids -= lr * centroid_velocity;
      } else {
        model.centroids -= lr * g.centroids;
      }
    }
  }
  result.model = std::move(model);
  return result;
}

inline ClientUpload make_upload(const LocalModel& model, const ViewDataset& data) {
  ClientUpload up;
  up.view = data.view;
  up.ids = data.ids;
  up.z = encode(model.ae.encoder, data.x);
  up.q = student_t_assign(up.z, model.centroids);
  return up;
}

}  // namespace fedmvc
