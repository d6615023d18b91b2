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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"

namespace fedmvc {

enum class Activation : std::uint8_t { kRelu = 0, kTanh = 1, kLinear = 2 };

// y = act(x W + b); W is in x out so a batch is one row-major GEMM.
struct DenseLayer {
  Matrix weight;
  RowVector bias;
  Activation activation = Activation::kLinear;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  Index input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  Index output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

  void validate() const {
    if (layers.empty()) throw ContractViolation("MlpParams: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      if (layer.bias.size() != layer.weight.cols()) {
        throw ContractViolation("MlpParams: bias width mismatch in layer " + std::to_string(l));
      }
      if (l > 0 && layers[l - 1].weight.cols() != layer.weight.rows()) {
        throw ContractViolation("MlpParams: layer " + std::to_string(l) +
                                " does not chain with its predecessor");
      }
    }
    if (layers.back().activation != Activation::kLinear) {
      throw ContractViolation("MlpParams: final layer must be linear");
    }
  }

  bool operator==(const MlpParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& a = layers[l];
      const auto& b = other.layers[l];
      if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
          a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size() ||
          a.weight != b.weight || a.bias != b.bias) {
        return false;
      }
    }
    return true;
  }
};

struct AeConfig {
  Index input_dim = 0;
  Index embed_dim = 10;
  std::vector<Index> hidden = {256, 64};
  double learning_rate = 1e-4;
  Index batch_size = 256;
  int pretrain_iters = 500;
  double momentum = 0.0;

  void validate() const {
    if (input_dim < 1 || embed_dim < 1) throw ContractViolation("AeConfig: dims must be >= 1");
    for (Index h : hidden) {
      if (h < 1) throw ContractViolation("AeConfig: hidden sizes must be >= 1");
    }
    if (!(learning_rate > 0.0)) throw ContractViolation("AeConfig: learning rate must be > 0");
    if (batch_size < 1) throw ContractViolation("AeConfig: batch size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw ContractViolation("AeConfig: momentum in [0,1)");
  }
};

struct Autoencoder {
  MlpParams encoder;
  MlpParams decoder;

  bool operator==(const Autoencoder&) const = default;
};

// Glorot-uniform weights, zero biases. dims = {in, h1, ..., out}.
inline MlpParams make_mlp(std::span<const Index> dims, Activation hidden, RngStream& rng) {
  if (dims.size() < 2) throw ContractViolation("make_mlp: need at least input and output dims");
  MlpParams mlp;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index fan_in = dims[l];
    const Index fan_out = dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer;
    layer.weight.resize(fan_in, fan_out);
    for (Index i = 0; i < fan_in; ++i) {
      for (Index j = 0; j < fan_out; ++j) layer.weight(i, j) = rng.uniform(-limit, limit);
    }
    layer.bias = RowVector::Zero(fan_out);
    layer.activation = (l + 2 == dims.size()) ? Activation::kLinear : hidden;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

// Encoder input -> hidden... -> embed; decoder mirrors it.
inline Autoencoder make_autoencoder(const AeConfig& config, RngStream& rng) {
  config.validate();
  std::vector<Index> enc_dims;
  enc_dims.push_back(config.input_dim);
  enc_dims.insert(enc_dims.end(), config.hidden.begin(), config.hidden.end());
  enc_dims.push_back(config.embed_dim);
  std::vector<Index> dec_dims(enc_dims.rbegin(), enc_dims.rend());
  Autoencoder ae;
  ae.encoder = make_mlp(enc_dims, Activation::kRelu, rng);
  ae.decoder = make_mlp(dec_dims, Activation::kRelu, rng);
  return ae;
}

namespace detail {

inline void activate(Matrix& m, Activation act) {
  switch (act) {
    case Activation::kRelu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::kTanh:
      m = m.array().tanh().matrix();
      break;
    case Activation::kLinear:
      break;
  }
}

// dL/dpre given dL/dout, the pre-activation and the activation output.
inline void activation_backward(Matrix& grad, const Matrix& pre, const Matrix& out,
                                Activation act) {
  switch (act) {
    case Activation::kRelu:
      grad = (pre.array() > 0.0).select(grad, 0.0);
      break;
    case Activation::kTanh:
      grad.array() *= 1.0 - out.array().square();
      break;
    case Activation::kLinear:
      break;
  }
}

}  // namespace detail

// Per-layer values retained for backpropagation. inputs[l] feeds layer l,
// pre[l] is its pre-activation; inputs.back() is the network output.
struct ForwardTrace {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;

  const Matrix& output() const { return inputs.back(); }
};

inline ForwardTrace forward_trace(const MlpParams& mlp, const Matrix& x) {
  if (x.cols() != mlp.input_dim()) {
    throw ContractViolation("forward: input has " + std::to_string(x.cols()) +
                            " columns, network expects " + std::to_string(mlp.input_dim()));
  }
  ForwardTrace trace;
  trace.inputs.reserve(mlp.layers.size() + 1);
  trace.pre.reserve(mlp.layers.size());
  trace.inputs.push_back(x);
  for (const auto& layer : mlp.layers) {
    Matrix pre = trace.inputs.back() * layer.weight;
    pre.rowwise() += layer.bias;
    Matrix out = pre;
    detail::activate(out, layer.activation);
    trace.pre.push_back(std::move(pre));
    trace.inputs.push_back(std::move(out));
  }
  return trace;
}

inline Matrix forward(const MlpParams& mlp, const Matrix& x) {
  if (x.cols() != mlp.input_dim()) {
    throw ContractViolation("forward: input has " + std::to_string(x.cols()) +
                            " columns, network expects " + std::to_string(mlp.input_dim()));
  }
  Matrix h = x;
  for (const auto& layer : mlp.layers) {
    Matrix next = h * layer.weight;
    next.rowwise() += layer.bias;
    detail::activate(next, layer.activation);
    h = std::move(next);
  }
  return h;
}

inline Matrix encode(const MlpParams& encoder, const Matrix& x) { return forward(encoder, x); }
inline Matrix decode(const MlpParams& decoder, const Matrix& z) { return forward(decoder, z); }

// Sum over samples of squared reconstruction error (not a mean).
inline double recon_loss(const Matrix& x, const Matrix& xhat) {
  require_same_shape(x, xhat, "recon_loss");
  return (x - xhat).squaredNorm();
}

inline Matrix recon_loss_grad(const Matrix& x, const Matrix& xhat) {
  require_same_shape(x, xhat, "recon_loss_grad");
  return 2.0 * (xhat - x);
}

struct MlpGradient {
  std::vector<Matrix> weight;
  std::vector<RowVector> bias;
  Matrix input;  // dL/d(network input)
};

inline MlpGradient backward(const MlpParams& mlp, const ForwardTrace& trace,
                            const Matrix& out_grad) {
  const auto& out = trace.output();
  if (out_grad.rows() != out.rows() || out_grad.cols() != out.cols()) {
    throw ContractViolation("backward: gradient shape does not match network output");
  }
  const std::size_t n_layers = mlp.layers.size();
  MlpGradient g;
  g.weight.resize(n_layers);
  g.bias.resize(n_layers);
  Matrix delta = out_grad;
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& layer = mlp.layers[l];
    detail::activation_backward(delta, trace.pre[l], trace.inputs[l + 1], layer.activation);
    g.weight[l].noalias() = trace.inputs[l].transpose() * delta;
    g.bias[l] = delta.colwise().sum();
    Matrix next = delta * layer.weight.transpose();
    delta = std::move(next);
  }
  g.input = std::move(delta);
  return g;
}

inline bool gradient_finite(const MlpGradient& g) {
  for (const auto& w : g.weight) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : g.bias) {
    if (!b.allFinite()) return false;
  }
  return true;
}

// Heavy-ball momentum buffers for one parameter set. momentum == 0 is plain
// gradient descent.
struct SgdState {
  double momentum = 0.0;
  std::vector<Matrix> weight_velocity;
  std::vector<RowVector> bias_velocity;
};

inline void sgd_update(MlpParams& mlp, const MlpGradient& g, double lr, SgdState* state = nullptr,
                       long step = -1) {
  if (g.weight.size() != mlp.layers.size() || g.bias.size() != mlp.layers.size()) {
    throw ContractViolation("sgd_update: gradient layer count mismatch");
  }
  if (!gradient_finite(g)) throw Divergence("non-finite gradient", step);
  const bool use_momentum = state != nullptr && state->momentum > 0.0;
  if (use_momentum && state->weight_velocity.size() != mlp.layers.size()) {
    state->weight_velocity.clear();
    state->bias_velocity.clear();
    for (const auto& layer : mlp.layers) {
      state->weight_velocity.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
      state->bias_velocity.push_back(RowVector::Zero(layer.bias.size()));
    }
  }
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    auto& layer = mlp.layers[l];
    if (g.weight[l].rows() != layer.weight.rows() || g.weight[l].cols() != layer.weight.cols() ||
        g.bias[l].size() != layer.bias.size()) {
      throw ContractViolation("sgd_update: gradient shape mismatch in layer " + std::to_string(l));
    }
    if (use_momentum) {
      auto& vw = state->weight_velocity[l];
      auto& vb = state->bias_velocity[l];
      vw = state->momentum * vw + g.weight[l];
      vb = state->momentum * vb + g.bias[l];
      layer.weight -= lr * vw;
      layer.bias -= lr * vb;
    } else {
      layer.weight -= lr * g.weight[l];
      layer.bias -= lr * g.bias[l];
    }
  }
}

// One descent step given dL/d(outputs) for the batch `inputs`.
inline MlpParams grad_step(MlpParams params, const Matrix& out_grad, const Matrix& inputs,
                           double lr) {
  const ForwardTrace trace = forward_trace(params, inputs);
  const MlpGradient g = backward(params, trace, out_grad);
  sgd_update(params, g, lr);
  return params;
}

// Cycles through a random permutation of [0, n), reshuffling after each pass.
// Batches never straddle two passes, so a pass of n = 300 with batch 256
// yields one batch of 256 and one of 44.
class BatchSampler {
 public:
  BatchSampler(Index n, Index batch_size) : batch_(std::min(batch_size, n)), order_(n) {
    if (n < 1) throw ContractViolation("BatchSampler: empty dataset");
    std::iota(order_.begin(), order_.end(), Index{0});
    cursor_ = n;
  }

  std::vector<Index> next(RngStream& rng) {
    if (cursor_ >= static_cast<Index>(order_.size())) {
      rng.shuffle(std::span<Index>(order_));
      cursor_ = 0;
      ++passes_;
    }
    const Index end = std::min<Index>(cursor_ + batch_, static_cast<Index>(order_.size()));
    std::vector<Index> batch(order_.begin() + cursor_, order_.begin() + end);
    cursor_ = end;
    return batch;
  }

  bool full_batch() const { return batch_ == static_cast<Index>(order_.size()); }
  long passes() const { return passes_; }

 private:
  Index batch_;
  std::vector<Index> order_;
  Index cursor_ = 0;
  long passes_ = 0;
};

inline Matrix gather_rows(const Matrix& m, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

// Gradients of the sum-of-squares reconstruction loss for a whole autoencoder.
struct AeGradient {
  double loss = 0.0;
  MlpGradient encoder;
  MlpGradient decoder;
};

// Reconstruction loss and gradients; `extra_embed_grad`, when non-null, is
// added to dL/dZ before it is propagated through the encoder, which is how
// clustering terms join the objective.
inline AeGradient ae_loss_and_grad(const Autoencoder& ae, const Matrix& x,
                                   const Matrix* extra_embed_grad = nullptr,
                                   const ForwardTrace* enc_trace_in = nullptr) {
  ForwardTrace enc_local;
  if (enc_trace_in == nullptr) enc_local = forward_trace(ae.encoder, x);
  const ForwardTrace& enc_trace = enc_trace_in ? *enc_trace_in : enc_local;
  const ForwardTrace dec_trace = forward_trace(ae.decoder, enc_trace.output());
  AeGradient out;
  out.loss = recon_loss(x, dec_trace.output());
  out.decoder = backward(ae.decoder, dec_trace, recon_loss_grad(x, dec_trace.output()));
  Matrix dz = out.decoder.input;
  if (extra_embed_grad != nullptr) dz += *extra_embed_grad;
  out.encoder = backward(ae.encoder, enc_trace, dz);
  return out;
}

struct PretrainResult {
  Autoencoder ae;
  std::vector<double> loss_trace;  // per-step batch loss
};

// T0 minibatch steps on the reconstruction loss alone.
inline PretrainResult pretrain(Autoencoder ae, const Matrix& x, const AeConfig& config,
                               RngStream& rng) {
  if (config.pretrain_iters < 1) throw ContractViolation("pretrain: T0 must be >= 1");
  config.validate();
  if (x.cols() != ae.encoder.input_dim()) {
    throw ContractViolation("pretrain: data width does not match encoder input");
  }
  BatchSampler sampler(x.rows(), config.batch_size);
  SgdState enc_state{config.momentum, {}, {}};
  SgdState dec_state{config.momentum, {}, {}};
  PretrainResult result;
  result.loss_trace.reserve(static_cast<std::size_t>(config.pretrain_iters));
  for (int step = 0; step < config.pretrain_iters; ++step) {
    const auto batch = sampler.next(rng);
    const Matrix xb = sampler.full_batch() ? x : gather_rows(x, batch);
    const AeGradient g = ae_loss_and_grad(ae, xb);
    if (!std::isfinite(g.loss)) throw Divergence("pretrain: non-finite loss", step);
    result.loss_trace.push_back(g.loss);
    sgd_update(ae.decoder, g.decoder, config.learning_rate, &dec_state, step);
    sgd_update(ae.encoder, g.encoder, config.learning_rate, &enc_state, step);
  }
  result.ae = std::move(ae);
  return result;
}

}  // namespace fedmvc
