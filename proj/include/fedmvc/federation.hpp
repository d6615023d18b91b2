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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmvc/client.hpp"
#include "fedmvc/dataset.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/log.hpp"
#include "fedmvc/metrics.hpp"
#include "fedmvc/numerics.hpp"
#include "fedmvc/protocol.hpp"
#include "fedmvc/server.hpp"
#include "fedmvc/synth.hpp"
#include "fedmvc/wire.hpp"

namespace fedmvc {

// Experiment switches. kNoPseudo and kNoProto withhold one half of the
// broadcast from the clients; kNoExtension and kNoPatterns change how the
// server fills missing embeddings.
enum class Ablation : std::uint8_t { kNone, kNoPseudo, kNoProto, kNoExtension, kNoPatterns };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoPseudo: return "no-pseudo";
    case Ablation::kNoProto: return "no-proto";
    case Ablation::kNoExtension: return "no-extension";
    case Ablation::kNoPatterns: return "no-patterns";
  }
  return "none";
}

inline Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::kNone, Ablation::kNoPseudo, Ablation::kNoProto,
                     Ablation::kNoExtension, Ablation::kNoPatterns}) {
    if (s == to_string(a)) return a;
  }
  throw ContractViolation("unknown ablation '" + s + "'");
}

struct RunConfig {
  int clusters = 4;
  int epochs = 10;           // E
  int local_iters = 100;     // T1
  int extension_iters = 1;   // T2
  double gamma = 0.1;
  double ridge_eps = 1e-6;
  double overlap = 1.0;      // delta; used when partitioning complete data
  std::optional<double> dirichlet_alpha;
  std::uint64_t seed = 0;
  AeConfig ae;
  KMeansOptions kmeans;
  PatternSolver pattern_solver = PatternSolver::kClosedForm;
  double pattern_step_scale = 1.0;
  Ablation ablation = Ablation::kNone;
  std::size_t anchor = 0;
  bool concurrent = true;
  bool standardize = true;  // clients z-score their own features before training

  void validate() const {
    if (clusters < 1) throw ContractViolation("RunConfig: K must be >= 1");
    if (epochs < 1) throw ContractViolation("RunConfig: E must be >= 1");
    if (local_iters < 0 || extension_iters < 1) throw ContractViolation("RunConfig: bad iteration counts");
    if (!(gamma >= 0.0)) throw ContractViolation("RunConfig: gamma must be >= 0");
    if (!(ridge_eps >= 0.0)) throw ContractViolation("RunConfig: ridge eps must be >= 0");
    if (!(overlap >= 0.0 && overlap <= 1.0)) throw ContractViolation("RunConfig: overlap must be in [0, 1]");
    if (dirichlet_alpha && !(*dirichlet_alpha > 0.0)) {
      throw ContractViolation("RunConfig: Dirichlet alpha must be > 0");
    }
  }
};

// Wraps an error raised inside a run with where it happened; the original
// exception is nested (std::rethrow_if_nested).
class StageError : public Error {
 public:
  StageError(int epoch, std::string stage, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ", " + stage + ": " + what),
        epoch_(epoch),
        stage_(std::move(stage)) {}
  int epoch() const noexcept { return epoch_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  int epoch_;
  std::string stage_;
};

struct ClientReport {
  int view = 0;
  Index samples = 0;
  std::optional<ClusterScores> scores;  // local argmax Q^m vs truth
};

struct EpochReport {
  int epoch = 0;  // 1-based
  std::optional<ClusterScores> global;
  std::vector<ClientReport> clients;
  ServerDiagnostics diagnostics;
  double client_seconds = 0.0;
  double server_seconds = 0.0;
};

struct RunResult {
  std::vector<SampleId> ids;  // global row order
  LabelVector labels;         // final predictions
  std::vector<EpochReport> epochs;
};

// Observer for every serialized message crossing the client/server boundary.
struct RunHooks {
  std::function<void(MessageTag, std::span<const std::byte>)> on_message;
};

struct Partition {
  MultiViewData data;
  IndicatorMatrix h;  // rows follow ids
  std::vector<SampleId> ids;
};

// Splits complete multi-view data into per-client subsets. floor(overlap * N)
// samples, chosen uniformly, stay in every view. Each other sample keeps a
// nonempty proper subset of the views: uniform over subsets by default, or,
// with a Dirichlet alpha, a uniformly sized subset drawn without replacement
// using view weights from Dirichlet(alpha, ..., alpha).
inline Partition partition(const MultiViewData& full, double overlap,
                           std::optional<double> alpha, RngStream& rng) {
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw ContractViolation("partition: overlap outside [0, 1]");
  if (alpha && !(*alpha > 0.0)) throw ContractViolation("partition: alpha must be > 0");
  if (full.views.empty()) throw ContractViolation("partition: no views");
  const auto& ids = full.views.front().ids;
  for (const auto& v : full.views) {
    v.validate();
    if (v.ids != ids) throw ContractViolation("partition: views must hold the same samples in the same order");
  }
  const auto n = static_cast<Index>(ids.size());
  const auto m = static_cast<Index>(full.views.size());
  const auto n_full = static_cast<Index>(std::floor(overlap * static_cast<double>(n) + 1e-9));

  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<Index>(order));

  std::vector<double> weights;
  if (alpha && m > 1) weights = rng.dirichlet(static_cast<std::size_t>(m), *alpha);

  IndicatorMatrix h(n, m);
  for (Index r = 0; r < n; ++r) {
    const Index i = order[r];
    if (r < n_full || m == 1) {
      for (Index v = 0; v < m; ++v) h.set(i, v);
      continue;
    }
    if (!alpha) {
      // Uniform over the 2^M - 2 nonempty proper subsets.
      const std::uint64_t subsets = (std::uint64_t{1} << m) - 2;
      const std::uint64_t mask = 1 + rng.below(subsets);
      for (Index v = 0; v < m; ++v) {
        if (mask & (std::uint64_t{1} << v)) h.set(i, v);
      }
      continue;
    }
    const Index size = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(m - 1)));
    std::vector<double> w = weights;
    for (Index pick = 0; pick < size; ++pick) {
      double total = 0.0;
      for (double x : w) total += x;
      Index chosen = -1;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc_w = 0.0;
        for (Index v = 0; v < m; ++v) {
          acc_w += w[v];
          if (w[v] > 0.0 && acc_w > target) {
            chosen = v;
            break;
          }
        }
      }
      if (chosen < 0) {
        // Remaining weight underflowed: uniform over the views not yet taken.
        std::vector<Index> left;
        for (Index v = 0; v < m; ++v) {
          if (!h(i, v)) left.push_back(v);
        }
        chosen = left[rng.below(left.size())];
      }
      h.set(i, chosen);
      w[chosen] = 0.0;
    }
  }

  Partition out;
  out.h = h;
  out.ids = ids;
  for (Index v = 0; v < m; ++v) {
    ViewDataset view;
    view.view = static_cast<int>(v);
    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i) {
      if (h(i, v)) rows.push_back(i);
    }
    view.x = gather(full.views[v].x, rows);
    for (Index i : rows) view.ids.push_back(ids[i]);
    out.data.views.push_back(std::move(view));
  }
  return out;
}

namespace detail {

inline std::optional<ClusterScores> score_ids(const LabelVector& pred, const std::vector<SampleId>& ids,
                                              const LabelMap* truth) {
  if (truth == nullptr) return std::nullopt;
  std::vector<int> p, t;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = truth->find(ids[i]);
    if (it == truth->end()) continue;
    p.push_back(pred[i]);
    t.push_back(it->second);
  }
  if (p.empty()) return std::nullopt;
  return score(p, t);
}

template <typename Fn>
auto at_stage(int epoch, const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    std::throw_with_nested(StageError(epoch, stage, e.what()));
  }
}

}  // namespace detail

// Runs E epochs of the client/server protocol on already-partitioned data.
// Every upload and broadcast goes through serialize/deserialize. Randomness
// is split per (role, epoch), so concurrent and sequential client scheduling
// give identical results.
inline RunResult run(const MultiViewData& data, const RunConfig& config,
                     const LabelMap* truth = nullptr, const RunHooks& hooks = {}) {
  config.validate();
  if (data.views.empty()) throw ContractViolation("run: no views");
  const std::size_t num_views = data.views.size();
  for (std::size_t m = 0; m < num_views; ++m) {
    if (data.views[m].view != static_cast<int>(m)) {
      throw ContractViolation("run: view " + std::to_string(m) + " is out of order");
    }
    data.views[m].validate();
  }
  if (config.anchor >= num_views) throw ContractViolation("run: anchor is not a view");

  const RngStream master(config.seed);
  const RngStream server_root = master.split(1);
  std::vector<RngStream> client_roots;
  for (std::size_t m = 0; m < num_views; ++m) client_roots.push_back(master.split(100 + m));

  ClientConfig client_cfg;
  client_cfg.clusters = config.clusters;
  client_cfg.gamma = config.gamma;
  client_cfg.local_iters = config.local_iters;
  client_cfg.ae = config.ae;
  client_cfg.kmeans = config.kmeans;

  ServerConfig server_cfg;
  server_cfg.clusters = config.clusters;
  server_cfg.anchor = config.anchor;
  server_cfg.kmeans = config.kmeans;
  server_cfg.patterns.ridge_eps = config.ridge_eps;
  server_cfg.patterns.iters = config.extension_iters;
  server_cfg.patterns.solver = config.pattern_solver;
  server_cfg.patterns.step_scale = config.pattern_step_scale;
  if (config.ablation == Ablation::kNoExtension) server_cfg.extension = ExtensionMode::kNone;
  if (config.ablation == Ablation::kNoPatterns) server_cfg.extension = ExtensionMode::kPrototypesOnly;

  const auto emit = [&hooks](MessageTag tag, const Bytes& bytes) {
    if (hooks.on_message) hooks.on_message(tag, bytes);
  };

  // Each client's working copy of its data; statistics never leave the client.
  std::vector<ViewDataset> local_data = data.views;
  if (config.standardize) {
    for (auto& v : local_data) v.x = standardize_columns(v.x);
  }

  std::vector<LocalModel> models(num_views);
  Bytes broadcast_bytes;
  RunResult result;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochReport report;
    report.epoch = epoch;
    const auto t0 = std::chrono::steady_clock::now();

    // Client phase: each client reads only its own data and the broadcast.
    const auto client_step = [&](std::size_t m) -> Bytes {
      return detail::at_stage(epoch, "client", [&]() -> Bytes {
        const ViewDataset& view = local_data[m];
        RngStream rng = client_roots[m].split(static_cast<std::uint64_t>(epoch));
        if (epoch == 1) {
          models[m] = init_round_one(view, client_cfg, rng);
        } else {
          const Broadcast b = std::get<Broadcast>(deserialize(broadcast_bytes));
          LocalModel model = models[m];
          if (config.ablation != Ablation::kNoProto) model = set_prototypes(std::move(model), b.prototypes);
          std::optional<LocalPseudoLabels> pseudo;
          if (config.ablation != Ablation::kNoPseudo) {
            pseudo = map_pseudo_labels(b.p, b.ids, view.ids);
            // Local centroids keep the client's own cluster order.
            if (config.ablation == Ablation::kNoProto) {
              pseudo = align_pseudo_labels(*pseudo, make_upload(model, view).q);
            }
          }
          models[m] = local_train(std::move(model), view, pseudo, config.local_iters, rng).model;
        }
        return serialize(make_upload(models[m], view));
      });
    };

    std::vector<Bytes> upload_bytes(num_views);
    if (config.concurrent && num_views > 1) {
      std::vector<std::future<Bytes>> futures;
      for (std::size_t m = 0; m < num_views; ++m) {
        futures.push_back(std::async(std::launch::async, client_step, m));
      }
      // Collect every future before rethrowing so no task outlives the run.
      std::exception_ptr first_error;
      for (std::size_t m = 0; m < num_views; ++m) {
        try {
          upload_bytes[m] = futures[m].get();
        } catch (...) {
          if (!first_error) first_error = std::current_exception();
        }
      }
      if (first_error) std::rethrow_exception(first_error);
    } else {
      for (std::size_t m = 0; m < num_views; ++m) upload_bytes[m] = client_step(m);
    }
    const auto t1 = std::chrono::steady_clock::now();

    // Server phase.
    std::vector<ClientUpload> uploads;
    for (std::size_t m = 0; m < num_views; ++m) {
      emit(MessageTag::kUpload, upload_bytes[m]);
      uploads.push_back(detail::at_stage(epoch, "server receive", [&] {
        return std::get<ClientUpload>(deserialize(upload_bytes[m]));
      }));
    }
    RngStream server_rng = server_root.split(static_cast<std::uint64_t>(epoch));
    const ServerOutput out =
        detail::at_stage(epoch, "server", [&] { return server_epoch(uploads, server_cfg, server_rng); });
    broadcast_bytes = serialize(out.broadcast);
    emit(MessageTag::kBroadcast, broadcast_bytes);
    const auto t2 = std::chrono::steady_clock::now();

    report.client_seconds = std::chrono::duration<double>(t1 - t0).count();
    report.server_seconds = std::chrono::duration<double>(t2 - t1).count();
    report.diagnostics = out.diagnostics;
    report.global = detail::score_ids(out.labels, out.broadcast.ids, truth);
    for (std::size_t m = 0; m < num_views; ++m) {
      ClientReport cr;
      cr.view = static_cast<int>(m);
      cr.samples = static_cast<Index>(uploads[m].ids.size());
      cr.scores = detail::score_ids(predict(uploads[m].q), uploads[m].ids, truth);
      report.clients.push_back(cr);
    }
    if (report.global) {
      logger()->info("epoch {}/{}: acc {:.4f} nmi {:.4f} ari {:.4f} (clients {:.2f}s, server {:.2f}s)",
                     epoch, config.epochs, report.global->acc, report.global->nmi, report.global->ari,
                     report.client_seconds, report.server_seconds);
    } else {
      logger()->info("epoch {}/{} done (clients {:.2f}s, server {:.2f}s)", epoch, config.epochs,
                     report.client_seconds, report.server_seconds);
    }
    result.epochs.push_back(std::move(report));
    result.ids = out.broadcast.ids;
    result.labels = out.labels;
  }
  return result;
}

struct SyntheticRun {
  RunResult result;
  Partition partition;
  LabelMap truth;
};

// synth -> partition(overlap, alpha) -> run, all seeded from config.seed.
inline SyntheticRun run_synthetic(const SynthConfig& synth_config, const RunConfig& config,
                                  const RunHooks& hooks = {}) {
  config.validate();
  const RngStream master(config.seed);
  RngStream synth_rng = master.split(3);
  RngStream partition_rng = master.split(2);
  SynthData full = synth(synth_config, synth_rng);
  SyntheticRun out;
  out.partition = partition(full.data, config.overlap, config.dirichlet_alpha, partition_rng);
  out.truth = std::move(full.labels);
  out.result = run(out.partition.data, config, &out.truth, hooks);
  return out;
}

}  // namespace fedmvc
