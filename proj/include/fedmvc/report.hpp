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
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmvc/dataset.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/federation.hpp"
#include "fedmvc/metrics.hpp"

namespace fedmvc {

// metrics.json layout. Every key is always present; scores are null when the
// run had no labels. Wall-clock timings are left out so identical runs
// produce identical files.
inline constexpr int kReportSchemaVersion = 1;

namespace detail {

inline nlohmann::json scores_json(const std::optional<ClusterScores>& s) {
  if (!s) return {{"acc", nullptr}, {"nmi", nullptr}, {"ari", nullptr}};
  return {{"acc", s->acc}, {"nmi", s->nmi}, {"ari", s->ari}};
}

inline const char* solver_name(PatternSolver s) {
  return s == PatternSolver::kClosedForm ? "closed-form" : "gradient";
}

}  // namespace detail

inline nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json j;
  j["clusters"] = c.clusters;
  j["epochs"] = c.epochs;
  j["local_iters"] = c.local_iters;
  j["extension_iters"] = c.extension_iters;
  j["gamma"] = c.gamma;
  j["ridge_eps"] = c.ridge_eps;
  j["overlap"] = c.overlap;
  j["dirichlet_alpha"] = c.dirichlet_alpha ? nlohmann::json(*c.dirichlet_alpha) : nlohmann::json(nullptr);
  j["seed"] = c.seed;
  j["ablation"] = to_string(c.ablation);
  j["anchor"] = c.anchor;
  j["standardize"] = c.standardize;
  j["pattern_solver"] = detail::solver_name(c.pattern_solver);
  j["autoencoder"] = {{"embed_dim", c.ae.embed_dim},
                      {"hidden", c.ae.hidden},
                      {"learning_rate", c.ae.learning_rate},
                      {"batch_size", c.ae.batch_size},
                      {"pretrain_iters", c.ae.pretrain_iters},
                      {"momentum", c.ae.momentum}};
  j["kmeans"] = {{"max_iter", c.kmeans.max_iter}, {"tol", c.kmeans.tol}, {"n_init", c.kmeans.n_init}};
  return j;
}

inline nlohmann::json build_report(const RunConfig& config, const RunResult& result) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  std::optional<ClusterScores> final_scores;
  if (!result.epochs.empty()) final_scores = result.epochs.back().global;
  const nlohmann::json s = detail::scores_json(final_scores);
  j["acc"] = s["acc"];
  j["nmi"] = s["nmi"];
  j["ari"] = s["ari"];
  j["nmi_normalization"] = "arithmetic";
  j["num_samples"] = result.ids.size();
  j["config"] = config_json(config);

  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : result.epochs) {
    nlohmann::json ej;
    ej["epoch"] = e.epoch;
    ej["global"] = detail::scores_json(e.global);
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& c : e.clients) {
      clients.push_back({{"view", c.view}, {"samples", c.samples}, {"scores", detail::scores_json(c.scores)}});
    }
    ej["clients"] = std::move(clients);
    const auto& d = e.diagnostics;
    ej["diagnostics"] = {
        {"imputation_fraction", d.imputation_fraction},
        {"pattern_residuals", d.pattern_residuals},
        {"kmeans_objective", d.kmeans_objective ? nlohmann::json(*d.kmeans_objective) : nlohmann::json(nullptr)},
        {"assignment_entropy", d.assignment_entropy},
        {"complete_samples", d.complete_samples}};
    history.push_back(std::move(ej));
  }
  j["history"] = std::move(history);
  return j;
}

inline void write_json(const std::filesystem::path& file, const nlohmann::json& j) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot open " + file.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + file.string());
}

// pred.csv: "id,label", sorted by id.
inline void write_predictions(const std::filesystem::path& file, const std::vector<SampleId>& ids,
                              const LabelVector& labels) {
  if (ids.size() != labels.size()) throw ContractViolation("write_predictions: length mismatch");
  LabelMap m;
  for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = labels[i];
  write_labels_csv(file, m);
}

// Pairs predictions with truth over the ids both files contain.
inline ClusterScores score_files(const LabelMap& pred, const LabelMap& truth) {
  std::vector<int> p, t;
  for (const auto& [id, label] : pred) {
    const auto it = truth.find(id);
    if (it == truth.end()) continue;
    p.push_back(label);
    t.push_back(it->second);
  }
  if (p.empty()) throw SchemaError("predictions and labels share no sample ids");
  return score(p, t);
}

}  // namespace fedmvc
