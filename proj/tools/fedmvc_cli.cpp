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


// fedmvc command line: synth | run | eval.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedmvc/fedmvc.hpp"

namespace {

void print_error(const std::exception& e, int depth = 0) {
  std::cerr << (depth == 0 ? "error: " : "  caused by: ") << e.what() << '\n';
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    print_error(inner, depth + 1);
  } catch (...) {
  }
}

struct SynthArgs {
  fedmvc::SynthConfig synth;
  double overlap = 0.5;
  std::optional<double> alpha;
  std::uint64_t seed = 0;
  std::string out;
};

struct RunArgs {
  fedmvc::RunConfig config;
  std::string data;
  std::string out = "metrics.json";
  std::string pred;
  std::string ablate = "none";
  std::string solver = "closed-form";
  bool sequential = false;
  bool no_standardize = false;
};

struct EvalArgs {
  std::string pred;
  std::string labels;
};

int do_synth(const SynthArgs& a) {
  // Same seed layout as run_synthetic, so synth + run reproduces it.
  const fedmvc::RngStream master(a.seed);
  fedmvc::RngStream synth_rng = master.split(3);
  fedmvc::RngStream partition_rng = master.split(2);
  const fedmvc::SynthData full = fedmvc::synth(a.synth, synth_rng);
  const fedmvc::Partition part = fedmvc::partition(full.data, a.overlap, a.alpha, partition_rng);
  fedmvc::write_dataset(a.out, part.data, full.labels);
  std::cout << "wrote " << part.ids.size() << " samples, " << part.data.num_views() << " views, "
            << part.h.complete_rows().size() << " complete to " << a.out << '\n';
  return 0;
}

int do_run(RunArgs a) {
  a.config.ablation = fedmvc::parse_ablation(a.ablate);
  if (a.solver == "closed-form") {
    a.config.pattern_solver = fedmvc::PatternSolver::kClosedForm;
  } else if (a.solver == "gradient") {
    a.config.pattern_solver = fedmvc::PatternSolver::kGradient;
  } else {
    throw fedmvc::ContractViolation("unknown pattern solver '" + a.solver + "'");
  }
  a.config.concurrent = !a.sequential;
  a.config.standardize = !a.no_standardize;

  const fedmvc::LoadedDataset ds = fedmvc::load_dataset(a.data);
  // Record the observed overlap rather than the partitioning parameter.
  const auto ids = ds.data.global_ids();
  std::map<fedmvc::SampleId, std::size_t> presence;
  for (const auto& v : ds.data.views) {
    for (auto id : v.ids) ++presence[id];
  }
  const auto complete = static_cast<std::size_t>(std::count_if(
      presence.begin(), presence.end(), [&](const auto& kv) { return kv.second == ds.data.num_views(); }));
  a.config.overlap = ids.empty() ? 0.0 : static_cast<double>(complete) / static_cast<double>(ids.size());

  const fedmvc::LabelMap* truth = ds.labels ? &*ds.labels : nullptr;
  const fedmvc::RunResult result = fedmvc::run(ds.data, a.config, truth);
  const nlohmann::json report = fedmvc::build_report(a.config, result);
  fedmvc::write_json(a.out, report);
  if (!a.pred.empty()) fedmvc::write_predictions(a.pred, result.ids, result.labels);
  if (truth) {
    std::printf("acc %.4f nmi %.4f ari %.4f\n", report["acc"].get<double>(), report["nmi"].get<double>(),
                report["ari"].get<double>());
  }
  return 0;
}

int do_eval(const EvalArgs& a) {
  const fedmvc::ClusterScores s =
      fedmvc::score_files(fedmvc::read_labels_csv(a.pred), fedmvc::read_labels_csv(a.labels));
  std::printf("acc %.6f\nnmi %.6f\nari %.6f\n", s.acc, s.nmi, s.ari);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated deep multi-view clustering"};
  app.require_subcommand(1);

  SynthArgs sa;
  std::vector<fedmvc::Index> view_dims = sa.synth.view_dims;
  double alpha = 0.0;
  auto* synth_cmd = app.add_subcommand("synth", "generate a partitioned synthetic multi-view dataset");
  synth_cmd->add_option("--n", sa.synth.samples, "number of samples")->capture_default_str();
  synth_cmd->add_option("--views", sa.synth.views, "number of views")->capture_default_str();
  synth_cmd->add_option("--clusters", sa.synth.clusters, "number of clusters")->capture_default_str();
  synth_cmd->add_option("--latent-dim", sa.synth.latent_dim, "latent dimension")->capture_default_str();
  synth_cmd->add_option("--view-dims", view_dims, "per-view feature widths")->delimiter(',');
  synth_cmd->add_option("--noise", sa.synth.noise, "noise standard deviation")->capture_default_str();
  synth_cmd->add_option("--separation", sa.synth.separation, "distance between cluster means")
      ->capture_default_str();
  synth_cmd->add_option("--gain-floor", sa.synth.gain_floor, "lowest per-view latent gain, in (0, 1]")
      ->capture_default_str();
  synth_cmd->add_flag("--nonlinear", sa.synth.nonlinear, "apply tanh after each view map");
  synth_cmd->add_option("--overlap", sa.overlap, "fraction of samples present in every view")
      ->capture_default_str();
  auto* alpha_opt = synth_cmd->add_option("--dirichlet-alpha", alpha, "Dirichlet view-weight concentration");
  synth_cmd->add_option("--seed", sa.seed, "random seed")->capture_default_str();
  synth_cmd->add_option("--out", sa.out, "output directory")->required();

  RunArgs ra;
  auto* run_cmd = app.add_subcommand("run", "train on a dataset directory and write metrics");
  auto& rc = ra.config;
  run_cmd->add_option("--data", ra.data, "dataset directory")->required();
  run_cmd->add_option("--clusters", rc.clusters, "number of clusters")->capture_default_str();
  run_cmd->add_option("--epochs", rc.epochs, "communication rounds")->capture_default_str();
  run_cmd->add_option("--gamma", rc.gamma, "clustering loss weight")->capture_default_str();
  run_cmd->add_option("--local-iters", rc.local_iters, "local steps per round")->capture_default_str();
  run_cmd->add_option("--extension-iters", rc.extension_iters, "pattern solver iterations")
      ->capture_default_str();
  run_cmd->add_option("--ridge-eps", rc.ridge_eps, "ridge regularizer")->capture_default_str();
  run_cmd->add_option("--seed", rc.seed, "random seed")->capture_default_str();
  run_cmd->add_option("--ablate", ra.ablate, "none|no-pseudo|no-proto|no-extension|no-patterns")
      ->check(CLI::IsMember({"none", "no-pseudo", "no-proto", "no-extension", "no-patterns"}))
      ->capture_default_str();
  run_cmd->add_option("--out", ra.out, "metrics JSON path")->capture_default_str();
  run_cmd->add_option("--pred", ra.pred, "write predictions CSV here");
  run_cmd->add_option("--anchor", rc.anchor, "alignment anchor view (0-based)")->capture_default_str();
  run_cmd->add_option("--pattern-solver", ra.solver, "closed-form|gradient")->capture_default_str();
  run_cmd->add_option("--embed-dim", rc.ae.embed_dim, "embedding width")->capture_default_str();
  run_cmd->add_option("--hidden", rc.ae.hidden, "encoder hidden widths")->delimiter(',');
  run_cmd->add_option("--lr", rc.ae.learning_rate, "learning rate")->capture_default_str();
  run_cmd->add_option("--momentum", rc.ae.momentum, "SGD momentum")->capture_default_str();
  run_cmd->add_option("--batch-size", rc.ae.batch_size, "minibatch size")->capture_default_str();
  run_cmd->add_option("--pretrain-iters", rc.ae.pretrain_iters, "pretraining steps")->capture_default_str();
  run_cmd->add_flag("--sequential", ra.sequential, "run clients one after another");
  run_cmd->add_flag("--no-standardize", ra.no_standardize, "train on raw client features");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "score a predictions file against labels");
  eval_cmd->add_option("--pred", ea.pred, "predictions CSV (id,label)")->required();
  eval_cmd->add_option("--labels", ea.labels, "labels CSV (id,label)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth_cmd) {
      sa.synth.view_dims = view_dims;
      if (*alpha_opt) sa.alpha = alpha;
      return do_synth(sa);
    }
    if (*run_cmd) return do_run(ra);
    return do_eval(ea);
  } catch (const std::exception& e) {
    print_error(e);
    return 1;
  }
}
