// SPDX-License-Identifier: Apache-2.0
//
// coopbeam - cooperative multi-BS joint beam prediction
// Copyright (C) 2026 The coopbeam authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

// coopbeam command-line tool: generate datasets, train, evaluate and run
// experiment sweeps.

#include "coopbeam/dataset_io.hpp"
#include "coopbeam/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace coopbeam;

namespace {

SnrSpec parse_snr(const std::string& s) {
  if (s == "mixed") return SnrSpec::mixed();
  if (s == "inf" || s == "none") return SnrSpec::noiseless();
  SnrSpec spec;
  spec.values.clear();
  for (const auto& v : detail::split_list(s)) spec.values.push_back(detail::parse_number<double>("snr", v));
  if (spec.values.empty()) throw ConfigError("--snr: empty list");
  return spec;
}

std::vector<std::size_t> parse_ks(const std::string& s) { return detail::parse_number_list<std::size_t>("k", s); }

void print_line(const std::string& s) { std::cerr << s << std::endl; }

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out << body;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coopbeam: cooperative multi-BS joint beam prediction"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "simulate trajectories and write a CBW1 window dataset");
  std::string g_scenario = "umi_like", g_out, g_snr = "10";
  std::size_t g_traj = 20, g_slots = 141;
  std::uint64_t g_seed = 42;
  gen->add_option("--scenario", g_scenario, "preset name (umi_like, uma_like) or scenario file")->capture_default_str();
  gen->add_option("--out", g_out, "output dataset file")->required();
  gen->add_option("--snr", g_snr, "SNR in dB, a comma list, 'mixed' or 'inf'")->capture_default_str();
  gen->add_option("--trajectories", g_traj, "number of trajectories")->capture_default_str();
  gen->add_option("--slots", g_slots, "slots per trajectory")->capture_default_str();
  gen->add_option("--seed", g_seed, "generation seed")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train a model on a dataset split by trajectory");
  std::string t_data, t_out, t_history, t_config, t_test_out, t_head, t_split = "0.8,0.1,0.1";
  std::optional<std::size_t> t_e0, t_e1;
  std::optional<double> t_lr;
  std::optional<std::uint64_t> t_seed;
  bool t_no_warmup = false;
  tr->add_option("--data", t_data, "CBW1 dataset")->required();
  tr->add_option("--out", t_out, "output checkpoint")->required();
  tr->add_option("--history", t_history, "write the per-epoch history CSV here");
  tr->add_option("--config", t_config, "experiment file supplying model.* and train.* settings");
  tr->add_option("--split", t_split, "train,val,test fractions")->capture_default_str();
  tr->add_option("--test-out", t_test_out, "write the held-out test windows here");
  tr->add_option("--head", t_head, "gated, ungated or hierarchical");
  tr->add_option("--epochs-stage0", t_e0, "warm-up epochs");
  tr->add_option("--epochs-stage1", t_e1, "stage-1 epochs");
  tr->add_option("--lr", t_lr, "learning rate");
  tr->add_option("--seed", t_seed, "training and split seed");
  tr->add_flag("--no-warmup", t_no_warmup, "skip stage 0");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string e_ckpt, e_data, e_k = "1,2,3,5", e_csv;
  bool e_regime = false, e_persistence = false;
  ev->add_option("--ckpt", e_ckpt, "CBP1 checkpoint")->required();
  ev->add_option("--data", e_data, "CBW1 dataset")->required();
  ev->add_option("--k", e_k, "comma list of K")->capture_default_str();
  ev->add_flag("--regime", e_regime, "also report the stable and flip regimes");
  ev->add_flag("--persistence", e_persistence, "also report the persistence baseline");
  ev->add_option("--csv", e_csv, "write the report CSV here");

  // sweep
  auto* sw = app.add_subcommand("sweep", "run an experiment sweep from a config file");
  std::string s_kind, s_config, s_out;
  sw->add_option("--kind", s_kind, "snr, fraction, ablation, transfer or warmup")
      ->required()
      ->check(CLI::IsMember({"snr", "fraction", "ablation", "transfer", "warmup"}));
  sw->add_option("--config", s_config, "experiment file")->required();
  sw->add_option("--out", s_out, "output prefix for .csv and .txt (overrides the file's 'out')");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const ScenarioConfig sc = resolve_scenario(g_scenario);
      const auto set = build_windows(sc, g_traj, g_slots, parse_snr(g_snr), g_seed);
      write_dataset(g_out, set);
      std::cout << "wrote " << set.size() << " windows (" << set.n_frames() << " frames, flip fraction "
                << std::setprecision(4) << set.flip_fraction() << ") to " << g_out << '\n';
    } else if (*tr) {
      ExperimentConfig e = t_config.empty() ? ExperimentConfig{} : load_experiment(t_config);
      if (!t_head.empty()) e.model.head = parse_head_kind(t_head);
      if (t_e0) e.train.epochs_stage0 = *t_e0;
      if (t_e1) e.train.epochs_stage1 = *t_e1;
      if (t_lr) e.train.lr = *t_lr;
      if (t_seed) e.train.seed = *t_seed;
      if (t_no_warmup) e.train.warmup_enabled = false;
      const auto f = detail::parse_number_list<double>("split", t_split);
      if (f.size() != 3) throw ConfigError("--split: expected three fractions");
      const WindowSet all = read_dataset(t_data);
      const Split data = split(all, {f[0], f[1], f[2]}, e.train.seed);
      auto run = train_run(data, e.model, e.train, print_line);
      const HistoryRow& best = run.result.history[run.result.best_row];
      save_checkpoint(t_out, run.model, all.scenario_hash,
                      {{"stage", best.stage}, {"epoch", std::to_string(best.epoch)}, {"data", t_data}});
      if (!t_history.empty()) write_text(t_history, history_csv(run.result.history));
      if (!t_test_out.empty()) write_dataset(t_test_out, data.test);
      auto rep = evaluate(model_predictor(run.model), data.test, default_ks());
      rep.metadata["split"] = "test";
      std::cout << "checkpoint " << t_out << " (" << best.stage << " epoch " << best.epoch << ")\n" << report_text(rep);
    } else if (*ev) {
      auto ckpt = load_checkpoint(e_ckpt);
      const WindowSet set = read_dataset(e_data);
      const auto ks = parse_ks(e_k);
      auto rep = transfer_eval(ckpt.model, set, ks);
      rep.metadata["checkpoint"] = e_ckpt;
      rep.metadata["dataset"] = e_data;
      std::cout << report_text(rep, e_regime);
      if (e_persistence) {
        auto base = evaluate(persistence_predictor(), set, ks);
        base.metadata["predictor"] = "persistence";
        std::cout << report_text(base, e_regime);
      }
      if (!e_csv.empty()) write_text(e_csv, report_csv(rep));
    } else if (*sw) {
      ExperimentConfig e = load_experiment(s_config);
      if (!s_out.empty()) e.out = s_out;
      Table t;
      if (s_kind == "snr") {
        t = sweep_snr(e, print_line);
      } else if (s_kind == "fraction") {
        t = sweep_fraction(e, print_line);
      } else if (s_kind == "ablation") {
        t = ablate_gate(e, print_line).table;
      } else if (s_kind == "transfer") {
        t = sweep_transfer(e, print_line);
      } else {
        t = compare_warmup(e, print_line).table;
      }
      write_table(e.out, t);
      std::cout << t.text();
    }
  } catch (const std::exception& ex) {
    std::cerr << "coopbeam: error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
