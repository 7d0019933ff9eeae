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

// Experiment drivers: SNR sweep, labeled-data fraction sweep, gate ablation,
// warm-up comparison and zero-shot transfer. Each returns a table that is
// written as CSV for plotting and as aligned text for reading.

#pragma once

#include "coopbeam/checkpoint.hpp"
#include "coopbeam/eval.hpp"
#include "coopbeam/training.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace coopbeam {

/// Progress sink; receives one line per event.
using Logger = std::function<void(const std::string&)>;

struct ExperimentConfig {
  std::string scenario = "umi_like";         // preset name or scenario file
  std::string target_scenario = "uma_like";  // transfer target
  std::size_t trajectories = 20;
  std::size_t slots = 141;
  std::uint64_t data_seed = 42;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  double snr_db = 10.0;
  std::vector<double> snr_list{-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0};
  std::vector<double> fractions{0.1, 0.25, 0.5, 1.0};
  std::vector<std::uint64_t> seeds{42, 43, 44};
  std::vector<std::size_t> ks = default_ks();
  std::string checkpoint;  // evaluate this instead of training, when set
  std::string out;         // output path prefix; empty writes nothing
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

template <class Num>
Num parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    Num x{};
    if constexpr (std::is_floating_point_v<Num>) {
      x = static_cast<Num>(std::stod(v, &pos));
    } else {
      if (v.empty() || v[0] == '-') throw std::invalid_argument("negative");
      x = static_cast<Num>(std::stoull(v, &pos));
    }
    if (trim(v.substr(pos)).empty()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("experiment key '" + key + "': bad value '" + v + "'");
}

template <class Num>
std::vector<Num> parse_number_list(const std::string& key, const std::string& v) {
  std::vector<Num> out;
  for (const auto& s : split_list(v)) out.push_back(parse_number<Num>(key, s));
  if (out.empty()) throw ConfigError("experiment key '" + key + "': empty list");
  return out;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("experiment key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

/// Reads "key = value" lines; '#' starts a comment. Model and training
/// settings use the prefixes "model." and "train.".
inline ExperimentConfig parse_experiment(const std::string& text) {
  using namespace detail;
  ExperimentConfig e;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("experiment line " + std::to_string(lineno) + ": expected key = value");
    const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    auto uint = [&] { return parse_number<std::uint64_t>(k, v); };
    auto real = [&] { return parse_number<double>(k, v); };
    if (k == "scenario") e.scenario = v;
    else if (k == "target_scenario") e.target_scenario = v;
    else if (k == "trajectories") e.trajectories = uint();
    else if (k == "slots") e.slots = uint();
    else if (k == "data_seed") e.data_seed = uint();
    else if (k == "snr_db") e.snr_db = real();
    else if (k == "snr_list") e.snr_list = parse_number_list<double>(k, v);
    else if (k == "fractions") e.fractions = parse_number_list<double>(k, v);
    else if (k == "seeds") e.seeds = parse_number_list<std::uint64_t>(k, v);
    else if (k == "ks") e.ks = parse_number_list<std::size_t>(k, v);
    else if (k == "checkpoint") e.checkpoint = v;
    else if (k == "out") e.out = v;
    else if (k == "split") {
      const auto f = parse_number_list<double>(k, v);
      if (f.size() != 3) throw ConfigError("experiment key 'split': expected three fractions");
      e.split = {f[0], f[1], f[2]};
    }
    else if (k == "model.d_c") e.model.d_c = uint();
    else if (k == "model.d") e.model.d = uint();
    else if (k == "model.n_layers") e.model.n_layers = uint();
    else if (k == "model.n_heads") e.model.n_heads = uint();
    else if (k == "model.patch_len") e.model.patch_len = uint();
    else if (k == "model.rank_r") e.model.rank_r = uint();
    else if (k == "model.conv_channels") e.model.conv_channels = uint();
    else if (k == "model.frozen_backbone") e.model.frozen_backbone = parse_flag(k, v);
    else if (k == "model.mask_mode") e.model.mask_mode = parse_mask_mode(v);
    else if (k == "model.head") e.model.head = parse_head_kind(v);
    else if (k == "model.init_seed") e.model.init_seed = uint();
    else if (k == "train.lr") e.train.lr = real();
    else if (k == "train.batch_size") e.train.batch_size = uint();
    else if (k == "train.epochs_stage0") e.train.epochs_stage0 = uint();
    else if (k == "train.epochs_stage1") e.train.epochs_stage1 = uint();
    else if (k == "train.lambda_sw") e.train.lambda_sw = real();
    else if (k == "train.mask_ratio") e.train.mask_ratio = real();
    else if (k == "train.warmup_enabled") e.train.warmup_enabled = parse_flag(k, v);
    else if (k == "train.seed") e.train.seed = uint();
    else if (k == "train.chunk_len") e.train.chunk_len = uint();
    else if (k == "train.cosine_lr") e.train.cosine_lr = parse_flag(k, v);
    else throw ConfigError("experiment: unknown key '" + k + "'");
  }
  e.train.validate();
  return e;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open experiment file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str());
}

/// A preset name, or else a scenario file path.
inline ScenarioConfig resolve_scenario(const std::string& name_or_path) {
  if (name_or_path == "umi_like" || name_or_path == "uma_like") return preset_by_name(name_or_path);
  if (std::filesystem::exists(name_or_path)) return load_scenario(name_or_path);
  throw ConfigError("unknown scenario preset or missing file: " + name_or_path);
}

/// Windows of one scenario at one SNR, split by trajectory.
inline Split experiment_data(const ExperimentConfig& e, const ScenarioConfig& sc, double snr_db) {
  return split(build_windows(sc, e.trajectories, e.slots, SnrSpec::fixed(snr_db), e.data_seed), e.split, e.data_seed);
}

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << '\n';
    }
    return os.str();
  }

  std::size_t metrics_from = 0;  // first column printed with 4 decimals in text()

  /// Columns padded to their widest cell.
  std::string text() const {
    auto cell = [&](const std::string& s, std::size_t col) {
      if (col < metrics_from) return s;
      try {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4) << std::stod(s);
        return os.str();
      } catch (const std::exception&) {
        return s;
      }
    };
    std::vector<std::size_t> w(columns.size());
    for (std::size_t i = 0; i < columns.size(); ++i) w[i] = columns[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], cell(r[i], i).size());
    std::ostringstream os;
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "  " : "") << std::setw(static_cast<int>(w[i])) << columns[i];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "  " : "") << std::setw(static_cast<int>(w[i])) << cell(r[i], i);
      os << '\n';
    }
    return os.str();
  }
};

/// Writes <prefix>.csv and <prefix>.txt; does nothing for an empty prefix.
inline void write_table(const std::string& prefix, const Table& t) {
  if (prefix.empty()) return;
  const std::filesystem::path p(prefix);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  for (const auto& [ext, body] : {std::pair{".csv", t.csv()}, std::pair{".txt", t.text()}}) {
    std::ofstream out(prefix + ext, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + prefix + ext);
    out << body;
  }
}

inline std::vector<std::string> metric_columns(const std::vector<std::size_t>& ks) {
  std::vector<std::string> c;
  for (auto k : ks) c.push_back("acc@" + std::to_string(k));
  for (auto k : ks) c.push_back("nbg@" + std::to_string(k));
  return c;
}

inline std::vector<std::string> metric_cells(const RegimeMetrics& m, const std::vector<std::size_t>& ks) {
  std::vector<std::string> c;
  for (auto k : ks) c.push_back(fmt_metric(m.acc.at(k)));
  for (auto k : ks) c.push_back(fmt_metric(m.nbg.at(k)));
  return c;
}

/// Appends overall, stable and flip rows, each prefixed by `lead`.
inline void append_regime_rows(Table& t, const std::vector<std::string>& lead, const MetricReport& r) {
  for (const auto& [name, m] : {std::pair<const char*, const RegimeMetrics*>{"overall", &r.overall},
                                {"stable", &r.stable}, {"flip", &r.flip}}) {
    auto row = lead;
    row.push_back(name);
    row.push_back(std::to_string(m->n));
    for (auto& c : metric_cells(*m, r.ks)) row.push_back(std::move(c));
    t.rows.push_back(std::move(row));
  }
}

inline Table regime_table(std::vector<std::string> lead_columns, const std::vector<std::size_t>& ks) {
  Table t;
  t.columns = std::move(lead_columns);
  t.columns.push_back("regime");
  t.columns.push_back("n");
  t.metrics_from = t.columns.size();
  for (auto& c : metric_columns(ks)) t.columns.push_back(std::move(c));
  return t;
}

// ---------------------------------------------------------------------------
// Runs

struct TrainedRun {
  CrsModel<float> model;
  TrainResult<float> result;
};

inline TrainedRun train_run(const Split& data, const ModelConfig& mc, const TrainConfig& tc, const Logger& log = {},
                            const std::string& tag = "") {
  TrainedRun run{CrsModel<float>(mc, data.train.dims), {}};
  TrainHooks<float> hooks;
  if (log)
    hooks.on_epoch = [&](const HistoryRow& r) {
      std::ostringstream os;
      os << tag << (tag.empty() ? "" : " ") << r.stage << " epoch " << r.epoch << " train_loss " << r.train_loss
         << " val_loss " << r.val_loss << " val_nbg1 " << r.val_nbg1 << " val_acc1 " << r.val_acc1 << " t "
         << std::fixed << std::setprecision(1) << r.wallclock_s << "s";
      log(os.str());
    };
  run.result = run_training(run.model, data.train, data.val, tc, hooks);
  return run;
}

/// Evaluates a model on a dataset built from any scenario with the same dims.
template <class T>
MetricReport transfer_eval(CrsModel<T>& model, const WindowSet& target, const std::vector<std::size_t>& ks) {
  check_model_matches(model, target);
  return evaluate(model_predictor(model), target, ks);
}

inline MetricReport transfer_eval(const std::string& checkpoint, const WindowSet& target,
                                  const std::vector<std::size_t>& ks) {
  auto ckpt = load_checkpoint(checkpoint);
  return transfer_eval(ckpt.model, target, ks);
}

/// Accuracy and NBG against SNR for the model and persistence. Trains one
/// model per SNR unless a checkpoint is given.
inline Table sweep_snr(const ExperimentConfig& e, const Logger& log = {}) {
  const ScenarioConfig sc = resolve_scenario(e.scenario);
  Table t = regime_table({"snr_db", "predictor"}, e.ks);
  std::optional<LoadedCheckpoint> fixed;
  if (!e.checkpoint.empty()) fixed.emplace(load_checkpoint(e.checkpoint));
  for (double snr : e.snr_list) {
    const Split data = experiment_data(e, sc, snr);
    const std::string s = fmt_metric(snr);
    if (fixed) {
      append_regime_rows(t, {s, "crs"}, transfer_eval(fixed->model, data.test, e.ks));
    } else {
      auto run = train_run(data, e.model, e.train, log, "snr " + s);
      append_regime_rows(t, {s, "crs"}, evaluate(model_predictor(run.model), data.test, e.ks));
    }
    append_regime_rows(t, {s, "persistence"}, evaluate(persistence_predictor(), data.test, e.ks));
  }
  return t;
}

/// Overall metrics against the fraction of labeled training trajectories.
inline Table sweep_fraction(const ExperimentConfig& e, const Logger& log = {}) {
  const Split data = experiment_data(e, resolve_scenario(e.scenario), e.snr_db);
  Table t;
  t.columns = {"fraction", "n_train"};
  t.metrics_from = 2;
  for (auto& c : metric_columns(e.ks)) t.columns.push_back(std::move(c));
  for (double f : e.fractions) {
    Split part{subsample(data.train, f, e.train.seed), data.val, data.test};
    auto run = train_run(part, e.model, e.train, log, "fraction " + fmt_metric(f));
    const auto r = evaluate(model_predictor(run.model), data.test, e.ks);
    std::vector<std::string> row{fmt_metric(f), std::to_string(part.train.size())};
    for (auto& c : metric_cells(r.overall, e.ks)) row.push_back(std::move(c));
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricReport> gated, ungated;
  Table table;  // seed (or "mean"), k, gated/ungated acc and nbg

  double mean_acc(bool gated_head, std::size_t k) const {
    const auto& v = gated_head ? gated : ungated;
    double s = 0.0;
    for (const auto& r : v) s += r.overall.acc.at(k);
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
  double mean_nbg(bool gated_head, std::size_t k) const {
    const auto& v = gated_head ? gated : ungated;
    double s = 0.0;
    for (const auto& r : v) s += r.overall.nbg.at(k);
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
};

/// Gated against ungated heads on the same data, one pair per seed.
inline AblationResult ablate_gate(const ExperimentConfig& e, const Logger& log = {}) {
  const Split data = experiment_data(e, resolve_scenario(e.scenario), e.snr_db);
  AblationResult res;
  res.seeds = e.seeds;
  res.table.columns = {"seed", "k", "gated_acc", "ungated_acc", "gated_nbg", "ungated_nbg"};
  res.table.metrics_from = 2;
  for (auto seed : e.seeds) {
    for (auto kind : {HeadKind::gated, HeadKind::ungated}) {
      ModelConfig mc = e.model;
      mc.head = kind;
      mc.init_seed = seed;
      TrainConfig tc = e.train;
      tc.seed = seed;
      auto run = train_run(data, mc, tc, log, "seed " + std::to_string(seed) + " " + to_string(kind));
      (kind == HeadKind::gated ? res.gated : res.ungated).push_back(evaluate(model_predictor(run.model), data.test, e.ks));
    }
    const auto& g = res.gated.back();
    const auto& u = res.ungated.back();
    for (auto k : e.ks)
      res.table.rows.push_back({std::to_string(seed), std::to_string(k), fmt_metric(g.overall.acc.at(k)),
                                fmt_metric(u.overall.acc.at(k)), fmt_metric(g.overall.nbg.at(k)),
                                fmt_metric(u.overall.nbg.at(k))});
  }
  for (auto k : e.ks)
    res.table.rows.push_back({"mean", std::to_string(k), fmt_metric(res.mean_acc(true, k)),
                              fmt_metric(res.mean_acc(false, k)), fmt_metric(res.mean_nbg(true, k)),
                              fmt_metric(res.mean_nbg(false, k))});
  return res;
}

struct WarmupComparison {
  std::vector<HistoryRow> warm, cold;
  std::vector<WarmupRow> paired;
  Table table;
};

/// Warm-up then stage 1 against stage 1 alone, same init and stage-1 budget.
inline WarmupComparison compare_warmup(const ExperimentConfig& e, const Logger& log = {}) {
  const Split data = experiment_data(e, resolve_scenario(e.scenario), e.snr_db);
  WarmupComparison c;
  TrainConfig warm = e.train;
  warm.warmup_enabled = true;
  if (warm.epochs_stage0 == 0) throw ConfigError("warm-up comparison needs train.epochs_stage0 > 0");
  TrainConfig cold = e.train;
  cold.warmup_enabled = false;
  c.warm = train_run(data, e.model, warm, log, "warm").result.history;
  c.cold = train_run(data, e.model, cold, log, "cold").result.history;
  c.paired = pair_histories(c.warm, c.cold);
  c.table.columns = {"stage1_epoch", "warm_val_loss", "cold_val_loss", "warm_val_nbg1", "cold_val_nbg1"};
  c.table.metrics_from = 1;
  for (const auto& r : c.paired)
    c.table.rows.push_back({std::to_string(r.stage1_epoch), fmt_metric(r.warm_val_loss), fmt_metric(r.cold_val_loss),
                            fmt_metric(r.warm_val_nbg1), fmt_metric(r.cold_val_nbg1)});
  return c;
}

/// A model trained on the source scenario (or loaded) evaluated on the target
/// scenario's test windows at each SNR, next to persistence.
inline Table sweep_transfer(const ExperimentConfig& e, const Logger& log = {}) {
  const ScenarioConfig source = resolve_scenario(e.scenario);
  const ScenarioConfig target = resolve_scenario(e.target_scenario);
  if (!(WindowDims::from(source) == WindowDims::from(target)))
    throw DimensionError("transfer: source and target scenarios have different dims");
  std::optional<CrsModel<float>> model;
  if (!e.checkpoint.empty()) {
    model.emplace(load_checkpoint(e.checkpoint).model);
  } else {
    model.emplace(train_run(experiment_data(e, source, e.snr_db), e.model, e.train, log, "source").model);
  }
  Table t = regime_table({"snr_db", "predictor"}, e.ks);
  for (double snr : e.snr_list) {
    const Split data = experiment_data(e, target, snr);
    const std::string s = fmt_metric(snr);
    append_regime_rows(t, {s, "crs"}, transfer_eval(*model, data.test, e.ks));
    append_regime_rows(t, {s, "persistence"}, evaluate(persistence_predictor(), data.test, e.ks));
  }
  return t;
}

}  // namespace coopbeam
