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

// Two-stage training. Stage 0 masks whole history slots (zero / swap / keep)
// and predicts their labels from the pooled patch features through an
// auxiliary head. Stage 1 trains next-label prediction with the head's own
// objective. The best stage-1 validation point is kept.

#pragma once

#include "coopbeam/eval.hpp"
#include "coopbeam/model.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace coopbeam {

struct TrainConfig {
  double lr = 3e-3;
  std::size_t batch_size = 32;
  std::size_t epochs_stage0 = 5;
  std::size_t epochs_stage1 = 15;
  double lambda_sw = 0.5;
  double mask_ratio = 0.15;
  bool warmup_enabled = true;
  std::uint64_t seed = 42;
  std::size_t snapshot_every = 0;  // steps; 0 disables the snapshot hook
  std::size_t chunk_len = 8;       // consecutive windows kept together in a batch
  bool cosine_lr = false;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (batch_size == 0) throw ConfigError("train: batch_size must be > 0");
    if (!(lambda_sw > 0.0)) throw ConfigError("train: lambda_sw must be > 0");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("train: mask_ratio must lie in (0, 1)");
    if (chunk_len == 0) throw ConfigError("train: chunk_len must be > 0");
  }
};

/// Number of masked slots per window: ceil(ratio * T_h).
inline std::size_t masked_count(double ratio, std::size_t history_len) {
  const auto n = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(history_len) - 1e-9));
  if (n == 0) throw ConfigError("mask_ratio " + std::to_string(ratio) + " masks no slot of " + std::to_string(history_len));
  return std::min(n, history_len);
}

enum class MaskAction { zero, swap, keep };

struct MaskedSlot {
  std::size_t position = 0;
  MaskAction action = MaskAction::keep;
  std::size_t swap_with = 0;
};

/// Chooses masked slots for one window and applies the 80/10/10 rule.
inline std::vector<MaskedSlot> draw_mask(std::size_t history_len, double ratio, Rng& rng) {
  const std::size_t n = masked_count(ratio, history_len);
  std::vector<std::size_t> pos(history_len);
  std::iota(pos.begin(), pos.end(), 0);
  std::vector<MaskedSlot> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, history_len - 1);
    std::swap(pos[i], pos[pick(rng)]);
    MaskedSlot m;
    m.position = pos[i];
    const double r = u(rng);
    if (r < 0.8) {
      m.action = MaskAction::zero;
    } else if (r < 0.9 && history_len > 1) {
      m.action = MaskAction::swap;
      std::uniform_int_distribution<std::size_t> other(0, history_len - 2);
      const std::size_t j = other(rng);
      m.swap_with = j >= m.position ? j + 1 : j;
    }
    out.push_back(m);
  }
  return out;
}

/// Frame ids after masking; swaps read the original ids.
inline std::vector<std::int32_t> apply_mask(const std::vector<std::int32_t>& ids, const std::vector<MaskedSlot>& mask) {
  std::vector<std::int32_t> out = ids;
  for (const auto& m : mask) {
    if (m.action == MaskAction::zero) out[m.position] = -1;
    if (m.action == MaskAction::swap) out[m.position] = ids[m.swap_with];
  }
  return out;
}

/// Shuffled batches built from runs of `chunk_len` consecutive windows of the
/// same trajectory so that batches share most frames.
inline std::vector<std::vector<std::size_t>> make_batches(const WindowSet& set, std::size_t batch_size,
                                                          std::size_t chunk_len, Rng& rng) {
  std::vector<std::vector<std::size_t>> chunks;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const bool cont = !chunks.empty() && chunks.back().size() < chunk_len &&
                      set.windows[chunks.back().back()].trajectory == set.windows[i].trajectory;
    if (!cont) chunks.emplace_back();
    chunks.back().push_back(i);
  }
  std::shuffle(chunks.begin(), chunks.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  for (const auto& c : chunks)
    for (auto i : c) {
      cur.push_back(i);
      if (cur.size() == batch_size) batches.push_back(std::exchange(cur, {}));
    }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

template <class T>
std::vector<T> s_targets(const WindowSet& set, std::span<const std::size_t> idx) {
  std::vector<T> s;
  for (auto i : idx) s.push_back(set.windows[i].s_next ? T(1) : T(0));
  return s;
}

inline std::vector<std::size_t> label_indices(const WindowSet& set, std::span<const std::size_t> idx, bool next) {
  std::vector<std::size_t> y;
  for (auto i : idx) y.push_back((next ? set.windows[i].y_next : set.windows[i].y_now).index());
  return y;
}

/// Masked-label loss of one batch (graph attached when grads are enabled).
template <class T>
nn::Var<T> stage0_loss(const CrsModel<T>& model, const WindowSet& set, std::span<const std::size_t> idx,
                       double mask_ratio, Rng& rng) {
  const std::size_t th = set.dims.history_len, lp = model.config().patch_len, np = model.n_patch();
  std::vector<std::vector<std::int32_t>> ids;
  std::vector<std::size_t> rows, targets;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const CsiWindow& w = set.windows[idx[k]];
    if (w.hist_labels.size() != th) throw DimensionError("stage0: window without history labels");
    const auto mask = draw_mask(th, mask_ratio, rng);
    ids.push_back(apply_mask(w.frame_ids, mask));
    for (const auto& m : mask) {
      rows.push_back(k * np + m.position / lp);
      targets.push_back(w.hist_labels[m.position].index());
    }
  }
  const auto enc = model.encode(make_frame_batch<T>(set, ids, lp));
  return nn::cross_entropy_logits(model.aux_logits(enc, rows), targets);
}

template <class T>
T stage0_step(CrsModel<T>& model, const WindowSet& set, std::span<const std::size_t> idx, const TrainConfig& cfg,
              Rng& rng, nn::Adam<T>& opt) {
  auto params = model.stage0_params();
  nn::zero_grads(params);
  nn::Var<T> loss = stage0_loss(model, set, idx, cfg.mask_ratio, rng);
  nn::backward(loss);
  opt.step(params);
  return loss.item();
}

template <class T>
StageOneLoss<T> stage1_forward(const CrsModel<T>& model, const WindowSet& set, std::span<const std::size_t> idx,
                               T lambda_sw, std::vector<T>* scores = nullptr) {
  const auto y_now = label_indices(set, idx, false);
  const auto y_next = label_indices(set, idx, true);
  const auto s = s_targets<T>(set, idx);
  const auto enc = model.encode(make_frame_batch<T>(set, idx, model.config().patch_len));
  const auto out = model.head(enc.last, y_now);
  if (scores) *scores = model.ranking_scores(out);
  return model.stage1_loss(out, y_next, s, lambda_sw);
}

template <class T>
StageOneLoss<T> stage1_step(CrsModel<T>& model, const WindowSet& set, std::span<const std::size_t> idx,
                            const TrainConfig& cfg, nn::Adam<T>& opt) {
  auto params = model.stage1_params();
  nn::zero_grads(params);
  StageOneLoss<T> l = stage1_forward(model, set, idx, static_cast<T>(cfg.lambda_sw));
  nn::backward(l.total);
  opt.step(params);
  return l;
}

struct HistoryRow {
  std::size_t epoch = 0;  // within the stage; 0 is the initial evaluation
  std::string stage;      // init, stage0, stage1
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_nbg1 = 0.0;
  double val_acc1 = 0.0;
  double wallclock_s = 0.0;
};

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "epoch,stage,train_loss,val_loss,val_nbg1,val_acc1,wallclock_s\n";
  os << std::setprecision(9);
  for (const auto& r : rows)
    os << r.epoch << ',' << r.stage << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_nbg1 << ','
       << r.val_acc1 << ',' << std::setprecision(4) << r.wallclock_s << std::setprecision(9) << '\n';
  return os.str();
}

struct ValidationResult {
  double loss = 0.0;
  MetricReport report;
};

/// Stage-1 objective and metrics over a whole set without gradients.
template <class T>
ValidationResult validate_model(CrsModel<T>& model, const WindowSet& set, double lambda_sw, std::size_t chunk = 64) {
  check_model_matches(model, set);
  model.set_grad_enabled(false);
  std::vector<float> scores;
  double loss = 0.0;
  for (std::size_t b = 0; b < set.size(); b += chunk) {
    const std::size_t e = std::min(set.size(), b + chunk);
    std::vector<std::size_t> idx(e - b);
    std::iota(idx.begin(), idx.end(), b);
    std::vector<T> s;
    const auto l = stage1_forward(model, set, idx, static_cast<T>(lambda_sw), &s);
    loss += static_cast<double>(l.total.item()) * static_cast<double>(e - b);
    scores.insert(scores.end(), s.begin(), s.end());
  }
  model.sync_requires_grad();
  ValidationResult v;
  v.loss = loss / static_cast<double>(set.size());
  v.report = report_from_scores(set, scores, {1});
  return v;
}

template <class T>
struct TrainResult {
  std::vector<HistoryRow> history;
  std::size_t best_row = 0;  // index into history of the retained parameters
};

template <class T>
struct TrainHooks {
  std::function<void(const HistoryRow&)> on_epoch;
  std::function<void(CrsModel<T>&, std::size_t step)> on_snapshot;
};

/// Runs optional stage 0 then stage 1 and leaves the best stage-1 validation
/// parameters (highest NBG-1, then lowest loss) in `model`.
template <class T>
TrainResult<T> run_training(CrsModel<T>& model, const WindowSet& train, const WindowSet& val, const TrainConfig& cfg,
                            const TrainHooks<T>& hooks = {}) {
  cfg.validate();
  if (train.empty() || val.empty()) throw ConfigError("train: empty training or validation set");
  check_model_matches(model, train);
  check_model_matches(model, val);
  model.sync_requires_grad();

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  Rng rng(derive_seed(cfg.seed, 0, 30));
  TrainResult<T> res;
  std::vector<std::vector<T>> best_values;
  double best_nbg = -1.0, best_loss = std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  auto record = [&](std::size_t epoch, const char* stage, double train_loss, bool candidate) {
    const auto v = validate_model(model, val, cfg.lambda_sw);
    HistoryRow row{epoch, stage, train_loss, v.loss, v.report.overall.nbg.at(1), v.report.overall.acc.at(1), elapsed()};
    res.history.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
    if (candidate && (row.val_nbg1 > best_nbg || (row.val_nbg1 == best_nbg && row.val_loss < best_loss))) {
      best_nbg = row.val_nbg1;
      best_loss = row.val_loss;
      res.best_row = res.history.size() - 1;
      best_values.clear();
      for (const auto* p : std::as_const(model).params()) best_values.emplace_back(p->tensor.value().begin(), p->tensor.value().end());
    }
  };
  auto lr_at = [&](std::size_t epoch, std::size_t epochs) {
    if (!cfg.cosine_lr || epochs == 0) return cfg.lr;
    return 0.5 * cfg.lr * (1.0 + std::cos(kPi * static_cast<double>(epoch) / static_cast<double>(epochs)));
  };
  auto guarded = [&](const char* stage, std::size_t epoch, auto&& fn) {
    try {
      return fn();
    } catch (const NumericError& e) {
      throw NumericError(std::string(stage) + " epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                         ": " + e.what());
    }
  };

  const bool warm = cfg.warmup_enabled && cfg.epochs_stage0 > 0;
  // the pre-stage-1 evaluation is a selection candidate unless stage 0 follows
  const double init_train = validate_model(model, train, cfg.lambda_sw).loss;
  record(0, "init", init_train, !warm);

  if (warm) {
    nn::Adam<T> opt(nn::AdamConfig{cfg.lr});
    for (std::size_t e = 1; e <= cfg.epochs_stage0; ++e) {
      opt.set_lr(lr_at(e - 1, cfg.epochs_stage0));
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& b : make_batches(train, cfg.batch_size, cfg.chunk_len, rng)) {
        sum += guarded("stage0", e, [&] { return static_cast<double>(stage0_step(model, train, b, cfg, rng, opt)); }) *
               static_cast<double>(b.size());
        n += b.size();
        ++step;
        if (cfg.snapshot_every && hooks.on_snapshot && step % cfg.snapshot_every == 0) hooks.on_snapshot(model, step);
      }
      record(e, "stage0", sum / static_cast<double>(n), e == cfg.epochs_stage0);
    }
  }

  nn::Adam<T> opt(nn::AdamConfig{cfg.lr});  // fresh moments for stage 1
  for (std::size_t e = 1; e <= cfg.epochs_stage1; ++e) {
    opt.set_lr(lr_at(e - 1, cfg.epochs_stage1));
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& b : make_batches(train, cfg.batch_size, cfg.chunk_len, rng)) {
      const auto l = guarded("stage1", e, [&] { return stage1_step(model, train, b, cfg, opt); });
      sum += static_cast<double>(l.total.item()) * static_cast<double>(b.size());
      n += b.size();
      ++step;
      if (cfg.snapshot_every && hooks.on_snapshot && step % cfg.snapshot_every == 0) hooks.on_snapshot(model, step);
    }
    record(e, "stage1", sum / static_cast<double>(n), true);
  }

  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i]->tensor.mutable_value();
    std::copy(best_values[i].begin(), best_values[i].end(), v.begin());
  }
  return res;
}

// ---------------------------------------------------------------------------
// Warm-up versus cold-start comparison

struct WarmupRow {
  std::size_t stage1_epoch = 0;
  double warm_val_loss = 0.0, cold_val_loss = 0.0;
  double warm_val_nbg1 = 0.0, cold_val_nbg1 = 0.0;
};

/// Pairs the stage-1 rows of two histories by stage-1 epoch. Row 0 is the
/// last evaluation before stage 1 in each run.
inline std::vector<WarmupRow> pair_histories(const std::vector<HistoryRow>& warm, const std::vector<HistoryRow>& cold) {
  auto grid = [](const std::vector<HistoryRow>& h) {
    std::vector<const HistoryRow*> g;
    const HistoryRow* before = nullptr;
    for (const auto& r : h)
      if (r.stage != "stage1") before = &r;
    if (before) g.push_back(before);
    for (const auto& r : h)
      if (r.stage == "stage1") g.push_back(&r);
    return g;
  };
  const auto gw = grid(warm), gc = grid(cold);
  if (gw.size() != gc.size())
    throw ConfigError("warm-up comparison: step grids differ (" + std::to_string(gw.size()) + " vs " +
                      std::to_string(gc.size()) + " rows)");
  std::vector<WarmupRow> out;
  for (std::size_t i = 0; i < gw.size(); ++i)
    out.push_back({i, gw[i]->val_loss, gc[i]->val_loss, gw[i]->val_nbg1, gc[i]->val_nbg1});
  return out;
}

inline std::string warmup_csv(const std::vector<WarmupRow>& rows) {
  std::ostringstream os;
  os << "stage1_epoch,warm_val_loss,cold_val_loss,warm_val_nbg1,cold_val_nbg1\n" << std::setprecision(9);
  for (const auto& r : rows)
    os << r.stage1_epoch << ',' << r.warm_val_loss << ',' << r.cold_val_loss << ',' << r.warm_val_nbg1 << ','
       << r.cold_val_nbg1 << '\n';
  return os.str();
}

}  // namespace coopbeam
