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

// Top-K accuracy and normalized beam gain, overall and split into stable and
// flip regimes by whether the best label changes at the prediction slot.

#pragma once

#include "coopbeam/dataset.hpp"
#include "coopbeam/model.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace coopbeam {

/// Ranking scores for windows [begin, end) of a set, (end - begin) x C.
using ScoreFn = std::function<std::vector<float>(const WindowSet&, std::size_t, std::size_t)>;

/// The K highest-scoring classes, best first; equal scores keep the lower class.
template <class Scalar>
std::vector<ClassLabel> topk_set(std::span<const Scalar> scores, std::size_t k) {
  if (k < 1 || k > scores.size())
    throw std::out_of_range("topk_set: K = " + std::to_string(k) + " outside 1.." + std::to_string(scores.size()));
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  std::vector<ClassLabel> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(ClassLabel::from_index(idx[i]));
  return out;
}

template <class Scalar>
std::vector<ClassLabel> topk_set(const std::vector<Scalar>& scores, std::size_t k) {
  return topk_set(std::span<const Scalar>(scores), k);
}

struct RegimeMetrics {
  std::size_t n = 0;
  std::map<std::size_t, double> acc;
  std::map<std::size_t, double> nbg;
};

struct MetricReport {
  std::vector<std::size_t> ks;
  RegimeMetrics overall, stable, flip;
  std::size_t n_samples = 0;
  std::size_t n_stable = 0;
  std::size_t n_flip = 0;
  std::size_t n_degenerate = 0;  // samples whose best gain is 0; NBG counted as 1
  std::map<std::string, std::string> metadata;
};

inline std::vector<std::size_t> default_ks() { return {1, 2, 3, 5}; }

/// Builds the report from precomputed scores (size() x C, row per window).
inline MetricReport report_from_scores(const WindowSet& set, std::span<const float> scores,
                                       const std::vector<std::size_t>& ks) {
  const std::size_t c = set.dims.n_classes();
  if (scores.size() != set.size() * c)
    throw DimensionError("evaluate: " + std::to_string(scores.size()) + " scores for " + std::to_string(set.size()) +
                         " windows of " + std::to_string(c) + " classes");
  if (ks.empty()) throw ConfigError("evaluate: empty K list");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  MetricReport rep;
  rep.ks = ks;
  for (auto* r : {&rep.overall, &rep.stable, &rep.flip})
    for (auto k : ks) r->acc[k] = r->nbg[k] = 0.0;

  for (std::size_t i = 0; i < set.size(); ++i) {
    const CsiWindow& w = set.windows[i];
    if (w.gains_next.size() != c) throw DimensionError("evaluate: window without a full gain vector");
    const auto top = topk_set(scores.subspan(i * c, c), kmax);
    const float best = *std::max_element(w.gains_next.begin(), w.gains_next.end());
    const bool degenerate = !(best > 0.0F);
    rep.n_degenerate += degenerate ? 1 : 0;
    RegimeMetrics& reg = w.s_next ? rep.flip : rep.stable;
    for (auto k : ks) {
      bool hit = false;
      float got = 0.0F;
      for (std::size_t j = 0; j < k; ++j) {
        hit = hit || top[j] == w.y_next;
        got = std::max(got, w.gains_next[top[j].index()]);
      }
      const double nbg = degenerate ? 1.0 : static_cast<double>(got) / static_cast<double>(best);
      for (auto* r : {&rep.overall, &reg}) {
        r->acc[k] += hit ? 1.0 : 0.0;
        r->nbg[k] += nbg;
      }
    }
    ++rep.overall.n;
    ++reg.n;
  }
  for (auto* r : {&rep.overall, &rep.stable, &rep.flip})
    for (auto k : ks)
      if (r->n > 0) {
        r->acc[k] /= static_cast<double>(r->n);
        r->nbg[k] /= static_cast<double>(r->n);
      }
  rep.n_samples = rep.overall.n;
  rep.n_stable = rep.stable.n;
  rep.n_flip = rep.flip.n;
  return rep;
}

/// Scores the whole set in chunks of `chunk` windows and reports.
inline MetricReport evaluate(const ScoreFn& predictor, const WindowSet& set, const std::vector<std::size_t>& ks,
                             std::size_t chunk = 64) {
  if (set.empty()) throw ConfigError("evaluate: empty dataset");
  for (auto k : ks)
    if (k < 1 || k > set.dims.n_classes()) throw std::out_of_range("evaluate: K = " + std::to_string(k) + " out of range");
  std::vector<float> scores;
  scores.reserve(set.size() * set.dims.n_classes());
  for (std::size_t b = 0; b < set.size(); b += chunk) {
    const std::size_t e = std::min(set.size(), b + chunk);
    auto s = predictor(set, b, e);
    if (s.size() != (e - b) * set.dims.n_classes()) throw DimensionError("evaluate: predictor returned wrong size");
    scores.insert(scores.end(), s.begin(), s.end());
  }
  return report_from_scores(set, scores, ks);
}

// ---------------------------------------------------------------------------
// Predictors

inline ScoreFn persistence_predictor() { return persistence_scores; }

/// Reads the true next label; an upper bound used to sanity-check metrics.
inline ScoreFn oracle_predictor() {
  return [](const WindowSet& set, std::size_t b, std::size_t e) {
    const std::size_t c = set.dims.n_classes();
    std::vector<float> s((e - b) * c, 0.0F);
    for (std::size_t i = b; i < e; ++i) s[(i - b) * c + set.windows[i].y_next.index()] = 1.0F;
    return s;
  };
}

inline ScoreFn uniform_random_predictor(std::uint64_t seed) {
  return [seed](const WindowSet& set, std::size_t b, std::size_t e) {
    const std::size_t c = set.dims.n_classes();
    std::vector<float> s((e - b) * c);
    for (std::size_t i = b; i < e; ++i) {
      Rng rng(derive_seed(seed, i, 20));
      std::uniform_real_distribution<float> u(0.0F, 1.0F);
      for (std::size_t k = 0; k < c; ++k) s[(i - b) * c + k] = u(rng);
    }
    return s;
  };
}

template <class T>
void check_model_matches(const CrsModel<T>& model, const WindowSet& set) {
  if (!(model.dims() == set.dims))
    throw DimensionError("model was built for " + std::to_string(model.dims().n_bs) + " BS x " +
                         std::to_string(model.dims().n_beam) + " beams, " + std::to_string(model.dims().n_ports) +
                         " ports x " + std::to_string(model.dims().n_subcarriers) + " subcarriers, T_h " +
                         std::to_string(model.dims().history_len) + "; dataset has " + std::to_string(set.dims.n_bs) +
                         " x " + std::to_string(set.dims.n_beam) + ", " + std::to_string(set.dims.n_ports) + " x " +
                         std::to_string(set.dims.n_subcarriers) + ", T_h " + std::to_string(set.dims.history_len));
}

/// Model ranking scores for windows [b, e), without building a graph.
template <class T>
std::vector<float> model_scores(CrsModel<T>& model, const WindowSet& set, std::size_t b, std::size_t e) {
  check_model_matches(model, set);
  model.set_grad_enabled(false);
  std::vector<std::size_t> idx(e - b);
  std::iota(idx.begin(), idx.end(), b);
  std::vector<std::size_t> y_now;
  for (auto i : idx) y_now.push_back(set.windows[i].y_now.index());
  const auto enc = model.encode(make_frame_batch<T>(set, idx, model.config().patch_len));
  const auto s = model.ranking_scores(model.head(enc.last, y_now));
  model.sync_requires_grad();
  return {s.begin(), s.end()};
}

template <class T>
ScoreFn model_predictor(CrsModel<T>& model) {
  return [&model](const WindowSet& set, std::size_t b, std::size_t e) { return model_scores(model, set, b, e); };
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string fmt_metric(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// CSV: regime,n,metric,k,value
inline std::string report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "regime,n,metric,k,value\n";
  auto emit = [&](const char* name, const RegimeMetrics& m) {
    for (auto k : r.ks) os << name << ',' << m.n << ",acc," << k << ',' << fmt_metric(m.acc.at(k)) << '\n';
    for (auto k : r.ks) os << name << ',' << m.n << ",nbg," << k << ',' << fmt_metric(m.nbg.at(k)) << '\n';
  };
  emit("overall", r.overall);
  emit("stable", r.stable);
  emit("flip", r.flip);
  return os.str();
}

inline std::string report_text(const MetricReport& r, bool regimes = true) {
  std::ostringstream os;
  for (const auto& [k, v] : r.metadata) os << k << ": " << v << '\n';
  os << "samples: " << r.n_samples << " (stable " << r.n_stable << ", flip " << r.n_flip << ", degenerate "
     << r.n_degenerate << ")\n";
  auto line = [&](const char* name, const RegimeMetrics& m) {
    os << std::left << std::setw(8) << name;
    for (auto k : r.ks) os << "  acc@" << k << ' ' << std::fixed << std::setprecision(4) << m.acc.at(k);
    for (auto k : r.ks) os << "  nbg@" << k << ' ' << std::fixed << std::setprecision(4) << m.nbg.at(k);
    os << '\n';
  };
  line("overall", r.overall);
  if (regimes) {
    line("stable", r.stable);
    line("flip", r.flip);
  }
  return os.str();
}

}  // namespace coopbeam
