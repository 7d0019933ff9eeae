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

// Windowed dual-view CSI samples.
//
// Observations are stored once per (trajectory, slot) as a "frame" holding
// every BS in both views:
//
//     frame[b][view][re/im][port][subcarrier]   view 0 = delay, 1 = frequency
//
// A window references T_h consecutive frames, so stride-1 windows of one
// trajectory share storage. The full model input tensor of a window
// (T_h x N_BS x 2 x 2 x N_p x N_f) is the concatenation of its frames.

#pragma once

#include "coopbeam/beam_oracle.hpp"
#include "coopbeam/common.hpp"
#include "coopbeam/scene_sim.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace coopbeam {

// ---------------------------------------------------------------------------
// Dual view

/// Unitary N-point DFT matrix, F[k, n] = exp(-j 2pi k n / N) / sqrt(N).
inline const Eigen::MatrixXcd& dft_matrix(std::size_t n) {
  thread_local std::map<std::size_t, Eigen::MatrixXcd> cache;
  if (auto it = cache.find(n); it != cache.end()) return it->second;
  const auto nn = static_cast<Eigen::Index>(n);
  Eigen::MatrixXcd f(nn, nn);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index k = 0; k < nn; ++k)
    for (Eigen::Index i = 0; i < nn; ++i)
      f(k, i) = std::polar(scale, -2.0 * kPi * static_cast<double>((k * i) % nn) / static_cast<double>(n));
  return cache.emplace(n, std::move(f)).first->second;
}

/// H_delay = H_freq F^H.
inline Eigen::MatrixXcd to_delay_domain(const Eigen::MatrixXcd& h_freq) {
  return h_freq * dft_matrix(static_cast<std::size_t>(h_freq.cols())).adjoint();
}

/// H_freq = H_delay F.
inline Eigen::MatrixXcd to_freq_domain(const Eigen::MatrixXcd& h_delay) {
  return h_delay * dft_matrix(static_cast<std::size_t>(h_delay.cols()));
}

// ---------------------------------------------------------------------------
// Observation noise

struct NoisyChannel {
  Eigen::MatrixXcd h_freq;
  bool unchanged = false;  // all-zero input or noiseless mode
};

/// Adds i.i.d. CN(0, s2) to every entry with s2 = mean|h|^2 * 10^(-snr/10).
/// snr_db = +inf is the noiseless mode.
inline NoisyChannel add_observation_noise(const Eigen::MatrixXcd& h_freq, double snr_db, Rng& rng) {
  NoisyChannel out{h_freq, false};
  if (std::isinf(snr_db) && snr_db > 0) {
    out.unchanged = true;
    return out;
  }
  const double power = h_freq.squaredNorm() / static_cast<double>(h_freq.size());
  if (!(power > 0.0)) {
    out.unchanged = true;
    return out;
  }
  const double var = power * std::pow(10.0, -snr_db / 10.0);
  std::normal_distribution<double> g(0.0, std::sqrt(var / 2.0));
  for (Eigen::Index j = 0; j < out.h_freq.cols(); ++j)
    for (Eigen::Index i = 0; i < out.h_freq.rows(); ++i) {
      const double re = g(rng);
      const double im = g(rng);
      out.h_freq(i, j) += cplx(re, im);
    }
  return out;
}

/// Fixed SNR, noiseless, or per-trajectory draw from a list ("mixed").
struct SnrSpec {
  std::vector<double> values{std::numeric_limits<double>::infinity()};

  static SnrSpec fixed(double db) { return SnrSpec{{db}}; }
  static SnrSpec noiseless() { return SnrSpec{}; }
  static SnrSpec mixed() { return SnrSpec{{-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0}}; }
};

// ---------------------------------------------------------------------------
// Windows

struct WindowDims {
  std::size_t n_bs = 4;
  std::size_t n_beam = 32;
  std::size_t n_ports = 32;
  std::size_t n_subcarriers = 64;
  std::size_t history_len = 16;

  static WindowDims from(const ScenarioConfig& c) {
    return {c.n_bs, c.n_beam, c.n_ports, c.n_subcarriers, c.history_len};
  }
  std::size_t n_classes() const { return n_bs * n_beam; }
  /// floats in one [re/im][port][subcarrier] slice
  std::size_t slice_size() const { return 2 * n_ports * n_subcarriers; }
  /// floats in one [bs][view][re/im][port][subcarrier] frame
  std::size_t frame_size() const { return n_bs * 2 * slice_size(); }
  std::size_t window_size() const { return history_len * frame_size(); }

  friend bool operator==(const WindowDims&, const WindowDims&) = default;
};

/// One sample: T_h frames of history plus current/next labels.
struct CsiWindow {
  std::int32_t trajectory = 0;
  std::int32_t end_slot = 0;              // slot t of y_now
  std::vector<std::int32_t> frame_ids;    // T_h ids into the frame pool, oldest first
  ClassLabel y_now;
  ClassLabel y_next;
  bool s_next = false;                    // y_next != y_now
  std::vector<float> gains_next;          // C entries at t + horizon
  std::vector<ClassLabel> hist_labels;    // labels at t-T_h+1 .. t
  float snr_db = 0.0F;
};

class WindowSet {
 public:
  WindowDims dims;
  std::shared_ptr<std::vector<float>> frames = std::make_shared<std::vector<float>>();
  std::vector<CsiWindow> windows;
  std::uint64_t scenario_hash = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }
  std::size_t n_frames() const { return frames->size() / dims.frame_size(); }

  std::span<const float> frame(std::int32_t id) const {
    return {frames->data() + static_cast<std::size_t>(id) * dims.frame_size(), dims.frame_size()};
  }

  /// Full T_h x N_BS x 2 x 2 x N_p x N_f input tensor of window i.
  std::vector<float> tensor(std::size_t i) const {
    std::vector<float> x;
    x.reserve(dims.window_size());
    for (auto id : windows.at(i).frame_ids) {
      const auto f = frame(id);
      x.insert(x.end(), f.begin(), f.end());
    }
    return x;
  }

  std::vector<std::int32_t> trajectory_ids() const {
    std::set<std::int32_t> s;
    for (const auto& w : windows) s.insert(w.trajectory);
    return {s.begin(), s.end()};
  }

  /// Windows whose trajectory is in `ids`, in original order; shares frames.
  WindowSet with_trajectories(const std::vector<std::int32_t>& ids) const {
    const std::set<std::int32_t> keep(ids.begin(), ids.end());
    WindowSet out;
    out.dims = dims;
    out.frames = frames;
    out.scenario_hash = scenario_hash;
    out.seed = seed;
    for (const auto& w : windows)
      if (keep.count(w.trajectory)) out.windows.push_back(w);
    return out;
  }

  double flip_fraction() const {
    if (windows.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& w : windows) n += w.s_next ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(windows.size());
  }
};

/// Writes the two views of one BS channel into `dst` ([view][re/im][port][subcarrier]).
inline void encode_dual_view(const Eigen::MatrixXcd& h_freq, std::span<float> dst) {
  const Eigen::MatrixXcd h_delay = to_delay_domain(h_freq);
  const auto np = static_cast<std::size_t>(h_freq.rows());
  const auto nf = static_cast<std::size_t>(h_freq.cols());
  const std::size_t plane = np * nf;
  const Eigen::MatrixXcd* views[2] = {&h_delay, &h_freq};
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t k = 0; k < np; ++k)
      for (std::size_t n = 0; n < nf; ++n) {
        const cplx z = (*views[v])(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
        dst[(v * 2 + 0) * plane + k * nf + n] = static_cast<float>(z.real());
        dst[(v * 2 + 1) * plane + k * nf + n] = static_cast<float>(z.imag());
      }
}

/// Rebuilds one view ([re/im][port][subcarrier]) as a complex matrix.
inline Eigen::MatrixXcd decode_view(std::span<const float> view, std::size_t n_ports, std::size_t n_subcarriers) {
  Eigen::MatrixXcd h(static_cast<Eigen::Index>(n_ports), static_cast<Eigen::Index>(n_subcarriers));
  const std::size_t plane = n_ports * n_subcarriers;
  for (std::size_t k = 0; k < n_ports; ++k)
    for (std::size_t n = 0; n < n_subcarriers; ++n)
      h(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) =
          cplx(view[k * n_subcarriers + n], view[plane + k * n_subcarriers + n]);
  return h;
}

/// Noiseless per-slot labels and gain vectors of one scene.
struct SlotLabels {
  std::vector<ClassLabel> best;
  std::vector<std::vector<double>> gains;
};

inline SlotLabels label_scene(const Scene& scene, const Codebook& cb) {
  const auto& cfg = scene.config();
  SlotLabels out;
  for (std::size_t t = 0; t < scene.n_slots(); ++t) {
    const auto paths = scene.paths(t);
    std::vector<ChannelSlice> slices;
    for (std::size_t b = 0; b < cfg.n_bs; ++b) slices.push_back(synth_channel(paths[b], cfg, t, b));
    GainVector gv = gain_vector(slices, cb, cfg.n_bs);
    out.best.push_back(gv.best_class);
    out.gains.push_back(std::move(gv.gains));
  }
  return out;
}

/// Generates n_trajectories trajectories of n_slots slots and cuts stride-1
/// windows. Labels come from the noiseless channel; frames hold the noisy one.
inline WindowSet build_windows(ScenarioConfig cfg, std::size_t n_trajectories, std::size_t n_slots,
                               const SnrSpec& snr, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.validate();
  if (n_slots < cfg.history_len + cfg.horizon)
    throw ConfigError("build_windows: n_slots must be >= history_len + horizon");
  if (snr.values.empty()) throw ConfigError("build_windows: empty SNR list");

  WindowSet set;
  set.dims = WindowDims::from(cfg);
  set.scenario_hash = scenario_hash(cfg);
  set.seed = seed;
  const std::size_t fsize = set.dims.frame_size();
  const std::size_t ssize = set.dims.slice_size();
  set.frames->reserve(n_trajectories * n_slots * fsize);
  const Codebook cb = make_codebook(cfg.n_ports, cfg.n_beam);

  for (std::size_t tr = 0; tr < n_trajectories; ++tr) {
    const Scene scene(cfg, build_trajectory(cfg, n_slots, tr), tr);
    Rng noise_rng(derive_seed(seed, tr, 3));
    const double traj_snr =
        snr.values.size() == 1 ? snr.values[0]
                               : snr.values[std::uniform_int_distribution<std::size_t>(0, snr.values.size() - 1)(
                                     noise_rng)];

    const auto first_frame = static_cast<std::int32_t>(set.n_frames());
    std::vector<ClassLabel> best(n_slots);
    std::vector<std::vector<double>> gains(n_slots);
    for (std::size_t t = 0; t < n_slots; ++t) {
      const auto paths = scene.paths(t);
      std::vector<ChannelSlice> slices;
      for (std::size_t b = 0; b < cfg.n_bs; ++b) slices.push_back(synth_channel(paths[b], cfg, t, b));
      GainVector gv = gain_vector(slices, cb, cfg.n_bs);
      best[t] = gv.best_class;
      gains[t] = std::move(gv.gains);

      const std::size_t base = set.frames->size();
      set.frames->resize(base + fsize);
      for (std::size_t b = 0; b < cfg.n_bs; ++b) {
        const NoisyChannel noisy = add_observation_noise(slices[b].h_freq, traj_snr, noise_rng);
        encode_dual_view(noisy.h_freq, std::span<float>(set.frames->data() + base + b * 2 * ssize, 2 * ssize));
      }
    }

    for (std::size_t t = cfg.history_len - 1; t + cfg.horizon < n_slots; ++t) {
      CsiWindow w;
      w.trajectory = static_cast<std::int32_t>(tr);
      w.end_slot = static_cast<std::int32_t>(t);
      for (std::size_t k = t + 1 - cfg.history_len; k <= t; ++k) {
        w.frame_ids.push_back(first_frame + static_cast<std::int32_t>(k));
        w.hist_labels.push_back(best[k]);
      }
      w.y_now = best[t];
      w.y_next = best[t + cfg.horizon];
      w.s_next = w.y_next != w.y_now;
      const auto& g = gains[t + cfg.horizon];
      w.gains_next.assign(g.begin(), g.end());
      w.snr_db = static_cast<float>(traj_snr);
      set.windows.push_back(std::move(w));
    }
  }
  return set;
}

struct AuditResult {
  std::size_t checked = 0;
  std::size_t label_mismatches = 0;
  double max_gain_rel_error = 0.0;
};

/// Regenerates the noiseless channels behind every `stride`-th window and
/// recomputes y_next and the stored gain vector.
inline AuditResult audit_labels(ScenarioConfig cfg, const WindowSet& set, std::size_t stride = 20) {
  cfg.seed = set.seed;
  AuditResult res;
  const Codebook cb = make_codebook(cfg.n_ports, cfg.n_beam);
  std::map<std::int32_t, std::int32_t> max_slot;
  for (const auto& w : set.windows) max_slot[w.trajectory] = std::max(max_slot[w.trajectory], w.end_slot);
  std::map<std::int32_t, SlotLabels> cache;
  for (std::size_t i = 0; i < set.size(); i += std::max<std::size_t>(stride, 1)) {
    const CsiWindow& w = set.windows[i];
    auto it = cache.find(w.trajectory);
    if (it == cache.end()) {
      const auto n = static_cast<std::size_t>(max_slot[w.trajectory]) + cfg.horizon + 1;
      const Scene scene(cfg, build_trajectory(cfg, std::max(n, cfg.history_len + cfg.horizon),
                                              static_cast<std::uint64_t>(w.trajectory)),
                        static_cast<std::uint64_t>(w.trajectory));
      it = cache.emplace(w.trajectory, label_scene(scene, cb)).first;
    }
    const auto t = static_cast<std::size_t>(w.end_slot) + cfg.horizon;
    ++res.checked;
    if (it->second.best[t] != w.y_next) ++res.label_mismatches;
    const auto& g = it->second.gains[t];
    const double gmax = *std::max_element(g.begin(), g.end());
    for (std::size_t c = 0; c < g.size(); ++c) {
      const double denom = gmax > 0 ? gmax : 1.0;
      res.max_gain_rel_error = std::max(res.max_gain_rel_error, std::abs(g[c] - w.gains_next[c]) / denom);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Splitting

struct Split {
  WindowSet train;
  WindowSet val;
  WindowSet test;
};

/// Trajectory-level split. Counts are rounded for train and val; test takes
/// the remainder.
inline Split split(const WindowSet& set, std::array<double, 3> fractions, std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("split: fractions must be non-negative");
  std::vector<std::int32_t> ids = set.trajectory_ids();
  Rng rng(derive_seed(seed, 0, 4));
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * n));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= ids.size())
    throw ConfigError("split: fractions produce an empty split for " + std::to_string(ids.size()) + " trajectories");
  auto part = [&](std::size_t b, std::size_t e) {
    std::vector<std::int32_t> p(ids.begin() + static_cast<std::ptrdiff_t>(b), ids.begin() + static_cast<std::ptrdiff_t>(e));
    return set.with_trajectories(p);
  };
  return {part(0, n_train), part(n_train, n_train + n_val), part(n_train + n_val, ids.size())};
}

/// Keeps ceil(fraction * n_trajectories) trajectories chosen with `seed`.
inline WindowSet subsample(const WindowSet& set, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample: fraction must lie in (0, 1]");
  if (fraction == 1.0) return set;
  std::vector<std::int32_t> ids = set.trajectory_ids();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size()) - 1e-9));
  if (keep == 0) throw ConfigError("subsample: empty selection");
  Rng rng(derive_seed(seed, 0, 5));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(keep);
  return set.with_trajectories(ids);
}

}  // namespace coopbeam
