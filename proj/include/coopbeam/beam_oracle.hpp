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

// DFT codebook, wideband beam gain and the flat joint BS-beam label space.

#pragma once

#include "coopbeam/common.hpp"
#include "coopbeam/scene_sim.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace coopbeam {

/// N_p x N_beam matrix; column m-1 is beam m. Shared by all BSs.
using Codebook = Eigen::MatrixXcd;

/// Column m (1-based) holds (1/sqrt(N_p)) exp(-j 2pi k (m-1) / N_beam), k = 0..N_p-1.
inline Codebook make_codebook(std::size_t n_ports, std::size_t n_beam) {
  const auto np = static_cast<Eigen::Index>(n_ports);
  const auto nb = static_cast<Eigen::Index>(n_beam);
  Codebook cb(np, nb);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_ports));
  for (Eigen::Index m = 0; m < nb; ++m)
    for (Eigen::Index k = 0; k < np; ++k) {
      // reduce k*m modulo n_beam first so the phase stays exact for large k
      const auto km = static_cast<double>((k * m) % nb);
      cb(k, m) = std::polar(scale, -2.0 * kPi * km / static_cast<double>(n_beam));
    }
  return cb;
}

/// sum_n |f^H h[n]|^2 over the columns of h.
inline double beam_gain(const Eigen::MatrixXcd& h_freq, const Eigen::VectorXcd& beam) {
  if (h_freq.rows() != beam.size())
    throw DimensionError("beam_gain: channel has " + std::to_string(h_freq.rows()) + " ports, beam has " +
                         std::to_string(beam.size()));
  return (beam.adjoint() * h_freq).squaredNorm();
}

inline double beam_gain(const ChannelSlice& slice, const Eigen::VectorXcd& beam) {
  return beam_gain(slice.h_freq, beam);
}

/// Average received power summed over subcarriers when `beam` serves the
/// channel: sum_n (|h[n]^H f|^2 P_x + sigma^2). With beam-independent P_x and
/// sigma^2 its argmax over the codebook equals the beam-gain argmax.
inline double received_power_check(const Eigen::MatrixXcd& h_freq, const Eigen::VectorXcd& beam, double symbol_power,
                                   double noise_var) {
  if (!(symbol_power > 0.0)) throw ConfigError("received_power_check: symbol power must be > 0");
  if (noise_var < 0.0) throw ConfigError("received_power_check: noise variance must be >= 0");
  if (h_freq.rows() != beam.size()) throw DimensionError("received_power_check: port count mismatch");
  double total = 0.0;
  for (Eigen::Index n = 0; n < h_freq.cols(); ++n)
    total += std::norm(h_freq.col(n).dot(beam)) * symbol_power + noise_var;
  return total;
}

/// Flat joint label space: y = (b-1) N_beam + m for 1-based (b, m).
struct LabelSpace {
  std::size_t n_bs = 1;
  std::size_t n_beam = 1;

  std::size_t size() const { return n_bs * n_beam; }

  ClassLabel joint(std::size_t b, std::size_t m) const {
    if (b < 1 || b > n_bs || m < 1 || m > n_beam)
      throw std::out_of_range("joint_label: (b=" + std::to_string(b) + ", m=" + std::to_string(m) +
                              ") outside " + std::to_string(n_bs) + " x " + std::to_string(n_beam));
    return ClassLabel(static_cast<int>((b - 1) * n_beam + m));
  }

  /// Inverse of joint(): returns 1-based (b, m).
  std::pair<std::size_t, std::size_t> split(ClassLabel c) const {
    if (c.value < 1 || static_cast<std::size_t>(c.value) > size())
      throw std::out_of_range("split_label: class " + std::to_string(c.value) + " outside 1.." +
                              std::to_string(size()));
    const std::size_t i = c.index();
    return {i / n_beam + 1, i % n_beam + 1};
  }
};

inline LabelSpace label_space(const ScenarioConfig& cfg) { return {cfg.n_bs, cfg.n_beam}; }

struct GainVector {
  std::vector<double> gains;  // indexed by ClassLabel::index()
  ClassLabel best_class;
  double best_gain = 0.0;
};

/// Index of the largest entry; ties resolve to the lowest index.
template <class Range>
std::size_t argmax_lowest(const Range& r) {
  std::size_t best = 0;
  std::size_t i = 0;
  for (auto it = std::begin(r); it != std::end(r); ++it, ++i)
    if (*it > *(std::begin(r) + static_cast<std::ptrdiff_t>(best))) best = i;
  return best;
}

/// Gains of every (b, m) pair for one slot; slices[b] is BS b+1.
inline GainVector gain_vector(std::span<const ChannelSlice> slices, const Codebook& codebook, std::size_t n_bs) {
  if (slices.size() != n_bs)
    throw DimensionError("gain_vector: expected " + std::to_string(n_bs) + " BS slices, got " +
                         std::to_string(slices.size()));
  const auto n_beam = static_cast<std::size_t>(codebook.cols());
  GainVector gv;
  gv.gains.resize(n_bs * n_beam);
  for (std::size_t b = 0; b < n_bs; ++b) {
    if (slices[b].h_freq.rows() != codebook.rows()) throw DimensionError("gain_vector: port count mismatch");
    // row m of (C^H H) is f_m^H h[n] over n
    const Eigen::MatrixXcd proj = codebook.adjoint() * slices[b].h_freq;
    for (std::size_t m = 0; m < n_beam; ++m)
      gv.gains[b * n_beam + m] = proj.row(static_cast<Eigen::Index>(m)).squaredNorm();
  }
  const std::size_t best = argmax_lowest(gv.gains);
  gv.best_class = ClassLabel::from_index(best);
  gv.best_gain = gv.gains[best];
  return gv;
}

}  // namespace coopbeam
