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

// Parametric multi-BS geometric channel simulator.
//
// A UE drives along a 2-D street polyline at constant speed. Each BS sees one
// LoS path computed from exact geometry plus (L-1) NLoS paths that reuse the
// LoS parameters with fixed per-trajectory angle/delay offsets. Every path
// carries an on/off blockage state that evolves as a two-state Markov chain.
// The wideband channel of one BS at one slot is an N_p x N_f complex matrix.

#pragma once

#include "coopbeam/common.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace coopbeam {

struct ScenarioConfig {
  std::size_t n_bs = 4;
  std::size_t n_beam = 32;
  std::size_t n_ports = 32;
  std::size_t n_subcarriers = 64;
  std::size_t history_len = 16;
  std::size_t horizon = 1;
  double slot_duration_s = 0.02;
  double carrier_hz = 28.0e9;
  double subcarrier_spacing_hz = 960.0e3;
  std::vector<Eigen::Vector3d> bs_positions = {
      {-70.0, 15.0, 10.0}, {0.0, -15.0, 10.0}, {45.0, 20.0, 10.0}, {80.0, 80.0, 10.0}};
  std::vector<Eigen::Vector2d> street_segments = {{-120.0, 0.0}, {60.0, 0.0}, {60.0, 120.0}};
  double ue_speed_mps = 15.0;
  double ue_height_m = 1.5;
  std::size_t n_paths_per_bs = 3;
  double blockage_on_rate = 0.005;
  double blockage_off_rate = 0.1;
  double nlos_gain_db = -10.0;
  std::size_t array_rows = 0;  // vertical port rows; 0 picks the most square grid
  std::uint64_t seed = 42;

  std::size_t n_classes() const { return n_bs * n_beam; }

  /// f_n for 0-based subcarrier n, centred on the carrier.
  double subcarrier_hz(std::size_t n) const {
    return carrier_hz + (static_cast<double>(n) - static_cast<double>(n_subcarriers) / 2.0) * subcarrier_spacing_hz;
  }

  double wavelength_m() const { return kSpeedOfLight / carrier_hz; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("scenario: " + m); };
    if (n_bs < 1) fail("n_bs must be >= 1");
    if (n_beam < 2) fail("n_beam must be >= 2");
    if (n_ports < 2) fail("n_ports must be >= 2");
    if (n_subcarriers < 1) fail("n_subcarriers must be >= 1");
    if (history_len < 1) fail("history_len must be >= 1");
    if (horizon < 1) fail("horizon must be >= 1");
    if (bs_positions.size() != n_bs) fail("bs_positions must list n_bs positions");
    if (!(slot_duration_s > 0.0)) fail("slot_duration_s must be > 0");
    if (!(carrier_hz > 0.0)) fail("carrier_hz must be > 0");
    if (!(subcarrier_spacing_hz > 0.0)) fail("subcarrier frequencies must be strictly increasing");
    if (ue_speed_mps < 0.0) fail("ue_speed_mps must be >= 0");
    if (n_paths_per_bs < 1) fail("n_paths_per_bs must be >= 1");
    for (double r : {blockage_on_rate, blockage_off_rate})
      if (!(r >= 0.0 && r <= 1.0)) fail("blockage rates must lie in [0,1]");
    if (street_segments.size() < 2) fail("street_segments needs at least two points");
    if (array_rows != 0 && n_ports % array_rows != 0) fail("array_rows must divide n_ports");
  }
};

/// Horizontal x vertical port grid for a planar array with n_ports elements.
/// With rows = 0 picks the most square factorization with n_h >= n_v
/// (32 -> 8 x 4); otherwise n_v = rows.
struct ArrayLayout {
  std::size_t n_h = 1;
  std::size_t n_v = 1;
};

inline ArrayLayout array_layout(std::size_t n_ports, std::size_t rows = 0) {
  if (rows != 0) {
    if (n_ports % rows != 0) throw ConfigError("array_layout: rows must divide n_ports");
    return {n_ports / rows, rows};
  }
  std::size_t v = 1;
  for (std::size_t k = 1; k * k <= n_ports; ++k)
    if (n_ports % k == 0) v = k;
  return {n_ports / v, v};
}

/// Half-wavelength planar array response, unit-modulus entries. Port index
/// k = iv * n_h + ih.
inline Eigen::VectorXcd array_response(std::size_t n_ports, double azimuth_rad, double elevation_rad,
                                       std::size_t rows = 0) {
  const ArrayLayout lay = array_layout(n_ports, rows);
  const double u = std::sin(azimuth_rad) * std::cos(elevation_rad);
  const double w = std::sin(elevation_rad);
  Eigen::VectorXcd a(static_cast<Eigen::Index>(n_ports));
  for (std::size_t iv = 0; iv < lay.n_v; ++iv)
    for (std::size_t ih = 0; ih < lay.n_h; ++ih) {
      const double phase = kPi * (static_cast<double>(ih) * u + static_cast<double>(iv) * w);
      a[static_cast<Eigen::Index>(iv * lay.n_h + ih)] = std::polar(1.0, phase);
    }
  return a;
}

// ---------------------------------------------------------------------------
// Trajectory

struct UeState {
  Eigen::Vector3d position;
  Eigen::Vector3d velocity;
};

using Trajectory = std::vector<UeState>;

namespace detail {

struct Polyline {
  std::vector<Eigen::Vector2d> pts;
  std::vector<double> cum;  // arc length at each vertex

  explicit Polyline(const std::vector<Eigen::Vector2d>& p) : pts(p) {
    cum.push_back(0.0);
    for (std::size_t i = 1; i < pts.size(); ++i) cum.push_back(cum.back() + (pts[i] - pts[i - 1]).norm());
  }
  double length() const { return cum.back(); }

  // Point and unit tangent at arc length s in [0, length].
  std::pair<Eigen::Vector2d, Eigen::Vector2d> at(double s) const {
    std::size_t seg = 0;
    while (seg + 2 < pts.size() && (s > cum[seg + 1] || cum[seg + 1] - cum[seg] == 0.0)) ++seg;
    double len = cum[seg + 1] - cum[seg];
    while (len == 0.0 && seg + 2 < pts.size()) {
      ++seg;
      len = cum[seg + 1] - cum[seg];
    }
    const Eigen::Vector2d dir = (pts[seg + 1] - pts[seg]) / len;
    return {pts[seg] + dir * std::clamp(s - cum[seg], 0.0, len), dir};
  }
};

}  // namespace detail

/// UE positions and velocities for n_slots slots. The start point and travel
/// direction are drawn from the (cfg.seed, stream) random stream; the UE
/// bounces at the polyline ends.
inline Trajectory build_trajectory(const ScenarioConfig& cfg, std::size_t n_slots, std::uint64_t stream = 0) {
  if (n_slots < cfg.history_len + cfg.horizon)
    throw ConfigError("build_trajectory: n_slots must be >= history_len + horizon");
  const detail::Polyline line(cfg.street_segments);
  const double total = line.length();
  if (!(total > 0.0)) throw ConfigError("build_trajectory: street polyline has zero length");

  Rng rng(derive_seed(cfg.seed, stream, 1));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double s0 = uni(rng) * total;
  const double dir0 = uni(rng) < 0.5 ? 1.0 : -1.0;

  Trajectory traj;
  traj.reserve(n_slots);
  for (std::size_t t = 0; t < n_slots; ++t) {
    // Unfold the bounce: position on a loop of length 2*total.
    double s = s0 + dir0 * cfg.ue_speed_mps * cfg.slot_duration_s * static_cast<double>(t);
    s = std::fmod(s, 2.0 * total);
    if (s < 0.0) s += 2.0 * total;
    double heading = dir0;
    if (s > total) {
      s = 2.0 * total - s;
      heading = -heading;
    }
    const auto [p, tangent] = line.at(s);
    UeState st;
    st.position = {p.x(), p.y(), cfg.ue_height_m};
    st.velocity = {heading * cfg.ue_speed_mps * tangent.x(), heading * cfg.ue_speed_mps * tangent.y(), 0.0};
    traj.push_back(st);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Paths

struct PathParams {
  cplx gain;
  double delay_s = 0.0;
  double doppler_hz = 0.0;
  double azimuth_rad = 0.0;
  double elevation_rad = 0.0;
  bool blocked = false;
};

/// All paths of one BS at one slot. Index 0 is the LoS path.
using PathSet = std::vector<PathParams>;

struct ChannelSlice {
  Eigen::MatrixXcd h_freq;  // N_p x N_f
  std::size_t bs = 0;
  std::size_t slot = 0;
};

/// One realization of the propagation environment along a trajectory.
/// NLoS offsets and the full blockage timeline are drawn at construction, so
/// path queries afterwards are pure.
class Scene {
 public:
  Scene(const ScenarioConfig& cfg, Trajectory trajectory, std::uint64_t stream = 0)
      : cfg_(cfg), traj_(std::move(trajectory)) {
    cfg_.validate();
    const std::size_t n_b = cfg_.n_bs;
    const std::size_t n_l = cfg_.n_paths_per_bs;
    Rng rng(derive_seed(cfg_.seed, stream, 2));
    std::normal_distribution<double> ang(0.0, 10.0 * kPi / 180.0);
    std::exponential_distribution<double> excess(1.0 / 100e-9);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    offsets_.resize(n_b * n_l);
    for (std::size_t b = 0; b < n_b; ++b)
      for (std::size_t l = 1; l < n_l; ++l) {
        auto& o = offsets_[b * n_l + l];
        o.d_az = ang(rng);
        o.d_el = ang(rng);
        o.excess_delay_s = excess(rng);
        o.phase = std::polar(1.0, 2.0 * kPi * uni(rng));
      }

    blocked_.assign(traj_.size() * n_b * n_l, 0);
    for (std::size_t t = 1; t < traj_.size(); ++t)
      for (std::size_t k = 0; k < n_b * n_l; ++k) {
        const bool prev = blocked_[(t - 1) * n_b * n_l + k] != 0;
        const double u = uni(rng);
        const bool now = prev ? !(u < cfg_.blockage_off_rate) : (u < cfg_.blockage_on_rate);
        blocked_[t * n_b * n_l + k] = now ? 1 : 0;
      }
  }

  const ScenarioConfig& config() const { return cfg_; }
  const Trajectory& trajectory() const { return traj_; }
  std::size_t n_slots() const { return traj_.size(); }

  /// Path parameters of every BS at `slot` (constant within the slot).
  std::vector<PathSet> paths(std::size_t slot) const {
    if (slot >= traj_.size()) throw ConfigError("Scene::paths: trajectory does not cover slot");
    const std::size_t n_l = cfg_.n_paths_per_bs;
    const UeState& ue = traj_[slot];
    const double nlos_amp = std::pow(10.0, cfg_.nlos_gain_db / 20.0);
    std::vector<PathSet> out(cfg_.n_bs);
    for (std::size_t b = 0; b < cfg_.n_bs; ++b) {
      const Eigen::Vector3d d = ue.position - cfg_.bs_positions[b];
      const double dist = d.norm();
      if (!(dist > 1e-9)) throw ConfigError("Scene::paths: UE coincides with a BS position");
      const Eigen::Vector3d u = d / dist;
      PathParams los;
      los.gain = cplx(cfg_.wavelength_m() / (4.0 * kPi * dist), 0.0);
      los.delay_s = dist / kSpeedOfLight;
      los.doppler_hz = -ue.velocity.dot(u) * cfg_.carrier_hz / kSpeedOfLight;
      los.azimuth_rad = std::atan2(d.y(), d.x());
      los.elevation_rad = std::asin(std::clamp(d.z() / dist, -1.0, 1.0));

      PathSet& ps = out[b];
      ps.reserve(n_l);
      for (std::size_t l = 0; l < n_l; ++l) {
        PathParams p = los;
        if (l > 0) {
          const auto& o = offsets_[b * n_l + l];
          p.gain = los.gain * nlos_amp * o.phase;
          p.delay_s = los.delay_s + o.excess_delay_s;
          p.azimuth_rad = los.azimuth_rad + o.d_az;
          p.elevation_rad = los.elevation_rad + o.d_el;
        }
        p.blocked = blocked_[(slot * cfg_.n_bs + b) * n_l + l] != 0;
        ps.push_back(p);
      }
    }
    return out;
  }

 private:
  struct NlosOffset {
    double d_az = 0.0;
    double d_el = 0.0;
    double excess_delay_s = 0.0;
    cplx phase{1.0, 0.0};
  };

  ScenarioConfig cfg_;
  Trajectory traj_;
  std::vector<NlosOffset> offsets_;    // [bs][path]
  std::vector<std::uint8_t> blocked_;  // [slot][bs][path]
};

inline std::vector<PathSet> evolve_paths(const Scene& scene, std::size_t slot) { return scene.paths(slot); }

namespace detail {

// exp(j 2pi a b). The product a*b can be thousands of cycles, so it is formed
// in extended precision and only the fractional part is scaled by 2pi.
inline cplx phasor_cycles(long double a, long double b) {
  const long double c = a * b;
  return std::polar(1.0, 2.0 * kPi * static_cast<double>(c - std::floor(c)));
}

}  // namespace detail

/// h[n] = sum_l alpha_l exp(-j2pi f_n tau_l) exp(j2pi nu_l t_s) a(phi_l, theta_l),
/// blocked paths excluded, t_s = slot * slot_duration.
inline ChannelSlice synth_channel(const PathSet& paths, const ScenarioConfig& cfg, std::size_t slot,
                                  std::size_t bs = 0) {
  const auto np = static_cast<Eigen::Index>(cfg.n_ports);
  const auto nf = static_cast<Eigen::Index>(cfg.n_subcarriers);
  ChannelSlice out;
  out.bs = bs;
  out.slot = slot;
  out.h_freq = Eigen::MatrixXcd::Zero(np, nf);
  const long double ts = static_cast<long double>(slot) * static_cast<long double>(cfg.slot_duration_s);
  Eigen::RowVectorXcd coeff(nf);
  for (const PathParams& p : paths) {
    if (p.blocked) continue;
    const cplx doppler = detail::phasor_cycles(p.doppler_hz, ts);
    for (Eigen::Index n = 0; n < nf; ++n) {
      const double fn = cfg.subcarrier_hz(static_cast<std::size_t>(n));
      coeff[n] = p.gain * std::conj(detail::phasor_cycles(fn, p.delay_s)) * doppler;
    }
    out.h_freq.noalias() += array_response(cfg.n_ports, p.azimuth_rad, p.elevation_rad, cfg.array_rows) * coeff;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario files: flat "key = value" text. Vector-valued keys use ',' between
// coordinates and ';' between points. '#' starts a comment.

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("scenario key '" + key + "': not a number: '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long d = std::stoull(v, &pos);
      if (trim(v.substr(pos)).empty()) return d;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("scenario key '" + key + "': not a non-negative integer: '" + v + "'");
}

inline std::vector<std::vector<double>> parse_points(const std::string& key, const std::string& v, std::size_t dim) {
  std::vector<std::vector<double>> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (trim(item).empty()) continue;
    std::vector<double> pt;
    std::stringstream is(item);
    std::string c;
    while (std::getline(is, c, ',')) pt.push_back(parse_double(key, trim(c)));
    if (pt.size() != dim)
      throw ConfigError("scenario key '" + key + "': expected " + std::to_string(dim) + " coordinates per point");
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace detail

/// Canonical text form; parse_scenario(format_scenario(c)) == c.
inline std::string format_scenario(const ScenarioConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "n_bs = " << c.n_bs << "\n";
  os << "n_beam = " << c.n_beam << "\n";
  os << "n_ports = " << c.n_ports << "\n";
  os << "n_subcarriers = " << c.n_subcarriers << "\n";
  os << "history_len = " << c.history_len << "\n";
  os << "horizon = " << c.horizon << "\n";
  os << "slot_duration_s = " << fmt_double(c.slot_duration_s) << "\n";
  os << "carrier_hz = " << fmt_double(c.carrier_hz) << "\n";
  os << "subcarrier_spacing_hz = " << fmt_double(c.subcarrier_spacing_hz) << "\n";
  os << "bs_positions = ";
  for (std::size_t i = 0; i < c.bs_positions.size(); ++i) {
    const auto& p = c.bs_positions[i];
    os << (i ? "; " : "") << fmt_double(p.x()) << "," << fmt_double(p.y()) << "," << fmt_double(p.z());
  }
  os << "\n";
  os << "street_segments = ";
  for (std::size_t i = 0; i < c.street_segments.size(); ++i) {
    const auto& p = c.street_segments[i];
    os << (i ? "; " : "") << fmt_double(p.x()) << "," << fmt_double(p.y());
  }
  os << "\n";
  os << "ue_speed_mps = " << fmt_double(c.ue_speed_mps) << "\n";
  os << "ue_height_m = " << fmt_double(c.ue_height_m) << "\n";
  os << "n_paths_per_bs = " << c.n_paths_per_bs << "\n";
  os << "blockage_on_rate = " << fmt_double(c.blockage_on_rate) << "\n";
  os << "blockage_off_rate = " << fmt_double(c.blockage_off_rate) << "\n";
  os << "nlos_gain_db = " << fmt_double(c.nlos_gain_db) << "\n";
  os << "array_rows = " << c.array_rows << "\n";
  os << "seed = " << c.seed << "\n";
  return os.str();
}

/// Keys absent from the text keep their ScenarioConfig defaults.
inline ScenarioConfig parse_scenario(const std::string& text) {
  using namespace detail;
  ScenarioConfig c;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("scenario line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "n_bs") c.n_bs = parse_uint(key, val);
    else if (key == "n_beam") c.n_beam = parse_uint(key, val);
    else if (key == "n_ports") c.n_ports = parse_uint(key, val);
    else if (key == "n_subcarriers") c.n_subcarriers = parse_uint(key, val);
    else if (key == "history_len") c.history_len = parse_uint(key, val);
    else if (key == "horizon") c.horizon = parse_uint(key, val);
    else if (key == "slot_duration_s") c.slot_duration_s = parse_double(key, val);
    else if (key == "carrier_hz") c.carrier_hz = parse_double(key, val);
    else if (key == "subcarrier_spacing_hz") c.subcarrier_spacing_hz = parse_double(key, val);
    else if (key == "bs_positions") {
      c.bs_positions.clear();
      for (const auto& p : parse_points(key, val, 3)) c.bs_positions.emplace_back(p[0], p[1], p[2]);
    } else if (key == "street_segments") {
      c.street_segments.clear();
      for (const auto& p : parse_points(key, val, 2)) c.street_segments.emplace_back(p[0], p[1]);
    } else if (key == "ue_speed_mps") c.ue_speed_mps = parse_double(key, val);
    else if (key == "ue_height_m") c.ue_height_m = parse_double(key, val);
    else if (key == "n_paths_per_bs") c.n_paths_per_bs = parse_uint(key, val);
    else if (key == "blockage_on_rate") c.blockage_on_rate = parse_double(key, val);
    else if (key == "blockage_off_rate") c.blockage_off_rate = parse_double(key, val);
    else if (key == "nlos_gain_db") c.nlos_gain_db = parse_double(key, val);
    else if (key == "array_rows") c.array_rows = parse_uint(key, val);
    else if (key == "seed") c.seed = parse_uint(key, val);
    else throw ConfigError("scenario line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

inline std::uint64_t scenario_hash(const ScenarioConfig& c) {
  const std::string s = format_scenario(c);
  return fnv1a(s.data(), s.size());
}

/// Urban-micro-like street canyon: low BS masts, linear port rows, a
/// pedestrian-to-cyclist UE sampled every 100 ms, mild blockage.
inline ScenarioConfig preset_umi_like() {
  ScenarioConfig c;
  c.array_rows = 1;
  c.ue_speed_mps = 8.0;
  c.slot_duration_s = 0.1;
  c.blockage_on_rate = 0.002;
  return c;
}

/// Urban-macro-like variant of the same street: tall masts, more frequent
/// blockage, stronger scattering.
inline ScenarioConfig preset_uma_like() {
  ScenarioConfig c = preset_umi_like();
  for (auto& p : c.bs_positions) p.z() = 25.0;
  c.blockage_on_rate = 0.004;
  c.blockage_off_rate = 0.08;
  c.nlos_gain_db = -6.0;
  return c;
}

inline ScenarioConfig preset_by_name(const std::string& name) {
  if (name == "umi_like") return preset_umi_like();
  if (name == "uma_like") return preset_uma_like();
  throw ConfigError("unknown scenario preset: " + name);
}

}  // namespace coopbeam
