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

#include "coopbeam/beam_oracle.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace coopbeam;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::MatrixXcd random_channel(Rng& rng, Eigen::Index np, Eigen::Index nf, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Eigen::MatrixXcd h(np, nf);
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = cplx(g(rng), g(rng));
  return h;
}

std::vector<ChannelSlice> random_scene(Rng& rng, const ScenarioConfig& c) {
  std::vector<ChannelSlice> s;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t b = 0; b < c.n_bs; ++b) {
    // per-BS power spread so the best class lands in varying blocks
    const double scale = std::pow(10.0, 2.0 * u(rng) - 1.0);
    s.push_back({random_channel(rng, static_cast<Eigen::Index>(c.n_ports), static_cast<Eigen::Index>(c.n_subcarriers), scale), b, 0});
  }
  return s;
}

// Explicit double loop over (b, m), subcarriers and ports.
std::vector<double> brute_force_gains(const std::vector<ChannelSlice>& s, std::size_t n_beam) {
  std::vector<double> g;
  for (const auto& sl : s) {
    const auto np = static_cast<std::size_t>(sl.h_freq.rows());
    for (std::size_t m = 0; m < n_beam; ++m) {
      double total = 0.0;
      for (Eigen::Index n = 0; n < sl.h_freq.cols(); ++n) {
        cplx acc = 0.0;
        for (std::size_t k = 0; k < np; ++k) {
          const double phase = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(m) / static_cast<double>(n_beam);
          const cplx f = std::polar(1.0 / std::sqrt(static_cast<double>(np)), phase);
          acc += std::conj(f) * sl.h_freq(static_cast<Eigen::Index>(k), n);
        }
        total += std::norm(acc);
      }
      g.push_back(total);
    }
  }
  return g;
}

}  // namespace

TEST_CASE("first codebook column is constant 1/sqrt(N_p)") {
  const Codebook cb = make_codebook(32, 32);
  for (Eigen::Index k = 0; k < 32; ++k) {
    CHECK_THAT(cb(k, 0).real(), WithinAbs(1.0 / std::sqrt(32.0), 1e-15));
    CHECK(cb(k, 0).imag() == 0.0);
  }
}

TEST_CASE("codebook entries have magnitude 1/sqrt(N_p) and unit-norm columns") {
  const Codebook cb = make_codebook(32, 32);
  for (Eigen::Index i = 0; i < cb.size(); ++i) CHECK_THAT(std::abs(cb(i)), WithinAbs(0.17677669529663687, 1e-12));
  for (Eigen::Index m = 0; m < cb.cols(); ++m) CHECK_THAT(cb.col(m).norm(), WithinAbs(1.0, 1e-12));
}

TEST_CASE("square codebook has mutually orthogonal columns") {
  const Codebook cb = make_codebook(32, 32);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < 32; ++i)
    for (Eigen::Index j = 0; j < 32; ++j)
      if (i != j) worst = std::max(worst, std::abs(cb.col(i).dot(cb.col(j))));
  CHECK(worst <= 1e-12);
}

TEST_CASE("codebook phases match the closed form") {
  const Codebook cb = make_codebook(32, 16);
  for (Eigen::Index m = 0; m < 16; ++m)
    for (Eigen::Index k = 0; k < 32; ++k) {
      const cplx want = std::polar(1.0 / std::sqrt(32.0), -2.0 * kPi * static_cast<double>(k * m) / 16.0);
      CHECK(std::abs(cb(k, m) - want) <= 1e-12);
    }
}

TEST_CASE("beam gain examples") {
  const Codebook cb = make_codebook(32, 32);
  CHECK(beam_gain(Eigen::MatrixXcd::Zero(32, 64), cb.col(3)) == 0.0);

  Eigen::MatrixXcd h(32, 64);
  for (Eigen::Index n = 0; n < 64; ++n) h.col(n) = cb.col(5);
  CHECK_THAT(beam_gain(h, cb.col(5)), WithinRel(64.0, 1e-12));

  // single path whose array response is sqrt(N_p) f
  const Eigen::MatrixXcd hs = std::sqrt(32.0) * h;
  double direct = 0.0;
  for (Eigen::Index n = 0; n < 64; ++n) {
    cplx acc = 0.0;
    for (Eigen::Index k = 0; k < 32; ++k) acc += std::conj(cb(k, 5)) * hs(k, n);
    direct += std::norm(acc);
  }
  CHECK_THAT(beam_gain(hs, cb.col(5)), WithinRel(2048.0, 1e-12));
  CHECK_THAT(direct, WithinRel(2048.0, 1e-12));
}

TEST_CASE("beam gain rejects mismatched dimensions") {
  const Codebook cb = make_codebook(16, 8);
  CHECK_THROWS_AS(beam_gain(Eigen::MatrixXcd::Zero(32, 4), cb.col(0)), DimensionError);
}

TEST_CASE("beam gain scales with |c|^2") {
  Rng rng(7);
  const Codebook cb = make_codebook(32, 32);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXcd h = random_channel(rng, 32, 64);
    const cplx c(std::normal_distribution<double>(0, 2)(rng), std::normal_distribution<double>(0, 2)(rng));
    for (Eigen::Index m = 0; m < 32; m += 5)
      CHECK_THAT(beam_gain(Eigen::MatrixXcd(c * h), cb.col(m)), WithinRel(std::norm(c) * beam_gain(h, cb.col(m)), 1e-10));
  }
}

TEST_CASE("joint label examples and errors") {
  const LabelSpace ls{4, 32};
  CHECK(ls.joint(1, 1).value == 1);
  CHECK(ls.joint(4, 32).value == 128);
  CHECK(ls.joint(2, 5).value == 37);
  CHECK_THROWS_AS(ls.joint(0, 1), std::out_of_range);
  CHECK_THROWS_AS(ls.joint(5, 1), std::out_of_range);
  CHECK_THROWS_AS(ls.joint(1, 33), std::out_of_range);
  CHECK_THROWS_AS(ls.split(ClassLabel(0)), std::out_of_range);
  CHECK_THROWS_AS(ls.split(ClassLabel(129)), std::out_of_range);
}

TEST_CASE("joint label and split are inverse over the full grid") {
  const LabelSpace ls{4, 32};
  std::vector<bool> seen(ls.size() + 1, false);
  for (std::size_t b = 1; b <= 4; ++b)
    for (std::size_t m = 1; m <= 32; ++m) {
      const ClassLabel c = ls.joint(b, m);
      CHECK(ls.split(c) == std::make_pair(b, m));
      CHECK_FALSE(seen[static_cast<std::size_t>(c.value)]);
      seen[static_cast<std::size_t>(c.value)] = true;
    }
  for (int v = 1; v <= 128; ++v) {
    const auto [b, m] = ls.split(ClassLabel(v));
    CHECK(ls.joint(b, m).value == v);
  }
}

TEST_CASE("all-zero channels give zero gains and class 1") {
  ScenarioConfig c;
  std::vector<ChannelSlice> s;
  for (std::size_t b = 0; b < 4; ++b) s.push_back({Eigen::MatrixXcd::Zero(32, 64), b, 0});
  const auto gv = gain_vector(s, make_codebook(32, 32), 4);
  for (double g : gv.gains) CHECK(g == 0.0);
  CHECK(gv.best_class.value == 1);
  CHECK(gv.best_gain == 0.0);
}

TEST_CASE("single active BS puts the best class in its block") {
  Rng rng(3);
  const Codebook cb = make_codebook(32, 32);
  for (std::size_t active = 0; active < 4; ++active) {
    std::vector<ChannelSlice> s;
    for (std::size_t b = 0; b < 4; ++b)
      s.push_back({b == active ? random_channel(rng, 32, 64) : Eigen::MatrixXcd::Zero(32, 64), b, 0});
    const auto gv = gain_vector(s, cb, 4);
    CHECK(gv.best_class.index() / 32 == active);
  }
}

TEST_CASE("gain vector rejects a missing BS slice") {
  std::vector<ChannelSlice> s(3, {Eigen::MatrixXcd::Zero(32, 64), 0, 0});
  CHECK_THROWS_AS(gain_vector(s, make_codebook(32, 32), 4), DimensionError);
}

TEST_CASE("gain vector matches brute-force recomputation on random scenes") {
  ScenarioConfig c;
  Rng rng(11);
  const Codebook cb = make_codebook(c.n_ports, c.n_beam);
  double worst = 0.0;
  for (int scene = 0; scene < 100; ++scene) {
    const auto s = random_scene(rng, c);
    const auto gv = gain_vector(s, cb, c.n_bs);
    const auto ref = brute_force_gains(s, c.n_beam);
    REQUIRE(ref.size() == gv.gains.size());
    std::size_t best = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(gv.gains[i] - ref[i]) / ref[i]);
      if (ref[i] > ref[best]) best = i;
    }
    CHECK(gv.best_class.index() == best);
    CHECK(gv.best_gain == gv.gains[gv.best_class.index()]);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("gain vector matches brute force on simulated scenes") {
  ScenarioConfig c;
  const Codebook cb = make_codebook(c.n_ports, c.n_beam);
  for (std::uint64_t tr = 0; tr < 5; ++tr) {
    const Scene scene(c, build_trajectory(c, 60, tr), tr);
    for (std::size_t t = 0; t < 60; t += 15) {
      const auto paths = scene.paths(t);
      std::vector<ChannelSlice> s;
      for (std::size_t b = 0; b < c.n_bs; ++b) s.push_back(synth_channel(paths[b], c, t, b));
      const auto gv = gain_vector(s, cb, c.n_bs);
      const auto ref = brute_force_gains(s, c.n_beam);
      for (std::size_t i = 0; i < ref.size(); ++i)
        if (ref[i] > 0) CHECK(std::abs(gv.gains[i] - ref[i]) <= 1e-9 * ref[i]);
      CHECK(gv.best_class.index() == argmax_lowest(ref));
    }
  }
}

TEST_CASE("tied maximum gains resolve to the lowest class") {
  const Codebook cb = make_codebook(32, 32);
  Eigen::MatrixXcd h(32, 64);
  for (Eigen::Index n = 0; n < 64; ++n) h.col(n) = cb.col(7);
  std::vector<ChannelSlice> s;
  for (std::size_t b = 0; b < 4; ++b) s.push_back({b == 1 || b == 3 ? h : Eigen::MatrixXcd::Zero(32, 64), b, 0});
  const auto gv = gain_vector(s, cb, 4);
  CHECK(gv.best_class == LabelSpace{4, 32}.joint(2, 8));
  CHECK(argmax_lowest(std::vector<double>{1.0, 3.0, 3.0, 2.0}) == 1);
}

TEST_CASE("received power with unit symbol power and no noise equals beam gain") {
  Rng rng(5);
  const Codebook cb = make_codebook(32, 32);
  const Eigen::MatrixXcd h = random_channel(rng, 32, 64);
  for (Eigen::Index m = 0; m < 32; ++m)
    CHECK_THAT(received_power_check(h, cb.col(m), 1.0, 0.0), WithinRel(beam_gain(h, cb.col(m)), 1e-12));
}

TEST_CASE("received power closed form at P_x = 2 and noise 0.5") {
  Rng rng(6);
  const Codebook cb = make_codebook(32, 32);
  const Eigen::MatrixXcd h = random_channel(rng, 32, 64);
  for (Eigen::Index m = 0; m < 32; m += 3)
    CHECK_THAT(received_power_check(h, cb.col(m), 2.0, 0.5), WithinRel(2.0 * beam_gain(h, cb.col(m)) + 64 * 0.5, 1e-12));
}

TEST_CASE("received power argmax equals beam gain argmax") {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Codebook cb = make_codebook(32, 32);
  for (int scene = 0; scene < 100; ++scene) {
    const Eigen::MatrixXcd h = random_channel(rng, 32, 64);
    const double px = 0.01 + 10.0 * u(rng);
    const double s2 = 5.0 * u(rng);
    std::vector<double> g, p;
    for (Eigen::Index m = 0; m < 32; ++m) {
      g.push_back(beam_gain(h, cb.col(m)));
      p.push_back(received_power_check(h, cb.col(m), px, s2));
    }
    CHECK(argmax_lowest(g) == argmax_lowest(p));
  }
}

TEST_CASE("received power rejects invalid powers") {
  const Codebook cb = make_codebook(4, 4);
  const Eigen::MatrixXcd h = Eigen::MatrixXcd::Ones(4, 2);
  CHECK_THROWS_AS(received_power_check(h, cb.col(0), 0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(received_power_check(h, cb.col(0), 1.0, -1.0), ConfigError);
}
