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

// Acceptance suite. Each criterion prints one "criterion N: PASS|FAIL" line
// followed by indented detail lines; the exit code is 0 only on PASS.

#include "coopbeam/beam_oracle.hpp"
#include "coopbeam/dataset_io.hpp"
#include "coopbeam/experiments.hpp"
#include "coopbeam/nn/gradcheck.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <random>

using namespace coopbeam;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::vector<std::string> lines;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "ok    " : "FAIL  ") + what);
  }
  void note(const std::string& what) { lines.push_back("      " + what); }
};

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

std::string fix(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

void log_line(const std::string& s) { std::cout << "      " << s << std::endl; }

ScenarioConfig tiny_scenario() {
  ScenarioConfig c;
  c.n_bs = 2;
  c.bs_positions = {{-30.0, 10.0, 10.0}, {30.0, -10.0, 10.0}};
  c.n_beam = 4;
  c.n_ports = 4;
  c.n_subcarriers = 4;
  c.history_len = 4;
  c.ue_speed_mps = 30.0;
  return c;
}

ModelConfig tiny_model(HeadKind head = HeadKind::gated) {
  ModelConfig m;
  m.d_c = 6;
  m.d = 16;
  m.n_layers = 1;
  m.n_heads = 2;
  m.rank_r = 2;
  m.conv_channels = 4;
  m.head = head;
  return m;
}

template <class T>
void randomize(CrsModel<T>& m, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (auto* p : m.params())
    for (auto& x : p->tensor.mutable_value()) x = static_cast<T>(g(rng));
}

Eigen::MatrixXcd random_channel(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXcd h(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = cplx(g(rng), g(rng));
  return h;
}

/// The criterion-5 setup: default preset, 2000/250/250 windows at 10 dB.
ExperimentConfig learning_setup() {
  ExperimentConfig e;
  e.scenario = "umi_like";
  e.trajectories = 20;
  e.slots = 141;
  e.data_seed = 42;
  e.split = {0.8, 0.1, 0.1};
  e.snr_db = 10.0;
  e.train.epochs_stage1 = 15;
  e.train.warmup_enabled = false;
  e.train.seed = 42;
  return e;
}

// ---------------------------------------------------------------------------

Verdict oracle_suite() {
  Verdict v;
  Rng rng(1);
  const ScenarioConfig sc = preset_umi_like();

  double dft = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto h = random_channel(sc.n_ports, sc.n_subcarriers, rng);
    dft = std::max(dft, (to_freq_domain(to_delay_domain(h)) - h).norm() / h.norm());
  }
  v.check(dft <= 1e-12, "delay/frequency round trip max relative error " + sci(dft) + " <= 1e-12");

  const Codebook cb = make_codebook(sc.n_ports, sc.n_beam);
  double gain_err = 0.0;
  bool argmax_same = true;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int scene = 0; scene < 100; ++scene) {
    std::vector<ChannelSlice> slices(sc.n_bs);
    for (std::size_t b = 0; b < sc.n_bs; ++b) {
      slices[b].bs = b;
      slices[b].h_freq = random_channel(sc.n_ports, sc.n_subcarriers, rng) * (0.1 + u(rng));
    }
    const auto gv = gain_vector(slices, cb, sc.n_bs);
    const double px = 0.01 + 10.0 * u(rng), noise = 5.0 * u(rng);
    std::vector<double> power;
    for (std::size_t b = 0; b < sc.n_bs; ++b)
      for (std::size_t m = 0; m < sc.n_beam; ++m) {
        const auto& h = slices[b].h_freq;
        long double direct = 0.0L;
        for (Eigen::Index n = 0; n < h.cols(); ++n) {
          std::complex<long double> acc = 0.0L;
          for (Eigen::Index k = 0; k < h.rows(); ++k) {
            const cplx f = cb(k, static_cast<Eigen::Index>(m));
            acc += std::complex<long double>(f.real(), -f.imag()) * std::complex<long double>(h(k, n).real(), h(k, n).imag());
          }
          direct += std::norm(acc);
        }
        const double got = gv.gains[b * sc.n_beam + m];
        gain_err = std::max(gain_err, static_cast<double>(std::abs(static_cast<long double>(got) - direct) / direct));
        power.push_back(received_power_check(h, cb.col(static_cast<Eigen::Index>(m)), px, noise));
      }
    argmax_same = argmax_same && argmax_lowest(power) == gv.best_class.index();
  }
  v.check(gain_err <= 1e-9, "gain vector vs per-pair direct sum on 100 scenes: max relative error " + sci(gain_err) +
                                " <= 1e-9");
  v.check(argmax_same, "received-power argmax equals beam-gain argmax on 100 scenes at random P_x, sigma^2");

  const LabelSpace ls = label_space(sc);
  std::set<int> seen;
  bool bijective = ls.size() == 128;
  for (std::size_t b = 1; b <= ls.n_bs; ++b)
    for (std::size_t m = 1; m <= ls.n_beam; ++m) {
      const ClassLabel c = ls.joint(b, m);
      seen.insert(c.value);
      bijective = bijective && ls.split(c) == std::pair{b, m};
    }
  bijective = bijective && seen.size() == 128 && *seen.begin() == 1 && *seen.rbegin() == 128;
  v.check(bijective, "joint label flatten/split is a bijection over all 128 classes");
  return v;
}

Verdict gradient_suite() {
  using V = nn::Var<double>;
  Verdict v;
  auto rand_var = [](nn::Shape s, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    std::vector<double> x(nn::numel_of(s));
    for (auto& e : x) e = g(rng);
    return V::make(std::move(s), x, true);
  };
  auto probe = [&](const V& y) {
    V w = rand_var(y.shape(), 99);
    w.set_requires_grad(false);
    return nn::sum(nn::mul(y, w));
  };
  double worst = 0.0;
  std::string worst_op;
  std::size_t n_ops = 0;
  auto check = [&](const std::string& op, const std::function<V()>& f, std::vector<nn::GradCheckInput> in) {
    const auto rep = nn::check_gradients(f, in, 1e-4);
    ++n_ops;
    if (rep.max_rel_error >= worst) {
      worst = rep.max_rel_error;
      worst_op = op;
    }
  };
  using namespace nn;
  V a = rand_var({3, 4}, 10), b = rand_var({3, 4}, 11), c = rand_var({4}, 12), s = rand_var({3}, 13);
  check("add", [&] { return probe(add(a, c)); }, {{"a", a}, {"c", c}});
  check("sub", [&] { return probe(sub(a, b)); }, {{"a", a}, {"b", b}});
  check("mul", [&] { return probe(mul(a, b)); }, {{"a", a}, {"b", b}});
  check("affine", [&] { return probe(affine(a, -0.7, 0.3)); }, {{"a", a}});
  check("mul_rows", [&] { return probe(mul_rows(a, s)); }, {{"a", a}, {"s", s}});
  check("sigmoid", [&] { return probe(sigmoid(a)); }, {{"a", a}});
  check("tanh", [&] { return probe(nn::tanh(a)); }, {{"a", a}});
  check("gelu", [&] { return probe(gelu(a)); }, {{"a", a}});
  check("mean", [&] { return mean(a); }, {{"a", a}});
  check("scale", [&] { return probe(scale(a, 1.7)); }, {{"a", a}});
  V x = rand_var({5, 3, 4}, 20), w = rand_var({6, 4}, 21), bias = rand_var({6}, 22);
  check("linear", [&] { return probe(linear(x, w, bias)); }, {{"x", x}, {"w", w}, {"b", bias}});
  V ma = rand_var({3, 4}, 23), mb = rand_var({4, 5}, 24), mbt = rand_var({5, 4}, 25);
  check("matmul", [&] { return probe(matmul(ma, mb)); }, {{"a", ma}, {"b", mb}});
  check("matmul_t", [&] { return probe(matmul(ma, mbt, true)); }, {{"a", ma}, {"bt", mbt}});
  V p = rand_var({2, 3, 4}, 26), q = rand_var({2, 4, 2}, 27);
  check("bmm", [&] { return probe(bmm(p, q)); }, {{"p", p}, {"q", q}});
  V img = rand_var({2, 2, 6, 5}, 30), k = rand_var({3, 2, 3, 3}, 31, 0.3), kb = rand_var({3}, 32);
  check("conv2d", [&] { return probe(conv2d(img, k, kb, {2, 1})); }, {{"x", img}, {"w", k}, {"b", kb}});
  check("global_mean_pool", [&] { return probe(global_mean_pool(img)); }, {{"x", img}});
  check("instance_norm", [&] { return probe(instance_norm(img, 1e-5)); }, {{"x", img}});
  V h = rand_var({4, 6}, 33), g = rand_var({6}, 34), be = rand_var({6}, 35);
  check("layer_norm", [&] { return probe(layer_norm(h, g, be, 1e-5)); }, {{"h", h}, {"g", g}, {"b", be}});
  V z = rand_var({3, 5}, 40);
  check("softmax", [&] { return probe(softmax(z)); }, {{"z", z}});
  V aq = rand_var({2, 4, 3}, 41), ak = rand_var({2, 4, 3}, 42), av = rand_var({2, 4, 3}, 43);
  std::vector<double> mask(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) mask[i * 4 + j] = kMaskedScore<double>;
  check("attention", [&] { return probe(attention(aq, ak, av, std::span<const double>(mask))); },
        {{"q", aq}, {"k", ak}, {"v", av}});
  V table = rand_var({5, 3}, 44);
  check("gather_rows", [&] { return probe(gather_rows(table, {4, 0, 4, 2})); }, {{"table", table}});
  V t3 = rand_var({2, 3, 4}, 45);
  check("permute", [&] { return probe(permute(t3, {2, 0, 1})); }, {{"x", t3}});
  check("reshape", [&] { return probe(reshape(t3, {6, 4})); }, {{"x", t3}});
  V r = rand_var({6, 2}, 46);
  check("mean_groups", [&] { return probe(mean_groups(r, 3)); }, {{"r", r}});
  V logits = rand_var({4, 5}, 50);
  const std::vector<std::size_t> tgt{1, 0, 4, 4};
  check("cross_entropy_logits", [&] { return cross_entropy_logits(logits, tgt); }, {{"z", logits}});
  check("nll_probs", [&] { return nll_probs(softmax(logits), tgt); }, {{"z", logits}});
  V gl = rand_var({4, 1}, 51);
  const std::vector<double> st{1, 0, 0, 1};
  check("bce_logits", [&] { return bce_logits(gl, std::span<const double>(st)); }, {{"g", gl}});
  v.check(worst <= 1e-3, std::to_string(n_ops) + " ops: worst relative error " + sci(worst) + " (" + worst_op +
                             ") <= 1e-3");

  const auto set = build_windows(tiny_scenario(), 3, 12, SnrSpec::fixed(10.0), 1);
  for (auto kind : {HeadKind::gated, HeadKind::ungated, HeadKind::hierarchical}) {
    CrsModel<double> m(tiny_model(kind), set.dims);
    randomize(m, 40, 0.4);
    const std::vector<std::size_t> idx{0, 4, 9, 13};
    std::vector<GradCheckInput> in;
    for (auto* blk : m.stage1_params()) in.push_back({blk->name, blk->tensor});
    const auto rep = check_gradients([&] { return stage1_forward(m, set, idx, 0.5).total; }, in, 1e-4, 6);
    v.check(rep.max_rel_error <= 1e-3, "tiny model end to end, " + to_string(kind) + " head: worst " +
                                           sci(rep.max_rel_error) + " over " + std::to_string(rep.n_checked) +
                                           " entries <= 1e-3");
  }
  CrsModel<double> m(tiny_model(), set.dims);
  randomize(m, 41, 0.4);
  std::vector<GradCheckInput> in;
  for (auto* blk : m.stage0_params()) in.push_back({blk->name, blk->tensor});
  const std::vector<std::size_t> idx{1, 5, 10};
  const auto rep = check_gradients(
      [&] {
        Rng mask_rng(7);
        return stage0_loss(m, set, idx, 0.5, mask_rng);
      },
      in, 1e-4, 6);
  v.check(rep.max_rel_error <= 1e-3, "tiny model masked-label objective: worst " + sci(rep.max_rel_error) + " <= 1e-3");
  return v;
}

Verdict head_semantics() {
  Verdict v;
  const auto set = build_windows(tiny_scenario(), 3, 12, SnrSpec::fixed(10.0), 1);
  std::vector<std::size_t> all(set.size());
  std::iota(all.begin(), all.end(), 0);
  const auto y_now = label_indices(set, all, false);

  double sum_err = 0.0;
  for (auto kind : {HeadKind::gated, HeadKind::ungated, HeadKind::hierarchical})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CrsModel<double> m(tiny_model(kind), set.dims);
      randomize(m, 30 + seed, 1.5);
      const auto out = m.head(m.encode(make_frame_batch<double>(set, std::span<const std::size_t>(all), 1)).last, y_now);
      const std::size_t c = set.dims.n_classes();
      for (std::size_t i = 0; i < set.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += out.probs.value()[i * c + k];
        sum_err = std::max(sum_err, std::abs(s - 1.0));
      }
    }
  v.check(sum_err <= 1e-6, "fused outputs sum to 1 within " + sci(sum_err) + " <= 1e-6 (all heads)");

  CrsModel<double> m(tiny_model(), set.dims);
  randomize(m, 21, 0.3);
  for (auto& x : m.find("head.gate.weight")->tensor.mutable_value()) x = 0.0;
  Rng rng(22);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> hv(4 * 16);
  for (auto& x : hv) x = g(rng);
  const auto h = nn::Var<double>::make({4, 16}, hv);
  const std::vector<std::size_t> y{0, 3, 5, 7};
  auto max_diff = [](std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
  };
  m.find("head.gate.bias")->tensor.mutable_value()[0] = -60.0;
  auto out = m.head(h, y);
  const double closed = max_diff(out.probs.value(), out.p_stable.value());
  m.find("head.gate.bias")->tensor.mutable_value()[0] = 60.0;
  out = m.head(h, y);
  const double open = max_diff(out.probs.value(), out.p_flip.value());
  v.check(std::max(closed, open) <= 1e-12, "forced gate endpoints reproduce the branches: " + sci(closed) + ", " +
                                               sci(open) + " <= 1e-12");

  // prior logits through U V^T materialized as a full C x C matrix
  CrsModel<double> pm(tiny_model(), set.dims);
  randomize(pm, 25, 0.8);
  const std::size_t c = 8, rr = 2;
  const auto uu = pm.find("head.prior.u")->tensor.value();
  const auto vv = pm.find("head.prior.v")->tensor.value();
  double prior_err = 0.0;
  const auto prior = pm.transition_prior(y);
  for (std::size_t b = 0; b < y.size(); ++b)
    for (std::size_t i = 0; i < c; ++i) {
      double full = 0.0;
      for (std::size_t k = 0; k < rr; ++k) full += uu[i * rr + k] * vv[y[b] * rr + k];
      prior_err = std::max(prior_err, std::abs(prior.value()[b * c + i] - full));
    }
  v.check(prior_err <= 1e-10, "low-rank prior equals the materialized U V^T column: " + sci(prior_err) + " <= 1e-10");

  ModelConfig fc = tiny_model();
  fc.frozen_backbone = true;
  CrsModel<float> fm(fc, set.dims);
  fm.sync_requires_grad();
  std::map<std::string, std::vector<float>> before;
  for (const auto* p : std::as_const(fm).params()) before[p->name].assign(p->tensor.value().begin(), p->tensor.value().end());
  TrainConfig tc;
  nn::Adam<float> opt(nn::AdamConfig{1e-2});
  const std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5, 6, 7};
  for (int step = 0; step < 100; ++step) stage1_step(fm, set, batch, tc, opt);
  std::size_t frozen = 0, frozen_same = 0, trainable_moved = 0;
  for (const auto* p : std::as_const(fm).params()) {
    const bool same = std::equal(p->tensor.value().begin(), p->tensor.value().end(), before[p->name].begin());
    if (!p->trainable && p->name.rfind("aux.", 0) != 0) {
      ++frozen;
      frozen_same += same ? 1 : 0;
    } else if (p->trainable && !same) {
      ++trainable_moved;
    }
  }
  v.check(frozen > 0 && frozen == frozen_same && trainable_moved > 0,
          "frozen backbone: " + std::to_string(frozen_same) + "/" + std::to_string(frozen) +
              " frozen blocks bit-identical after 100 steps, " + std::to_string(trainable_moved) + " trainable blocks moved");
  return v;
}

bool identities_hold(const MetricReport& r, std::string& why) {
  for (const auto* reg : {&r.overall, &r.stable, &r.flip}) {
    if (reg->n == 0) continue;
    double pa = -1.0, pn = -1.0;
    for (auto k : r.ks) {
      const double a = reg->acc.at(k), n = reg->nbg.at(k);
      if (n < a) why = "nbg < acc at K=" + std::to_string(k);
      if (a < pa || n < pn) why = "not monotone at K=" + std::to_string(k);
      pa = a;
      pn = n;
    }
  }
  return why.empty();
}

Verdict metric_identities() {
  Verdict v;
  std::vector<std::pair<std::string, WindowSet>> sets;
  sets.emplace_back("umi_like 6x60 @10 dB", build_windows(preset_umi_like(), 6, 60, SnrSpec::fixed(10.0), 42));
  sets.emplace_back("uma_like 4x60 mixed SNR", build_windows(preset_uma_like(), 4, 60, SnrSpec::mixed(), 7));
  sets.emplace_back("small scene 6x40 noiseless", build_windows(tiny_scenario(), 6, 40, SnrSpec::noiseless(), 3));
  const std::vector<std::size_t> ks{1, 2, 3, 5};
  for (auto& [name, set] : sets) {
    const auto per = evaluate(persistence_predictor(), set, ks);
    v.check(per.stable.acc.at(1) == 1.0 && per.flip.acc.at(1) == 0.0 && per.n_flip > 0,
            name + ": persistence stable acc@1 = " + fix(per.stable.acc.at(1)) + ", flip acc@1 = " +
                fix(per.flip.acc.at(1)) + " (" + std::to_string(per.n_flip) + " flips)");
    const auto ora = evaluate(oracle_predictor(), set, ks);
    bool perfect = true;
    for (const auto* reg : {&ora.overall, &ora.stable, &ora.flip})
      for (auto k : ks) perfect = perfect && reg->acc.at(k) == 1.0 && reg->nbg.at(k) == 1.0;
    v.check(perfect, name + ": oracle scores 1 for every K and regime");
    ModelConfig mc;
    if (set.dims.n_classes() < 4 * mc.rank_r) mc = tiny_model();
    CrsModel<float> model(mc, set.dims);
    const std::vector<std::pair<std::string, MetricReport>> reports{
        {"persistence", per}, {"oracle", ora}, {"uniform", evaluate(uniform_random_predictor(5), set, ks)},
        {"untrained model", evaluate(model_predictor(model), set, ks)}};
    for (const auto& [pred, rep] : reports) {
      std::string why;
      v.check(identities_hold(rep, why), name + ", " + pred + ": nbg >= acc and both monotone in K" +
                                             (why.empty() ? "" : " (" + why + ")"));
    }
  }
  return v;
}

Verdict learning_signal(const fs::path& work) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig e = learning_setup();
  const Split data = experiment_data(e, resolve_scenario(e.scenario), e.snr_db);
  v.check(data.train.size() == 2000 && data.val.size() == 250 && data.test.size() == 250,
          "windows " + std::to_string(data.train.size()) + "/" + std::to_string(data.val.size()) + "/" +
              std::to_string(data.test.size()) + " (expected 2000/250/250)");
  auto run = train_run(data, e.model, e.train, log_line);
  save_checkpoint((work / "learning_signal.cbp").string(), run.model, data.train.scenario_hash);
  std::ofstream(work / "learning_signal_history.csv") << history_csv(run.result.history);
  const auto model = evaluate(model_predictor(run.model), data.test, e.ks);
  const auto per = evaluate(persistence_predictor(), data.test, e.ks);
  std::ofstream(work / "learning_signal_model.csv") << report_csv(model);
  std::ofstream(work / "learning_signal_persistence.csv") << report_csv(per);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  v.check(model.overall.acc.at(1) >= per.overall.acc.at(1) + 0.02,
          "test acc@1 " + fix(model.overall.acc.at(1)) + " >= persistence " + fix(per.overall.acc.at(1)) + " + 0.02");
  v.check(model.overall.nbg.at(1) >= per.overall.nbg.at(1),
          "test nbg@1 " + fix(model.overall.nbg.at(1)) + " >= persistence " + fix(per.overall.nbg.at(1)));
  v.check(model.flip.acc.at(3) > per.flip.acc.at(3),
          "flip acc@3 " + fix(model.flip.acc.at(3)) + " > persistence " + fix(per.flip.acc.at(3)));
  v.check(secs <= 600.0, "runtime " + fix(secs) + " s <= 600 s");
  std::istringstream text(report_text(model) + "persistence\n" + report_text(per));
  for (std::string line; std::getline(text, line);) v.note(line);
  return v;
}

Verdict gate_ablation(const fs::path& work) {
  Verdict v;
  ExperimentConfig e = learning_setup();
  e.seeds = {42, 43, 44};
  const auto res = ablate_gate(e, log_line);
  write_table((work / "gate_ablation").string(), res.table);
  for (std::size_t i = 0; i < res.seeds.size(); ++i)
    v.note("seed " + std::to_string(res.seeds[i]) + ": gated acc@2 " + fix(res.gated[i].overall.acc.at(2)) +
           ", ungated acc@2 " + fix(res.ungated[i].overall.acc.at(2)));
  std::istringstream text(res.table.text());
  for (std::string line; std::getline(text, line);) v.note(line);
  v.check(res.mean_acc(true, 2) >= res.mean_acc(false, 2), "mean acc@2 gated " + fix(res.mean_acc(true, 2)) +
                                                               " >= ungated " + fix(res.mean_acc(false, 2)));
  return v;
}

Verdict warmup_comparison(const fs::path& work) {
  Verdict v;
  ExperimentConfig e = learning_setup();
  e.train.epochs_stage0 = 5;
  const auto c = compare_warmup(e, log_line);
  write_table((work / "warmup_comparison").string(), c.table);
  bool grid = c.paired.size() == e.train.epochs_stage1 + 1;
  for (std::size_t i = 0; i < c.paired.size(); ++i) grid = grid && c.paired[i].stage1_epoch == i;
  v.check(grid, "paired table emitted with " + std::to_string(c.paired.size()) + " rows on a shared stage-1 grid");
  std::istringstream text(c.table.text());
  for (std::string line; std::getline(text, line);) v.note(line);
  const auto& last = c.paired.back();
  v.note(std::string("direction (reported only): final val loss warm ") + fix(last.warm_val_loss) + " vs cold " +
         fix(last.cold_val_loss) + ", final val nbg@1 warm " + fix(last.warm_val_nbg1) + " vs cold " +
         fix(last.cold_val_nbg1));
  return v;
}

Verdict transfer_harness(const fs::path& work) {
  Verdict v;
  ExperimentConfig e = learning_setup();
  e.trajectories = 10;
  e.slots = 60;
  e.train.epochs_stage1 = 2;
  const Split source = experiment_data(e, preset_umi_like(), e.snr_db);
  auto run = train_run(source, e.model, e.train, log_line);
  const std::string ckpt = (work / "transfer_source.cbp").string();
  save_checkpoint(ckpt, run.model, source.train.scenario_hash);

  const Split target = experiment_data(e, preset_uma_like(), e.snr_db);
  try {
    const auto rep = transfer_eval(ckpt, target.test, e.ks);
    v.check(true, "umi_like checkpoint evaluated on uma_like: acc@1 " + fix(rep.overall.acc.at(1)) + ", nbg@1 " +
                      fix(rep.overall.nbg.at(1)) + " over " + std::to_string(rep.n_samples) + " windows");
  } catch (const std::exception& ex) {
    v.check(false, std::string("transfer to uma_like failed: ") + ex.what());
  }
  const auto plain = evaluate(model_predictor(run.model), source.test, e.ks);
  const auto same = transfer_eval(ckpt, source.test, e.ks);
  v.check(report_csv(plain) == report_csv(same),
          "transfer_eval with identical presets reproduces plain evaluate bit-identically");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coopbeam acceptance suite"};
  std::vector<int> criteria;
  std::string workdir = "acceptance_work";
  app.add_option("--criterion", criteria, "criteria to run (1-8); default all")->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "directory for tables, histories and checkpoints");
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty()) criteria = {1, 2, 3, 4, 5, 6, 7, 8};
  fs::create_directories(workdir);
  const fs::path work(workdir);

  static const char* names[] = {"",
                                "oracle suite",
                                "gradient suite",
                                "head semantics",
                                "metric identities",
                                "learning signal",
                                "gate ablation",
                                "warm-up comparison",
                                "transfer harness"};
  bool all = true;
  for (int c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      switch (c) {
        case 1: v = oracle_suite(); break;
        case 2: v = gradient_suite(); break;
        case 3: v = head_semantics(); break;
        case 4: v = metric_identities(); break;
        case 5: v = learning_signal(work); break;
        case 6: v = gate_ablation(work); break;
        case 7: v = warmup_comparison(work); break;
        case 8: v = transfer_harness(work); break;
      }
    } catch (const std::exception& ex) {
      v.check(false, std::string("error: ") + ex.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c == 1) v.check(secs <= 30.0, "runtime " + fix(secs) + " s <= 30 s");
    if (c == 2) v.check(secs <= 120.0, "runtime " + fix(secs) + " s <= 120 s");
    std::cout << "criterion " << c << " (" << names[c] << "): " << (v.pass ? "PASS" : "FAIL") << "  [" << fix(secs)
              << " s]\n";
    for (const auto& l : v.lines) std::cout << "  " << l << '\n';
    std::cout.flush();
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
