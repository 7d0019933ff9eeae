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

#include "coopbeam/checkpoint.hpp"
#include "coopbeam/dataset_io.hpp"

#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace coopbeam;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "coopbeam_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string in_work(const std::string& name) { return (work_dir() / name).string(); }

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string log = in_work("last_output.txt");
  const std::string cmd = std::string(COOPBEAM_CLI) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  out << body;
}

const std::string& small_scenario() {
  static const std::string p = [] {
    const std::string path = in_work("small.cfg");
    write_file(path,
               "n_bs = 2\nbs_positions = -30,10,10; 30,-10,10\nn_beam = 4\nn_ports = 4\nn_subcarriers = 4\n"
               "history_len = 4\nue_speed_mps = 30\n");
    return path;
  }();
  return p;
}

const std::string& small_experiment() {
  static const std::string p = [] {
    const std::string path = in_work("exp.cfg");
    write_file(path, "scenario = " + small_scenario() +
                         "\ntrajectories = 10\nslots = 20\nsplit = 0.6, 0.2, 0.2\nsnr_list = 0, 10\nfractions = 1\n"
                         "seeds = 1\nmodel.d_c = 6\nmodel.d = 16\nmodel.n_layers = 1\nmodel.n_heads = 2\n"
                         "model.rank_r = 2\nmodel.conv_channels = 4\ntrain.epochs_stage0 = 1\n"
                         "train.epochs_stage1 = 1\ntrain.batch_size = 8\n");
    return path;
  }();
  return p;
}

const std::string& trained_checkpoint() {
  static const std::string p = [] {
    const std::string data = in_work("train.cbw");
    REQUIRE(run("generate --scenario " + small_scenario() + " --out " + data + " --trajectories 10 --slots 20 --seed 3")
                .code == 0);
    const std::string ckpt = in_work("model.cbp");
    const auto r = run("train --data " + data + " --out " + ckpt + " --config " + small_experiment() +
                       " --history " + in_work("history.csv") + " --test-out " + in_work("test.cbw"));
    INFO(r.output);
    REQUIRE(r.code == 0);
    return ckpt;
  }();
  return p;
}

}  // namespace

TEST_CASE("generate writes a readable dataset") {
  const std::string out = in_work("gen.cbw");
  const auto r = run("generate --scenario " + small_scenario() + " --out " + out +
                     " --snr 5 --trajectories 3 --slots 12 --seed 7");
  INFO(r.output);
  REQUIRE(r.code == 0);
  const auto set = read_dataset(out);
  CHECK(set.size() == 3 * (12 - 4));
  CHECK(set.seed == 7);
  for (const auto& w : set.windows) CHECK(w.snr_db == 5.0F);
}

TEST_CASE("generate accepts mixed and noiseless SNR") {
  CHECK(run("generate --scenario " + small_scenario() + " --out " + in_work("m.cbw") +
            " --snr mixed --trajectories 2 --slots 10")
            .code == 0);
  CHECK(run("generate --scenario " + small_scenario() + " --out " + in_work("n.cbw") +
            " --snr inf --trajectories 2 --slots 10")
            .code == 0);
}

TEST_CASE("generate rejects bad input") {
  auto r = run("generate --scenario nowhere --out " + in_work("x.cbw"));
  CHECK(r.code != 0);
  CHECK(r.output.find("nowhere") != std::string::npos);
  r = run("generate --scenario " + small_scenario() + " --out " + in_work("x.cbw") + " --slots 3");
  CHECK(r.code != 0);
  r = run("generate --scenario " + small_scenario());
  CHECK(r.code != 0);
  r = run("generate --scenario " + small_scenario() + " --out " + in_work("x.cbw") + " --snr loud");
  CHECK(r.code != 0);
}

TEST_CASE("train writes checkpoint, history and test split") {
  const std::string ckpt = trained_checkpoint();
  const auto loaded = load_checkpoint(ckpt);
  CHECK(loaded.model.config().d == 16);
  std::ifstream h(in_work("history.csv"));
  std::string header;
  std::getline(h, header);
  CHECK(header == "epoch,stage,train_loss,val_loss,val_nbg1,val_acc1,wallclock_s");
  CHECK(read_dataset(in_work("test.cbw")).size() > 0);
}

TEST_CASE("eval reports metrics and regimes") {
  const std::string ckpt = trained_checkpoint();
  const std::string csv = in_work("report.csv");
  auto r = run("eval --ckpt " + ckpt + " --data " + in_work("test.cbw") + " --k 1,2,3 --regime --csv " + csv);
  INFO(r.output);
  REQUIRE(r.code == 0);
  CHECK(r.output.find("acc@3") != std::string::npos);
  CHECK(r.output.find("flip") != std::string::npos);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "regime,n,metric,k,value");

  r = run("eval --ckpt " + ckpt + " --data " + in_work("test.cbw") + " --k 1");
  REQUIRE(r.code == 0);
  CHECK(r.output.find("\nstable ") == std::string::npos);
}

TEST_CASE("eval errors exit nonzero") {
  const std::string ckpt = trained_checkpoint();
  auto r = run("eval --ckpt " + ckpt + " --data " + in_work("absent.cbw"));
  CHECK(r.code != 0);
  r = run("eval --ckpt " + ckpt + " --data " + in_work("test.cbw") + " --k 9");
  CHECK(r.code != 0);

  const std::string other = in_work("other.cfg");
  write_file(other, "n_bs = 2\nbs_positions = -30,10,10; 30,-10,10\nn_beam = 8\nn_ports = 8\nn_subcarriers = 4\n"
                    "history_len = 4\n");
  REQUIRE(run("generate --scenario " + other + " --out " + in_work("other.cbw") + " --trajectories 2 --slots 10").code ==
          0);
  r = run("eval --ckpt " + ckpt + " --data " + in_work("other.cbw"));
  CHECK(r.code != 0);
  CHECK(r.output.find("model was built for") != std::string::npos);
}

TEST_CASE("sweeps write CSV and text tables") {
  for (const std::string kind : {"snr", "fraction", "ablation", "transfer", "warmup"}) {
    const std::string prefix = in_work("sweep_" + kind);
    std::string cfg = small_experiment();
    if (kind == "transfer") {
      cfg = in_work("exp_transfer.cfg");
      std::ifstream in(small_experiment());
      std::stringstream ss;
      ss << in.rdbuf() << "target_scenario = " << small_scenario() << "\n";
      write_file(cfg, ss.str());
    }
    const auto r = run("sweep --kind " + kind + " --config " + cfg + " --out " + prefix);
    INFO(kind << "\n" << r.output);
    CHECK(r.code == 0);
    CHECK(fs::exists(prefix + ".csv"));
    CHECK(fs::exists(prefix + ".txt"));
  }
}

TEST_CASE("sweep errors exit nonzero") {
  CHECK(run("sweep --kind snr --config " + in_work("none.cfg")).code != 0);
  CHECK(run("sweep --kind sideways --config " + small_experiment()).code != 0);
  const std::string bad = in_work("bad.cfg");
  write_file(bad, "colour = blue\n");
  const auto r = run("sweep --kind snr --config " + bad);
  CHECK(r.code != 0);
  CHECK(r.output.find("colour") != std::string::npos);
}

TEST_CASE("missing subcommand is an error") { CHECK(run("").code != 0); }
