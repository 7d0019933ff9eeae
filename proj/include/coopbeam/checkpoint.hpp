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

// "CBP1" parameter checkpoints.
//
//   char[4] "CBP1"; u32 version = 1
//   u32 meta_len; char meta[meta_len]      "key = value" lines
//   u32 n_blocks
//   per block: u32 name_len; char name[name_len]; u8 trainable;
//              u32 rank; u64 dims[rank]; f32 values[prod(dims)]
//
// The metadata carries the model configuration and window dims, so a
// checkpoint alone is enough to rebuild the model.

#pragma once

#include "coopbeam/binary_io.hpp"
#include "coopbeam/model.hpp"

#include <map>
#include <sstream>

namespace coopbeam {

inline constexpr char kCheckpointMagic[4] = {'C', 'B', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  ModelConfig model;
  WindowDims dims;
  std::uint64_t scenario_hash = 0;
  std::map<std::string, std::string> extra;
};

inline std::string format_checkpoint_meta(const CheckpointMeta& m) {
  std::ostringstream os;
  const ModelConfig& c = m.model;
  os << "d_c = " << c.d_c << "\nd = " << c.d << "\nn_layers = " << c.n_layers << "\nn_heads = " << c.n_heads
     << "\npatch_len = " << c.patch_len << "\nrank_r = " << c.rank_r << "\nconv_channels = " << c.conv_channels
     << "\nfrozen_backbone = " << (c.frozen_backbone ? 1 : 0) << "\nmask_mode = " << to_string(c.mask_mode)
     << "\nhead = " << to_string(c.head) << "\ninit_seed = " << c.init_seed << "\nn_bs = " << m.dims.n_bs
     << "\nn_beam = " << m.dims.n_beam << "\nn_ports = " << m.dims.n_ports << "\nn_subcarriers = " << m.dims.n_subcarriers
     << "\nhistory_len = " << m.dims.history_len << "\nscenario_hash = " << m.scenario_hash << "\n";
  for (const auto& [k, v] : m.extra) os << "x." << k << " = " << v << "\n";
  return os.str();
}

inline CheckpointMeta parse_checkpoint_meta(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto num = [&](const char* k) -> std::uint64_t {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError(std::string("CBP1: metadata lacks '") + k + "'");
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw FormatError(std::string("CBP1: bad value for '") + k + "'");
    }
  };
  CheckpointMeta m;
  m.model.d_c = num("d_c");
  m.model.d = num("d");
  m.model.n_layers = num("n_layers");
  m.model.n_heads = num("n_heads");
  m.model.patch_len = num("patch_len");
  m.model.rank_r = num("rank_r");
  m.model.conv_channels = num("conv_channels");
  m.model.frozen_backbone = num("frozen_backbone") != 0;
  m.model.init_seed = num("init_seed");
  try {
    m.model.mask_mode = parse_mask_mode(kv.at("mask_mode"));
    m.model.head = parse_head_kind(kv.at("head"));
  } catch (const std::exception& e) {
    throw FormatError(std::string("CBP1: ") + e.what());
  }
  m.dims.n_bs = num("n_bs");
  m.dims.n_beam = num("n_beam");
  m.dims.n_ports = num("n_ports");
  m.dims.n_subcarriers = num("n_subcarriers");
  m.dims.history_len = num("history_len");
  m.scenario_hash = num("scenario_hash");
  for (const auto& [k, v] : kv)
    if (k.rfind("x.", 0) == 0) m.extra[k.substr(2)] = v;
  return m;
}

inline void save_checkpoint(const std::string& path, const CrsModel<float>& model, std::uint64_t scenario_hash = 0,
                            const std::map<std::string, std::string>& extra = {}) {
  io::Writer w(path);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string meta = format_checkpoint_meta({model.config(), model.dims(), scenario_hash, extra});
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  const auto params = model.params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name.data(), p->name.size());
    w.u8(p->trainable ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(p->tensor.rank()));
    for (auto dim : p->tensor.shape()) w.u64(dim);
    w.f32s(p->tensor.value());
  }
  w.close();
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  CrsModel<float> model;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  io::Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("'" + path + "' is not a CBP1 checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported CBP1 version " + std::to_string(version));
  const std::uint32_t meta_len = r.u32();
  if (meta_len > r.remaining()) throw FormatError("CBP1: metadata length exceeds file size");
  std::string meta(meta_len, '\0');
  r.bytes(meta.data(), meta_len);
  const CheckpointMeta parsed = parse_checkpoint_meta(meta);
  auto build = [&] {
    try {
      return CrsModel<float>(parsed.model, parsed.dims);
    } catch (const ConfigError& e) {
      throw FormatError(std::string("CBP1: invalid model configuration: ") + e.what());
    }
  };
  LoadedCheckpoint out{parsed, build()};

  const std::uint32_t n_blocks = r.u32();
  auto params = out.model.params();
  if (n_blocks != params.size())
    throw FormatError("CBP1: " + std::to_string(n_blocks) + " blocks, model expects " + std::to_string(params.size()));
  std::vector<bool> seen(params.size(), false);
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len > 4096) throw FormatError("CBP1: implausible block name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const bool trainable = r.u8() != 0;
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("CBP1: implausible rank for block '" + name + "'");
    nn::Shape shape(rank);
    for (auto& dim : shape) dim = r.u64();
    nn::ParamBlock<float>* p = out.model.find(name);
    if (!p) throw FormatError("CBP1: unknown block '" + name + "'");
    if (p->tensor.shape() != shape)
      throw FormatError("CBP1: block '" + name + "' has shape " + nn::shape_str(shape) + ", model expects " +
                        nn::shape_str(p->tensor.shape()));
    r.f32s(p->tensor.mutable_value());
    p->trainable = trainable;
    for (std::size_t k = 0; k < params.size(); ++k)
      if (params[k] == p) seen[k] = true;
  }
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!seen[k]) throw FormatError("CBP1: missing block '" + params[k]->name + "'");
  if (r.remaining() != 0) throw FormatError("CBP1: trailing bytes after the last block");
  out.model.sync_requires_grad();
  return out;
}

}  // namespace coopbeam
