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

// "CBW1" window files.
//
//   header (64 bytes)
//     char[4] "CBW1"; u32 version = 1
//     u32 history_len, n_bs, n_views = 2, n_reim = 2, n_ports, n_subcarriers,
//         n_beam, n_classes
//     u64 sample_count, scenario_hash, seed
//   sample_count records
//     i32 trajectory, end_slot, y_now, y_next, s_next
//     i32 hist_labels[history_len]
//     f32 snr_db
//     f32 gains_next[n_classes]
//     f32 x[history_len][n_bs][2][2][n_ports][n_subcarriers]
//
// All values little-endian; labels are 1-based. Every record carries its full
// input tensor. The reader stores identical history frames once.

#pragma once

#include "coopbeam/binary_io.hpp"
#include "coopbeam/dataset.hpp"

#include <cstring>
#include <unordered_map>

namespace coopbeam {

inline constexpr char kDatasetMagic[4] = {'C', 'B', 'W', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint64_t kDatasetHeaderBytes = 64;

inline std::uint64_t dataset_record_bytes(const WindowDims& d) {
  return 4ULL * (5 + d.history_len + 1 + d.n_classes() + d.window_size());
}

inline void write_dataset(const std::string& path, const WindowSet& set) {
  const WindowDims& d = set.dims;
  io::Writer w(path);
  w.bytes(kDatasetMagic, 4);
  w.u32(kDatasetVersion);
  for (std::size_t v : {d.history_len, d.n_bs, std::size_t{2}, std::size_t{2}, d.n_ports, d.n_subcarriers, d.n_beam,
                        d.n_classes()})
    w.u32(static_cast<std::uint32_t>(v));
  w.u64(set.size());
  w.u64(set.scenario_hash);
  w.u64(set.seed);
  for (const auto& s : set.windows) {
    if (s.hist_labels.size() != d.history_len || s.gains_next.size() != d.n_classes() ||
        s.frame_ids.size() != d.history_len)
      throw DimensionError("write_dataset: window does not match the set dims");
    w.i32(s.trajectory);
    w.i32(s.end_slot);
    w.i32(s.y_now.value);
    w.i32(s.y_next.value);
    w.i32(s.s_next ? 1 : 0);
    for (auto l : s.hist_labels) w.i32(l.value);
    w.f32(s.snr_db);
    w.f32s(s.gains_next);
    for (auto id : s.frame_ids) w.f32s(set.frame(id));
  }
  w.close();
}

/// Reads a CBW1 file. If `expected_hash` is nonzero it must equal the stored
/// scenario hash.
inline WindowSet read_dataset(const std::string& path, std::uint64_t expected_hash = 0) {
  io::Reader r(path);
  if (r.size() < kDatasetHeaderBytes) throw FormatError("'" + path + "' is too short for a CBW1 header");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw FormatError("'" + path + "' is not a CBW1 file");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw FormatError("unsupported CBW1 version " + std::to_string(version));
  WindowSet set;
  WindowDims& d = set.dims;
  d.history_len = r.u32();
  d.n_bs = r.u32();
  const std::uint32_t n_views = r.u32();
  const std::uint32_t n_reim = r.u32();
  d.n_ports = r.u32();
  d.n_subcarriers = r.u32();
  d.n_beam = r.u32();
  const std::uint32_t n_classes = r.u32();
  const std::uint64_t count = r.u64();
  set.scenario_hash = r.u64();
  set.seed = r.u64();
  if (n_views != 2 || n_reim != 2) throw FormatError("CBW1: expected 2 views x 2 components");
  if (d.history_len == 0 || d.n_bs == 0 || d.n_ports == 0 || d.n_subcarriers == 0 || d.n_beam == 0)
    throw FormatError("CBW1: zero dimension in header");
  if (n_classes != d.n_classes()) throw FormatError("CBW1: n_classes != n_bs * n_beam");
  if (expected_hash != 0 && expected_hash != set.scenario_hash)
    throw FormatError("CBW1: scenario hash mismatch (file " + std::to_string(set.scenario_hash) + ", expected " +
                      std::to_string(expected_hash) + ")");
  const std::uint64_t rec = dataset_record_bytes(d);
  if (r.size() != kDatasetHeaderBytes + count * rec)
    throw FormatError("CBW1: file is " + std::to_string(r.size()) + " bytes, header declares " +
                      std::to_string(kDatasetHeaderBytes + count * rec));

  const std::size_t fsize = d.frame_size();
  const std::size_t c = d.n_classes();
  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> by_hash;
  std::vector<float> frame(fsize);
  set.windows.reserve(count);
  auto check_label = [&](std::int32_t v) {
    if (v < 1 || static_cast<std::size_t>(v) > c) throw FormatError("CBW1: label " + std::to_string(v) + " out of range");
    return ClassLabel(v);
  };
  for (std::uint64_t i = 0; i < count; ++i) {
    CsiWindow s;
    s.trajectory = r.i32();
    s.end_slot = r.i32();
    s.y_now = check_label(r.i32());
    s.y_next = check_label(r.i32());
    const std::int32_t flip = r.i32();
    if (flip != 0 && flip != 1) throw FormatError("CBW1: s_next must be 0 or 1");
    s.s_next = flip == 1;
    for (std::size_t k = 0; k < d.history_len; ++k) s.hist_labels.push_back(check_label(r.i32()));
    s.snr_db = r.f32();
    s.gains_next.resize(c);
    r.f32s(s.gains_next);
    for (std::size_t k = 0; k < d.history_len; ++k) {
      r.f32s(frame);
      const std::uint64_t h = fnv1a(frame.data(), fsize * sizeof(float));
      auto& cands = by_hash[h];
      std::int32_t id = -1;
      for (auto cand : cands)
        if (std::memcmp(set.frame(cand).data(), frame.data(), fsize * sizeof(float)) == 0) {
          id = cand;
          break;
        }
      if (id < 0) {
        id = static_cast<std::int32_t>(set.n_frames());
        set.frames->insert(set.frames->end(), frame.begin(), frame.end());
        cands.push_back(id);
      }
      s.frame_ids.push_back(id);
    }
    set.windows.push_back(std::move(s));
  }
  return set;
}

}  // namespace coopbeam
