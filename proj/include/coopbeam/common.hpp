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

#pragma once

#include <compare>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace coopbeam {

using cplx = std::complex<double>;

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kPi = 3.14159265358979323846;

// Error types. Everything derives from std::runtime_error so callers that do
// not care about the category can catch one type.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Joint BS-beam class label. `value` is 1-based (1..C) as in the flat label
/// definition; `index()` gives the 0-based array position.
struct ClassLabel {
  int value = 1;

  constexpr ClassLabel() = default;
  constexpr explicit ClassLabel(int v) : value(v) {}
  static constexpr ClassLabel from_index(std::size_t i) { return ClassLabel(static_cast<int>(i) + 1); }
  constexpr std::size_t index() const { return static_cast<std::size_t>(value - 1); }

  friend constexpr auto operator<=>(ClassLabel, ClassLabel) = default;
};

// splitmix64 finalizer; used to derive independent seeds for sub-streams.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t purpose = 0) {
  return mix_seed(mix_seed(seed ^ mix_seed(stream + 0x51ed27ULL)) + purpose);
}

using Rng = std::mt19937_64;

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace coopbeam
