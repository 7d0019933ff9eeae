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

// Central finite-difference gradient checker.

#pragma once

#include "coopbeam/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace coopbeam::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t n_checked = 0;
};

struct GradCheckInput {
  std::string name;
  Var<double> var;
};

/// Compares backward() of `loss` against central differences for each input.
/// At most `max_per_param` evenly spaced indices are probed per input.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradCheckReport check_gradients(const std::function<Var<double>()>& loss,
                                       const std::vector<GradCheckInput>& inputs, double eps = 1e-4,
                                       std::size_t max_per_param = 24) {
  for (const auto& in : inputs) in.var.node()->grad.clear();
  Var<double> root = loss();
  backward(root);
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) {
    auto g = in.var.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(in.var.numel(), 0.0);
  }

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
    Var<double> v = inputs[pi].var;
    const std::size_t n = v.numel();
    const std::size_t stride = std::max<std::size_t>(1, (n + max_per_param - 1) / max_per_param);
    for (std::size_t k = 0; k < n; k += stride) {
      auto vals = v.mutable_value();
      const double orig = vals[k];
      vals[k] = orig + eps;
      const double up = loss().item();
      vals[k] = orig - eps;
      const double down = loss().item();
      vals[k] = orig;
      const double num = (up - down) / (2.0 * eps);
      const double a = analytic[pi][k];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6});
      ++rep.n_checked;
      if (rep.worst_param.empty() || rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = inputs[pi].name;
        rep.worst_index = k;
        rep.worst_analytic = a;
        rep.worst_numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace coopbeam::nn
