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

// Named parameter blocks and the Adam optimizer.

#pragma once

#include "coopbeam/nn/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace coopbeam::nn {

template <class T>
struct ParamBlock {
  std::string name;
  Var<T> tensor;
  bool trainable = true;
};

template <class T>
using ParamList = std::vector<ParamBlock<T>*>;

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->tensor.zero_grad();
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::size_t steps() const { return t_; }

  /// Drops moment estimates and the step counter.
  void reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
  }

  /// One update over trainable blocks. Returns the sum of |update| per block
  /// (0 for frozen blocks). Throws NumericError without touching any
  /// parameter if a trainable gradient is non-finite.
  std::vector<double> step(const ParamList<T>& params) {
    for (auto* p : params) {
      if (!p->trainable) continue;
      for (T g : p->tensor.grad())
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in block '" + p->name + "'");
    }
    if (m_.size() != params.size()) {
      m_.assign(params.size(), {});
      v_.assign(params.size(), {});
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<double> moved(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      if (!p->trainable) continue;
      auto grad = p->tensor.grad();
      if (grad.empty()) continue;  // not reached by this backward pass
      auto val = p->tensor.mutable_value();
      auto& m = m_[i];
      auto& v = v_[i];
      if (m.size() != val.size()) {
        m.assign(val.size(), 0.0);
        v.assign(val.size(), 0.0);
      }
      for (std::size_t k = 0; k < val.size(); ++k) {
        const double g = grad[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double upd = cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
        const T before = val[k];
        val[k] = static_cast<T>(before - upd);
        moved[i] += std::abs(static_cast<double>(val[k] - before));
      }
    }
    return moved;
  }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace coopbeam::nn
