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

// Reverse-mode differentiable tensors.
//
// A Var is a shared handle to a graph node holding a dense row-major value
// buffer. Ops record their parents and a backward closure only when some
// input requires a gradient, so inference builds no graph. Gradients
// accumulate additively into each node that requires them.

#pragma once

#include "coopbeam/common.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace coopbeam::nn {

using Shape = std::vector<std::size_t>;

/// Value storage aligned for vectorized kernels, so their loop splits and
/// hence rounding do not depend on where the allocator placed a buffer.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  T* grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var make(Shape shape, const std::vector<T>& values, bool requires_grad = false) {
    return from_buffer(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad);
  }

  static Var from_buffer(Shape shape, Buffer<T> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size())
      throw DimensionError("Var: shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                           " values");
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  static Var zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return from_buffer(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> value() const { return node_->value; }
  std::span<T> mutable_value() { return node_->value; }
  const T* data() const { return node_->value.data(); }

  /// Empty until a backward pass reaches this node.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->value.size()}; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  T item() const {
    if (numel() != 1) throw DimensionError("Var::item on shape " + shape_str(shape()));
    return node_->value[0];
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

/// Builds an op result. Throws NumericError naming the op if any output is
/// not finite. The backward closure is attached only when needed.
template <class T>
Var<T> make_result(const char* op, Shape shape, Buffer<T> value, std::initializer_list<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  for (const T& v : value)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  for (const auto& in : inputs)
    if (in.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    for (const auto& in : inputs) n->parents.push_back(in.shared());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar. Gradients of leaves add to
/// whatever they already hold; call zero_grad between steps.
template <class T>
void backward(const Var<T>& root) {
  if (root.numel() != 1) throw DimensionError("backward: root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // intermediate grads start at zero for this pass
  for (Node<T>* n : order)
    if (n->backward) n->grad.assign(n->value.size(), T(0));
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

}  // namespace coopbeam::nn
