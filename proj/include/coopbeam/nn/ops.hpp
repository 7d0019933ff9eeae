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

// The closed op set used by the model. Every op has an exact backward; dense
// products go through Eigen maps over the row-major buffers.

#pragma once

#include "coopbeam/nn/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace coopbeam::nn {

namespace detail {

template <class T>
using RMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<RMat<T>>;
template <class T>
using CMapR = Eigen::Map<const RMat<T>>;
template <class T>
using MapV = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CMapV = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

inline auto ei(std::size_t n) { return static_cast<Eigen::Index>(n); }

[[noreturn]] inline void shape_error(const char* op, const std::string& what) {
  throw DimensionError(std::string(op) + ": " + what);
}

template <class T>
Node<T>* parent(Node<T>& n, std::size_t i) {
  Node<T>* p = n.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    detail::shape_error("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  Buffer<T> v(x.value().begin(), x.value().end());
  return detail::make_result<T>("reshape", std::move(shape), std::move(v), {x}, [](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
  });
}

/// General axis permutation: out.shape[i] = x.shape[perm[i]].
template <class T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) detail::shape_error("permute", "permutation rank mismatch");
  Shape out_shape(r);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(perm[i]);
    src_stride[i] = in_stride[perm[i]];
  }
  // out flat index -> in flat index map
  const std::size_t total = x.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    (*map)[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  Buffer<T> v(total);
  const auto xv = x.value();
  for (std::size_t o = 0; o < total; ++o) v[o] = xv[(*map)[o]];
  return detail::make_result<T>("permute", std::move(out_shape), std::move(v), {x}, [map](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t o = 0; o < n.grad.size(); ++o) g[(*map)[o]] += n.grad[o];
    }
  });
}

/// Rows of `table` (leading axis) picked by `idx`; this is also the embedding lookup.
template <class T>
Var<T> gather_rows(const Var<T>& table, std::vector<std::size_t> idx) {
  if (table.rank() < 1) detail::shape_error("gather_rows", "table must have rank >= 1");
  const std::size_t rows = table.dim(0);
  const std::size_t width = table.numel() / std::max<std::size_t>(rows, 1);
  for (auto i : idx)
    if (i >= rows) detail::shape_error("gather_rows", "index " + std::to_string(i) + " >= " + std::to_string(rows));
  Shape shape = table.shape();
  shape[0] = idx.size();
  Buffer<T> v(idx.size() * width);
  const T* src = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(src + idx[r] * width, width, v.data() + r * width);
  auto ids = std::make_shared<std::vector<std::size_t>>(std::move(idx));
  return detail::make_result<T>("gather_rows", std::move(shape), std::move(v), {table}, [ids, width](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t r = 0; r < ids->size(); ++r)
        for (std::size_t k = 0; k < width; ++k) g[(*ids)[r] * width + k] += n.grad[r * width + k];
    }
  });
}

/// Mean over consecutive groups of `group` rows: [R*group, ...] -> [R, ...].
template <class T>
Var<T> mean_groups(const Var<T>& x, std::size_t group) {
  if (group == 0 || x.rank() < 1 || x.dim(0) % group != 0)
    detail::shape_error("mean_groups", shape_str(x.shape()) + " not divisible into groups of " + std::to_string(group));
  const std::size_t rows = x.dim(0) / group;
  const std::size_t width = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = rows;
  Buffer<T> v(rows * width, T(0));
  const T inv = T(1) / static_cast<T>(group);
  const T* xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < group; ++j)
      for (std::size_t k = 0; k < width; ++k) v[r * width + k] += xv[(r * group + j) * width + k] * inv;
  return detail::make_result<T>("mean_groups", std::move(shape), std::move(v), {x}, [group, width, inv](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      const std::size_t rows = n.grad.size() / width;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < group; ++j)
          for (std::size_t k = 0; k < width; ++k) g[(r * group + j) * width + k] += n.grad[r * width + k] * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise and broadcasting arithmetic

/// a + b where b has a's shape or a trailing suffix of it (broadcast over the
/// leading axes of a).
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
    detail::shape_error("add", "cannot broadcast " + shape_str(bs) + " onto " + shape_str(as));
  const std::size_t inner = b.numel();
  Buffer<T> v(a.value().begin(), a.value().end());
  const T* bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i % inner];
  return detail::make_result<T>("add", as, std::move(v), {a, b}, [inner](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
    if (auto* p = detail::parent(n, 1)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i % inner] += n.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) detail::shape_error("sub", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(v), {a, b}, [](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
    if (auto* p = detail::parent(n, 1)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) detail::shape_error("mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(v), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (auto* p = detail::parent(n, 1)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

/// alpha * x + beta
template <class T>
Var<T> affine(const Var<T>& x, T alpha, T beta) {
  Buffer<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = alpha * x.value()[i] + beta;
  return detail::make_result<T>("affine", x.shape(), std::move(v), {x}, [alpha](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += alpha * n.grad[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T alpha) {
  return affine(x, alpha, T(0));
}

/// Scales row r of x (leading axis) by s[r]; s has x.dim(0) elements.
template <class T>
Var<T> mul_rows(const Var<T>& x, const Var<T>& s) {
  if (x.rank() < 1 || s.numel() != x.dim(0))
    detail::shape_error("mul_rows", shape_str(x.shape()) + " with row scales " + shape_str(s.shape()));
  const std::size_t rows = x.dim(0);
  const std::size_t width = x.numel() / std::max<std::size_t>(rows, 1);
  Buffer<T> v(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < width; ++k) v[r * width + k] = x.value()[r * width + k] * s.value()[r];
  return detail::make_result<T>("mul_rows", x.shape(), std::move(v), {x, s}, [rows, width](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    const auto& sv = n.parents[1]->value;
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < width; ++k) g[r * width + k] += n.grad[r * width + k] * sv[r];
    }
    if (auto* p = detail::parent(n, 1)) {
      T* g = p->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t k = 0; k < width; ++k) acc += n.grad[r * width + k] * xv[r * width + k];
        g[r] += acc;
      }
    }
  });
}

namespace detail {

template <class T, class F, class DF>
Var<T> unary(const char* op, const Var<T>& x, F f, DF df_from_xy) {
  Buffer<T> v(x.numel());
  const auto xv = x.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(xv[i]);
  return make_result<T>(op, x.shape(), std::move(v), {x}, [df_from_xy](Node<T>& n) {
    if (auto* p = parent(n, 0)) {
      T* g = p->grad_buffer();
      const auto& xv = n.parents[0]->value;
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * df_from_xy(xv[i], n.value[i]);
    }
  });
}

}  // namespace detail

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T z) { return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary<T>("tanh", x, [](T z) { return std::tanh(z); }, [](T, T y) { return T(1) - y * y; });
}

/// GELU, tanh approximation (as in GPT-2).
template <class T>
Var<T> gelu(const Var<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return detail::unary<T>(
      "gelu", x, [](T z) { return T(0.5) * z * (T(1) + std::tanh(c * (z + k * z * z * z))); },
      [](T z, T) {
        const T t = std::tanh(c * (z + k * z * z * z));
        return T(0.5) * (T(1) + t) + T(0.5) * z * (T(1) - t * t) * c * (T(1) + T(3) * k * z * z);
      });
}

// ---------------------------------------------------------------------------
// Products

/// y = x w^T + b over the last axis of x. w is [out, in]; b is [out] or undefined.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = Var<T>()) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(1))
    detail::shape_error("linear", "input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  const std::size_t in = w.dim(1);
  const std::size_t out = w.dim(0);
  if (b.defined() && b.numel() != out) detail::shape_error("linear", "bias " + shape_str(b.shape()));
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out;
  Buffer<T> v(rows * out);
  using namespace detail;
  MapR<T> Y(v.data(), ei(rows), ei(out));
  Y.noalias() = CMapR<T>(x.data(), ei(rows), ei(in)) * CMapR<T>(w.data(), ei(out), ei(in)).transpose();
  if (b.defined()) Y.rowwise() += CMapV<T>(b.data(), ei(out)).transpose();
  const bool has_b = b.defined();
  auto bw = [rows, in, out, has_b](Node<T>& n) {
    CMapR<T> dY(n.grad.data(), ei(rows), ei(out));
    const auto& xv = n.parents[0]->value;
    const auto& wv = n.parents[1]->value;
    if (auto* p = parent(n, 0))
      MapR<T>(p->grad_buffer(), ei(rows), ei(in)).noalias() += dY * CMapR<T>(wv.data(), ei(out), ei(in));
    if (auto* p = parent(n, 1))
      MapR<T>(p->grad_buffer(), ei(out), ei(in)).noalias() += dY.transpose() * CMapR<T>(xv.data(), ei(rows), ei(in));
    if (has_b)
      if (auto* p = parent(n, 2)) MapV<T>(p->grad_buffer(), ei(out)) += dY.colwise().sum().transpose();
  };
  if (has_b) return make_result<T>("linear", std::move(shape), std::move(v), {x, w, b}, bw);
  return make_result<T>("linear", std::move(shape), std::move(v), {x, w}, bw);
}

/// a [M,K] times b [K,N] (or b^T with b [N,K] when trans_b).
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2) detail::shape_error("matmul", "operands must be 2-D");
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t nn = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) detail::shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  using namespace detail;
  Buffer<T> v(m * nn);
  MapR<T> Y(v.data(), ei(m), ei(nn));
  CMapR<T> A(a.data(), ei(m), ei(k));
  if (trans_b)
    Y.noalias() = A * CMapR<T>(b.data(), ei(nn), ei(k)).transpose();
  else
    Y.noalias() = A * CMapR<T>(b.data(), ei(k), ei(nn));
  return make_result<T>("matmul", {m, nn}, std::move(v), {a, b}, [m, k, nn, trans_b](Node<T>& n) {
    CMapR<T> dY(n.grad.data(), ei(m), ei(nn));
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    CMapR<T> A(av.data(), ei(m), ei(k));
    if (trans_b) {
      CMapR<T> B(bv.data(), ei(nn), ei(k));
      if (auto* p = parent(n, 0)) MapR<T>(p->grad_buffer(), ei(m), ei(k)).noalias() += dY * B;
      if (auto* p = parent(n, 1)) MapR<T>(p->grad_buffer(), ei(nn), ei(k)).noalias() += dY.transpose() * A;
    } else {
      CMapR<T> B(bv.data(), ei(k), ei(nn));
      if (auto* p = parent(n, 0)) MapR<T>(p->grad_buffer(), ei(m), ei(k)).noalias() += dY * B.transpose();
      if (auto* p = parent(n, 1)) MapR<T>(p->grad_buffer(), ei(k), ei(nn)).noalias() += A.transpose() * dY;
    }
  });
}

/// Batched product: a [G,M,K] times b [G,K,N] -> [G,M,N].
template <class T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    detail::shape_error("bmm", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), nn = b.dim(2);
  using namespace detail;
  Buffer<T> v(g * m * nn);
  for (std::size_t i = 0; i < g; ++i)
    MapR<T>(v.data() + i * m * nn, ei(m), ei(nn)).noalias() =
        CMapR<T>(a.data() + i * m * k, ei(m), ei(k)) * CMapR<T>(b.data() + i * k * nn, ei(k), ei(nn));
  return make_result<T>("bmm", {g, m, nn}, std::move(v), {a, b}, [g, m, k, nn](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    auto* pa = parent(n, 0);
    auto* pb = parent(n, 1);
    T* ga = pa ? pa->grad_buffer() : nullptr;
    T* gb = pb ? pb->grad_buffer() : nullptr;
    for (std::size_t i = 0; i < g; ++i) {
      CMapR<T> dY(n.grad.data() + i * m * nn, ei(m), ei(nn));
      if (ga)
        MapR<T>(ga + i * m * k, ei(m), ei(k)).noalias() += dY * CMapR<T>(bv.data() + i * k * nn, ei(k), ei(nn)).transpose();
      if (gb)
        MapR<T>(gb + i * k * nn, ei(k), ei(nn)).noalias() += CMapR<T>(av.data() + i * m * k, ei(m), ei(k)).transpose() * dY;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

namespace detail {

struct ConvGeom {
  std::size_t cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t ckk() const { return cin * kh * kw; }
  std::size_t hw_out() const { return ho * wo; }
};

// cols[(c*kh+ky)*kw+kx][col_offset + oy*wo+ox], row stride ld
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols, std::size_t ld, std::size_t col_offset) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * ld + col_offset;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            const bool in = iy >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) && ix >= 0 &&
                            ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = in ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, std::size_t ld, std::size_t col_offset, T* dx) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * ld + col_offset;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
}

// samples per GEMM so that one im2col block stays around 16k columns
inline std::size_t conv_group(const ConvGeom& g) { return std::max<std::size_t>(1, 16384 / std::max<std::size_t>(g.hw_out(), 1)); }

}  // namespace detail

/// x [S,Cin,H,W], w [Cout,Cin,KH,KW], b [Cout] -> [S,Cout,Ho,Wo].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Conv2dSpec spec) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || b.numel() != w.dim(0) || spec.stride == 0)
    detail::shape_error("conv2d", "input " + shape_str(x.shape()) + " kernel " + shape_str(w.shape()) + " bias " +
                                      shape_str(b.shape()));
  detail::ConvGeom g{x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), spec.stride, spec.pad, 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) detail::shape_error("conv2d", "kernel larger than padded input");
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  const std::size_t s_count = x.dim(0);
  const std::size_t in_sz = g.cin * g.h * g.w;
  const std::size_t out_sz = g.cout * g.hw_out();
  const std::size_t group = detail::conv_group(g);

  using namespace detail;
  Buffer<T> v(s_count * out_sz);
  Buffer<T> cols;
  RMat<T> y;
  CMapR<T> W(w.data(), ei(g.cout), ei(g.ckk()));
  const T* bias = b.data();
  for (std::size_t s0 = 0; s0 < s_count; s0 += group) {
    const std::size_t gs = std::min(group, s_count - s0);
    const std::size_t ld = gs * g.hw_out();
    cols.resize(g.ckk() * ld);
    for (std::size_t j = 0; j < gs; ++j) im2col(x.data() + (s0 + j) * in_sz, g, cols.data(), ld, j * g.hw_out());
    y.noalias() = W * CMapR<T>(cols.data(), ei(g.ckk()), ei(ld));
    for (std::size_t j = 0; j < gs; ++j)
      for (std::size_t co = 0; co < g.cout; ++co) {
        T* dst = v.data() + (s0 + j) * out_sz + co * g.hw_out();
        const T* src = y.data() + co * ld + j * g.hw_out();
        for (std::size_t i = 0; i < g.hw_out(); ++i) dst[i] = src[i] + bias[co];
      }
  }

  return make_result<T>("conv2d", {s_count, g.cout, g.ho, g.wo}, std::move(v), {x, w, b},
                        [g, s_count, in_sz, out_sz, group](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    const auto& wv = n.parents[1]->value;
    auto* px = parent(n, 0);
    auto* pw = parent(n, 1);
    auto* pb = parent(n, 2);
    CMapR<T> W(wv.data(), ei(g.cout), ei(g.ckk()));
    Buffer<T> cols;
    Buffer<T> dy;
    RMat<T> dcols;
    for (std::size_t s0 = 0; s0 < s_count; s0 += group) {
      const std::size_t gs = std::min(group, s_count - s0);
      const std::size_t ld = gs * g.hw_out();
      dy.resize(g.cout * ld);
      for (std::size_t j = 0; j < gs; ++j)
        for (std::size_t co = 0; co < g.cout; ++co)
          std::copy_n(n.grad.data() + (s0 + j) * out_sz + co * g.hw_out(), g.hw_out(),
                      dy.data() + co * ld + j * g.hw_out());
      CMapR<T> dY(dy.data(), ei(g.cout), ei(ld));
      if (pb) MapV<T>(pb->grad_buffer(), ei(g.cout)) += dY.rowwise().sum();
      if (pw) {
        cols.resize(g.ckk() * ld);
        for (std::size_t j = 0; j < gs; ++j) im2col(xv.data() + (s0 + j) * in_sz, g, cols.data(), ld, j * g.hw_out());
        MapR<T>(pw->grad_buffer(), ei(g.cout), ei(g.ckk())).noalias() +=
            dY * CMapR<T>(cols.data(), ei(g.ckk()), ei(ld)).transpose();
      }
      if (px) {
        dcols.noalias() = W.transpose() * dY;
        T* gx = px->grad_buffer();
        for (std::size_t j = 0; j < gs; ++j) col2im_add(dcols.data(), g, ld, j * g.hw_out(), gx + (s0 + j) * in_sz);
      }
    }
  });
}

/// [S,C,H,W] -> [S,C], mean over H and W.
template <class T>
Var<T> global_mean_pool(const Var<T>& x) {
  if (x.rank() != 4) detail::shape_error("global_mean_pool", "expects [S,C,H,W], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  Buffer<T> v(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += x.value()[r * hw + i];
    v[r] = acc / static_cast<T>(hw);
  }
  return detail::make_result<T>("global_mean_pool", {x.dim(0), x.dim(1)}, std::move(v), {x}, [hw](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t r = 0; r < n.grad.size(); ++r)
        for (std::size_t i = 0; i < hw; ++i) g[r * hw + i] += n.grad[r] / static_cast<T>(hw);
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

namespace detail {

// Normalizes consecutive blocks of `width` values; returns xhat and 1/sigma per block.
template <class T>
void normalize_blocks(const T* x, std::size_t blocks, std::size_t width, T eps, T* xhat, T* inv_std) {
  for (std::size_t r = 0; r < blocks; ++r) {
    const T* row = x + r * width;
    T mean = 0;
    for (std::size_t i = 0; i < width; ++i) mean += row[i];
    mean /= static_cast<T>(width);
    T var = 0;
    for (std::size_t i = 0; i < width; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<T>(width);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < width; ++i) xhat[r * width + i] = (row[i] - mean) * is;
  }
}

// dx += inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) per block
template <class T>
void normalize_blocks_backward(const T* dxhat, const T* xhat, const T* inv_std, std::size_t blocks, std::size_t width,
                               T* dx) {
  for (std::size_t r = 0; r < blocks; ++r) {
    T m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < width; ++i) {
      m1 += dxhat[r * width + i];
      m2 += dxhat[r * width + i] * xhat[r * width + i];
    }
    m1 /= static_cast<T>(width);
    m2 /= static_cast<T>(width);
    for (std::size_t i = 0; i < width; ++i)
      dx[r * width + i] += inv_std[r] * (dxhat[r * width + i] - m1 - xhat[r * width + i] * m2);
  }
}

}  // namespace detail

/// Layer normalization over the last axis with gain and bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d)
    detail::shape_error("layer_norm", "input " + shape_str(x.shape()) + " gain " + shape_str(gain.shape()));
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<Buffer<T>>(x.numel());
  auto inv = std::make_shared<Buffer<T>>(rows);
  detail::normalize_blocks(x.data(), rows, d, eps, xhat->data(), inv->data());
  Buffer<T> v(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < d; ++i) v[r * d + i] = (*xhat)[r * d + i] * gain.value()[i] + bias.value()[i];
  return detail::make_result<T>("layer_norm", x.shape(), std::move(v), {x, gain, bias}, [xhat, inv, rows, d](Node<T>& n) {
    const auto& gv = n.parents[1]->value;
    if (auto* p = detail::parent(n, 0)) {
      Buffer<T> dxhat(n.grad.size());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) dxhat[r * d + i] = n.grad[r * d + i] * gv[i];
      detail::normalize_blocks_backward(dxhat.data(), xhat->data(), inv->data(), rows, d, p->grad_buffer());
    }
    if (auto* p = detail::parent(n, 1)) {
      T* g = p->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) g[i] += n.grad[r * d + i] * (*xhat)[r * d + i];
    }
    if (auto* p = detail::parent(n, 2)) {
      T* g = p->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < d; ++i) g[i] += n.grad[r * d + i];
    }
  });
}

/// Instance normalization of [S,C,H,W] over (H,W) per (sample, channel); no affine.
template <class T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5)) {
  if (x.rank() != 4) detail::shape_error("instance_norm", "expects [S,C,H,W], got " + shape_str(x.shape()));
  const std::size_t blocks = x.dim(0) * x.dim(1);
  const std::size_t width = x.dim(2) * x.dim(3);
  Buffer<T> v(x.numel());
  auto inv = std::make_shared<Buffer<T>>(blocks);
  detail::normalize_blocks(x.data(), blocks, width, eps, v.data(), inv->data());
  return detail::make_result<T>("instance_norm", x.shape(), std::move(v), {x}, [inv, blocks, width](Node<T>& n) {
    if (auto* p = detail::parent(n, 0))
      detail::normalize_blocks_backward(n.grad.data(), n.value.data(), inv->data(), blocks, width, p->grad_buffer());
  });
}

// ---------------------------------------------------------------------------
// Softmax and attention

namespace detail {

template <class T>
void softmax_rows(const T* x, std::size_t rows, std::size_t width, T* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x + r * width;
    T* out = y + r * width;
    T mx = in[0];
    for (std::size_t i = 1; i < width; ++i) mx = std::max(mx, in[i]);
    T sum = 0;
    for (std::size_t i = 0; i < width; ++i) {
      out[i] = std::exp(in[i] - mx);
      sum += out[i];
    }
    for (std::size_t i = 0; i < width; ++i) out[i] /= sum;
  }
}

// dx += y * (dy - sum(dy * y)) per row
template <class T>
void softmax_rows_backward(const T* y, const T* dy, std::size_t rows, std::size_t width, T* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0;
    for (std::size_t i = 0; i < width; ++i) dot += dy[r * width + i] * y[r * width + i];
    for (std::size_t i = 0; i < width; ++i) dx[r * width + i] += y[r * width + i] * (dy[r * width + i] - dot);
  }
}

}  // namespace detail

/// Softmax over the last axis.
template <class T>
Var<T> softmax(const Var<T>& x) {
  const std::size_t w = x.shape().empty() ? 1 : x.shape().back();
  const std::size_t rows = x.numel() / w;
  Buffer<T> v(x.numel());
  detail::softmax_rows(x.data(), rows, w, v.data());
  return detail::make_result<T>("softmax", x.shape(), std::move(v), {x}, [rows, w](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) detail::softmax_rows_backward(n.value.data(), n.grad.data(), rows, w, p->grad_buffer());
  });
}

/// Large negative additive mask entry for blocked attention links.
template <class T>
inline constexpr T kMaskedScore = T(-1e9);

/// Scaled dot-product attention. q, k, v are [G,N,dh]; `mask` is an N x N
/// additive matrix (row = query) or empty for no mask.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::span<const T> mask = {}) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    detail::shape_error("attention", "q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " + shape_str(v.shape()));
  const std::size_t g = q.dim(0), nn = q.dim(1), dh = q.dim(2);
  if (!mask.empty() && mask.size() != nn * nn) detail::shape_error("attention", "mask must be N x N");
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  using namespace detail;
  auto probs = std::make_shared<Buffer<T>>(g * nn * nn);
  Buffer<T> out(g * nn * dh);
  for (std::size_t i = 0; i < g; ++i) {
    CMapR<T> Q(q.data() + i * nn * dh, ei(nn), ei(dh));
    CMapR<T> K(k.data() + i * nn * dh, ei(nn), ei(dh));
    CMapR<T> V(v.data() + i * nn * dh, ei(nn), ei(dh));
    MapR<T> S(probs->data() + i * nn * nn, ei(nn), ei(nn));
    S.noalias() = (Q * K.transpose()) * sc;
    if (!mask.empty()) S += CMapR<T>(mask.data(), ei(nn), ei(nn));
    softmax_rows(S.data(), nn, nn, S.data());
    MapR<T>(out.data() + i * nn * dh, ei(nn), ei(dh)).noalias() = S * V;
  }
  return make_result<T>("attention", q.shape(), std::move(out), {q, k, v}, [probs, g, nn, dh, sc](Node<T>& n) {
    auto* pq = parent(n, 0);
    auto* pk = parent(n, 1);
    auto* pv = parent(n, 2);
    const auto& qv = n.parents[0]->value;
    const auto& kv = n.parents[1]->value;
    const auto& vv = n.parents[2]->value;
    RMat<T> dP(ei(nn), ei(nn));
    RMat<T> dS(ei(nn), ei(nn));
    for (std::size_t i = 0; i < g; ++i) {
      CMapR<T> P(probs->data() + i * nn * nn, ei(nn), ei(nn));
      CMapR<T> dO(n.grad.data() + i * nn * dh, ei(nn), ei(dh));
      CMapR<T> Q(qv.data() + i * nn * dh, ei(nn), ei(dh));
      CMapR<T> K(kv.data() + i * nn * dh, ei(nn), ei(dh));
      CMapR<T> V(vv.data() + i * nn * dh, ei(nn), ei(dh));
      if (pv) MapR<T>(pv->grad_buffer() + i * nn * dh, ei(nn), ei(dh)).noalias() += P.transpose() * dO;
      if (!pq && !pk) continue;
      dP.noalias() = dO * V.transpose();
      dS.setZero();
      softmax_rows_backward(P.data(), dP.data(), nn, nn, dS.data());
      if (pq) MapR<T>(pq->grad_buffer() + i * nn * dh, ei(nn), ei(dh)).noalias() += (dS * K) * sc;
      if (pk) MapR<T>(pk->grad_buffer() + i * nn * dh, ei(nn), ei(dh)).noalias() += (dS.transpose() * Q) * sc;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value()) acc += v;
  return detail::make_result<T>("sum", {}, {acc}, {x}, [](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += n.grad[0];
    }
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(std::max<std::size_t>(x.numel(), 1)));
}

/// Mean over rows of logsumexp(z) - z[target]. z is [B,C].
template <class T>
Var<T> cross_entropy_logits(const Var<T>& z, std::span<const std::size_t> targets) {
  if (z.rank() != 2 || targets.size() != z.dim(0))
    detail::shape_error("cross_entropy_logits", "logits " + shape_str(z.shape()) + " with " + std::to_string(targets.size()) + " targets");
  const std::size_t rows = z.dim(0), c = z.dim(1);
  auto probs = std::make_shared<Buffer<T>>(z.numel());
  detail::softmax_rows(z.data(), rows, c, probs->data());
  auto tg = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if ((*tg)[r] >= c) detail::shape_error("cross_entropy_logits", "target out of range");
    const T* zr = z.data() + r * c;
    T mx = zr[0];
    for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, zr[i]);
    T s = 0;
    for (std::size_t i = 0; i < c; ++i) s += std::exp(zr[i] - mx);
    loss += mx + std::log(s) - zr[(*tg)[r]];
  }
  loss /= static_cast<T>(rows);
  return detail::make_result<T>("cross_entropy_logits", {}, {loss}, {z}, [probs, tg, rows, c](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      const T s = n.grad[0] / static_cast<T>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < c; ++i)
          g[r * c + i] += s * ((*probs)[r * c + i] - (i == (*tg)[r] ? T(1) : T(0)));
    }
  });
}

/// Probability floor used by nll_probs.
template <class T>
inline constexpr T kProbFloor = std::is_same_v<T, float> ? T(1e-30) : T(1e-300);

/// Mean over rows of -log p[target] for probability rows p [B,C].
template <class T>
Var<T> nll_probs(const Var<T>& p, std::span<const std::size_t> targets) {
  if (p.rank() != 2 || targets.size() != p.dim(0))
    detail::shape_error("nll_probs", "probs " + shape_str(p.shape()) + " with " + std::to_string(targets.size()) + " targets");
  const std::size_t rows = p.dim(0), c = p.dim(1);
  auto tg = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if ((*tg)[r] >= c) detail::shape_error("nll_probs", "target out of range");
    loss -= std::log(std::max(p.value()[r * c + (*tg)[r]], kProbFloor<T>));
  }
  loss /= static_cast<T>(rows);
  return detail::make_result<T>("nll_probs", {}, {loss}, {p}, [tg, rows, c](Node<T>& n) {
    if (auto* par = detail::parent(n, 0)) {
      T* g = par->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T pv = par->value[r * c + (*tg)[r]];
        if (pv > kProbFloor<T>) g[r * c + (*tg)[r]] -= n.grad[0] / (static_cast<T>(rows) * pv);
      }
    }
  });
}

/// Mean binary cross-entropy between sigmoid(z) and targets in {0,1}; z has
/// one logit per target.
template <class T>
Var<T> bce_logits(const Var<T>& z, std::span<const T> targets) {
  if (z.numel() != targets.size())
    detail::shape_error("bce_logits", "logits " + shape_str(z.shape()) + " with " + std::to_string(targets.size()) + " targets");
  const std::size_t nt = targets.size();
  auto tg = std::make_shared<Buffer<T>>(targets.begin(), targets.end());
  T loss = 0;
  for (std::size_t i = 0; i < nt; ++i) {
    const T x = z.value()[i];
    loss += std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))) - (*tg)[i] * x;
  }
  loss /= static_cast<T>(nt);
  return detail::make_result<T>("bce_logits", {}, {loss}, {z}, [tg, nt](Node<T>& n) {
    if (auto* p = detail::parent(n, 0)) {
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < nt; ++i) {
        const T x = p->value[i];
        const T s = x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
        g[i] += n.grad[0] * (s - (*tg)[i]) / static_cast<T>(nt);
      }
    }
  });
}

}  // namespace coopbeam::nn
