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

// The cooperative predictor: per-slice CNN front-end, dual-view patch tokens
// with time/BS embeddings, a small pre-norm transformer, attention pooling
// over BSs and one of three output heads (switch-gated, ungated,
// hierarchical BS-then-beam).
//
// Frames shared by overlapping windows go through the front-end once per
// batch; tokens are then assembled by row gathers.

#pragma once

#include "coopbeam/dataset.hpp"
#include "coopbeam/nn/ops.hpp"
#include "coopbeam/nn/optim.hpp"

#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace coopbeam {

enum class MaskMode { block_causal, causal, none };
enum class HeadKind { gated, ungated, hierarchical };

inline std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::block_causal: return "block_causal";
    case MaskMode::causal: return "causal";
    case MaskMode::none: return "none";
  }
  return "?";
}

inline std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::gated: return "gated";
    case HeadKind::ungated: return "ungated";
    case HeadKind::hierarchical: return "hierarchical";
  }
  return "?";
}

inline MaskMode parse_mask_mode(const std::string& s) {
  if (s == "block_causal") return MaskMode::block_causal;
  if (s == "causal") return MaskMode::causal;
  if (s == "none") return MaskMode::none;
  throw ConfigError("unknown mask mode '" + s + "'");
}

inline HeadKind parse_head_kind(const std::string& s) {
  if (s == "gated") return HeadKind::gated;
  if (s == "ungated") return HeadKind::ungated;
  if (s == "hierarchical") return HeadKind::hierarchical;
  throw ConfigError("unknown head kind '" + s + "'");
}

struct ModelConfig {
  std::size_t d_c = 32;
  std::size_t d = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t patch_len = 1;
  std::size_t rank_r = 32;
  std::size_t conv_channels = 16;
  bool frozen_backbone = false;
  MaskMode mask_mode = MaskMode::block_causal;
  HeadKind head = HeadKind::gated;
  std::uint64_t init_seed = 42;

  void validate(const WindowDims& dims) const {
    if (d == 0 || n_heads == 0 || d % n_heads != 0) throw ConfigError("model: d must be a positive multiple of n_heads");
    if (patch_len == 0 || dims.history_len % patch_len != 0)
      throw ConfigError("model: history_len must be divisible by patch_len");
    if (rank_r == 0 || rank_r * 4 > dims.n_classes()) throw ConfigError("model: rank_r must lie in [1, C/4]");
    if (d_c == 0 || conv_channels == 0) throw ConfigError("model: d_c and conv_channels must be positive");
    if (dims.n_ports < 2 || dims.n_subcarriers < 2) throw ConfigError("model: slices must be at least 2 x 2");
  }
};

// ---------------------------------------------------------------------------
// Batch assembly

/// Front-end input for a batch: the distinct [2, N_p, N_f] slices plus the
/// gather map that rebuilds per-token (slot, view) rows from them.
template <class T>
struct FrameBatch {
  std::size_t batch = 0;
  nn::Var<T> slices;                  // [S, 2, N_p, N_f], S = n_unique * N_BS * 2
  std::vector<std::size_t> token_rows;  // (window, patch, bs, slot-in-patch, view) -> slice row
};

/// Builds a FrameBatch where window i reads frame ids frame_ids[i] (T_h each,
/// oldest first). Id -1 selects an all-zero frame.
template <class T>
FrameBatch<T> make_frame_batch(const WindowSet& set, const std::vector<std::vector<std::int32_t>>& frame_ids,
                               std::size_t patch_len) {
  const WindowDims& dims = set.dims;
  const std::size_t th = dims.history_len;
  const std::size_t n_patch = th / patch_len;
  FrameBatch<T> fb;
  fb.batch = frame_ids.size();

  std::vector<std::int32_t> unique;
  std::unordered_map<std::int32_t, std::size_t> slot_of;
  for (const auto& ids : frame_ids) {
    if (ids.size() != th)
      throw DimensionError("make_frame_batch: window has " + std::to_string(ids.size()) + " frames, expected " +
                           std::to_string(th));
    for (auto id : ids)
      if (slot_of.emplace(id, unique.size()).second) unique.push_back(id);
  }
  const std::size_t nf = set.n_frames();
  const std::size_t fsize = dims.frame_size();
  nn::Buffer<T> buf(unique.size() * fsize, T(0));
  for (std::size_t u = 0; u < unique.size(); ++u) {
    if (unique[u] < 0) continue;
    if (static_cast<std::size_t>(unique[u]) >= nf) throw DimensionError("make_frame_batch: frame id out of range");
    const auto f = set.frame(unique[u]);
    std::copy(f.begin(), f.end(), buf.begin() + static_cast<std::ptrdiff_t>(u * fsize));
  }
  fb.slices = nn::Var<T>::from_buffer({unique.size() * dims.n_bs * 2, 2, dims.n_ports, dims.n_subcarriers}, std::move(buf));

  fb.token_rows.reserve(fb.batch * th * dims.n_bs * 2);
  for (const auto& ids : frame_ids)
    for (std::size_t p = 0; p < n_patch; ++p)
      for (std::size_t b = 0; b < dims.n_bs; ++b)
        for (std::size_t l = 0; l < patch_len; ++l)
          for (std::size_t v = 0; v < 2; ++v)
            fb.token_rows.push_back((slot_of.at(ids[p * patch_len + l]) * dims.n_bs + b) * 2 + v);
  return fb;
}

template <class T>
FrameBatch<T> make_frame_batch(const WindowSet& set, std::span<const std::size_t> windows, std::size_t patch_len) {
  std::vector<std::vector<std::int32_t>> ids;
  ids.reserve(windows.size());
  for (auto i : windows) ids.push_back(set.windows.at(i).frame_ids);
  return make_frame_batch<T>(set, ids, patch_len);
}

// ---------------------------------------------------------------------------
// Parameters

template <class T>
struct BlockParams {
  nn::ParamBlock<T>*ln1_gain, *ln1_bias, *qkv_w, *qkv_b, *proj_w, *proj_b;
  nn::ParamBlock<T>*ln2_gain, *ln2_bias, *fc_w, *fc_b, *out_w, *out_b;
};

template <class T>
struct HeadOutput {
  nn::Var<T> probs;       // [B, C]: distribution used for ranking (fused for gated)
  nn::Var<T> p_stable;    // gated only
  nn::Var<T> p_flip;      // gated only
  nn::Var<T> gate_logit;  // gated only, [B, 1]
  nn::Var<T> p_switch;    // gated only, [B, 1]
  nn::Var<T> logits;      // ungated: z_st + prior
  nn::Var<T> bs_logits;   // hierarchical, [B, N_BS]
  nn::Var<T> beam_logits; // hierarchical, [B, C] laid out as N_BS blocks of N_beam
};

template <class T>
struct Encoded {
  nn::Var<T> patches;  // [B, N_patch, d] pooled patch representations
  nn::Var<T> last;     // [B, d]
  nn::Var<T> bs_weights;  // [B * N_patch, N_BS]
};

template <class T>
struct StageOneLoss {
  nn::Var<T> total;
  T beam = 0;
  T sw = 0;
};

template <class T>
class CrsModel {
 public:
  CrsModel(ModelConfig cfg, WindowDims dims) : cfg_(cfg), dims_(dims) {
    cfg_.validate(dims_);
    build();
    init();
    build_mask();
  }

  const ModelConfig& config() const { return cfg_; }
  const WindowDims& dims() const { return dims_; }
  std::size_t n_patch() const { return dims_.history_len / cfg_.patch_len; }
  std::size_t n_tokens() const { return n_patch() * dims_.n_bs; }

  /// Every parameter block in a fixed order.
  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    for (auto& b : blocks_) out.push_back(b.get());
    return out;
  }

  std::vector<const nn::ParamBlock<T>*> params() const {
    std::vector<const nn::ParamBlock<T>*> out;
    for (auto& b : blocks_) out.push_back(b.get());
    return out;
  }

  nn::ParamBlock<T>* find(const std::string& name) {
    for (auto& b : blocks_)
      if (b->name == name) return b.get();
    return nullptr;
  }

  /// Blocks used by stage-1 (all but the masked-label auxiliary head).
  nn::ParamList<T> stage1_params() {
    nn::ParamList<T> out;
    for (auto& b : blocks_)
      if (b.get() != aux_w_ && b.get() != aux_b_) out.push_back(b.get());
    return out;
  }

  nn::ParamList<T> stage0_params() {
    nn::ParamList<T> out;
    for (auto& b : blocks_)
      if (!is_head_block(b.get())) out.push_back(b.get());
    return out;
  }

  /// Makes requires_grad follow the trainable flag of every block.
  void sync_requires_grad() {
    for (auto& b : blocks_) b->tensor.set_requires_grad(b->trainable);
  }

  void set_grad_enabled(bool on) {
    for (auto& b : blocks_) b->tensor.set_requires_grad(on && b->trainable);
  }

  // --- forward pieces -----------------------------------------------------

  /// [S, 2, N_p, N_f] slices -> [S, d_c] features.
  nn::Var<T> front_end(const nn::Var<T>& slices) const {
    using namespace nn;
    Var<T> x = instance_norm(slices, T(1e-5));
    x = gelu(conv2d(x, conv1_w_->tensor, conv1_b_->tensor, {2, 1}));
    x = gelu(conv2d(x, conv2_w_->tensor, conv2_b_->tensor, {2, 1}));
    return global_mean_pool(x);
  }

  /// Token sequence [B, N_tok, d], patch-major and BS-minor.
  nn::Var<T> tokenize(const FrameBatch<T>& fb) const {
    using namespace nn;
    const std::size_t expect = fb.batch * n_patch() * dims_.n_bs * cfg_.patch_len * 2;
    if (fb.token_rows.size() != expect || fb.slices.rank() != 4 || fb.slices.dim(2) != dims_.n_ports ||
        fb.slices.dim(3) != dims_.n_subcarriers)
      throw DimensionError("tokenize: batch does not match model dims (slices " + shape_str(fb.slices.shape()) + ")");
    Var<T> feat = linear(front_end(fb.slices), embed_w_->tensor, embed_b_->tensor);  // [S, d]
    Var<T> rows = gather_rows(feat, fb.token_rows);
    // patch mean over slots, then the two views summed
    Var<T> tok = scale(mean_groups(rows, cfg_.patch_len * 2), T(2));
    tok = reshape(tok, {fb.batch, n_tokens(), cfg_.d});
    return add(tok, structural_embedding());
  }

  /// e_pos[p] + e_bs[b] for every token, [N_tok, d].
  nn::Var<T> structural_embedding() const {
    std::vector<std::size_t> pi, bi;
    for (std::size_t p = 0; p < n_patch(); ++p)
      for (std::size_t b = 0; b < dims_.n_bs; ++b) {
        pi.push_back(p);
        bi.push_back(b);
      }
    return nn::add(nn::gather_rows(pos_emb_->tensor, pi), nn::gather_rows(bs_emb_->tensor, bi));
  }

  nn::Var<T> backbone(nn::Var<T> x) const {
    using namespace nn;
    const std::size_t bsz = x.dim(0), n = x.dim(1), d = cfg_.d, h = cfg_.n_heads, dh = d / h;
    for (const auto& blk : layers_) {
      Var<T> a = layer_norm(x, blk.ln1_gain->tensor, blk.ln1_bias->tensor);
      Var<T> qkv = linear(a, blk.qkv_w->tensor, blk.qkv_b->tensor);  // [B, N, 3d]
      qkv = permute(reshape(qkv, {bsz, n, 3, h, dh}), {2, 0, 3, 1, 4});  // [3, B, H, N, dh]
      auto part = [&](std::size_t i) { return reshape(gather_rows(qkv, {i}), {bsz * h, n, dh}); };
      Var<T> att = attention(part(0), part(1), part(2), std::span<const T>(mask_));
      att = reshape(permute(reshape(att, {bsz, h, n, dh}), {0, 2, 1, 3}), {bsz, n, d});
      x = add(x, linear(att, blk.proj_w->tensor, blk.proj_b->tensor));
      Var<T> m = layer_norm(x, blk.ln2_gain->tensor, blk.ln2_bias->tensor);
      m = linear(gelu(linear(m, blk.fc_w->tensor, blk.fc_b->tensor)), blk.out_w->tensor, blk.out_b->tensor);
      x = add(x, m);
    }
    return x;
  }

  /// Softmax over BSs of a^T tanh(W_a h) within each patch, then the weighted sum.
  Encoded<T> pool(const nn::Var<T>& hidden) const {
    using namespace nn;
    const std::size_t bsz = hidden.dim(0), np = n_patch(), nb = dims_.n_bs, d = cfg_.d;
    Var<T> score = linear(tanh(linear(hidden, pool_w_->tensor)), pool_a_->tensor);  // [B, N_tok, 1]
    Var<T> alpha = softmax(reshape(score, {bsz * np, nb}));
    Var<T> r = bmm(reshape(alpha, {bsz * np, 1, nb}), reshape(hidden, {bsz * np, nb, d}));
    Encoded<T> e;
    e.patches = reshape(r, {bsz, np, d});
    std::vector<std::size_t> last;
    for (std::size_t i = 0; i < bsz; ++i) last.push_back(i * np + np - 1);
    e.last = gather_rows(reshape(r, {bsz * np, d}), last);
    e.bs_weights = alpha;
    return e;
  }

  Encoded<T> encode(const FrameBatch<T>& fb) const { return pool(backbone(tokenize(fb))); }

  /// Current-label transition bias U (V^T onehot(y_now)), [B, C].
  nn::Var<T> transition_prior(std::span<const std::size_t> y_now) const {
    check_labels(y_now, "transition_prior");
    std::vector<std::size_t> idx(y_now.begin(), y_now.end());
    return nn::matmul(nn::gather_rows(prior_v_->tensor, idx), prior_u_->tensor, true);
  }

  /// y_now holds 0-based class indices.
  HeadOutput<T> head(const nn::Var<T>& h, std::span<const std::size_t> y_now) const {
    using namespace nn;
    if (h.rank() != 2 || h.dim(1) != cfg_.d || h.dim(0) != y_now.size())
      throw DimensionError("head: features " + shape_str(h.shape()) + " with " + std::to_string(y_now.size()) + " labels");
    HeadOutput<T> out;
    switch (cfg_.head) {
      case HeadKind::gated: {
        Var<T> prior = transition_prior(y_now);
        Var<T> z_st = add(linear(h, stable_w_->tensor, stable_b_->tensor), prior);
        Var<T> z_fl = add(z_st, linear(h, flip_w_->tensor, flip_b_->tensor));
        out.p_stable = softmax(z_st);
        out.p_flip = softmax(z_fl);
        out.gate_logit = linear(h, gate_w_->tensor, gate_b_->tensor);
        out.p_switch = sigmoid(out.gate_logit);
        out.probs = add(mul_rows(out.p_stable, affine(out.p_switch, T(-1), T(1))), mul_rows(out.p_flip, out.p_switch));
        break;
      }
      case HeadKind::ungated: {
        out.logits = add(linear(h, stable_w_->tensor, stable_b_->tensor), transition_prior(y_now));
        out.probs = softmax(out.logits);
        break;
      }
      case HeadKind::hierarchical: {
        check_labels(y_now, "head");
        out.bs_logits = linear(h, bs_w_->tensor, bs_b_->tensor);
        out.beam_logits = linear(h, beam_w_->tensor, beam_b_->tensor);
        out.probs = hierarchical_probs(out.bs_logits, out.beam_logits);
        break;
      }
    }
    return out;
  }

  /// Stage-1 objective. Gated: -log p_fused[y] + lambda * BCE(gate, s).
  /// Ungated: cross-entropy. Hierarchical: CE(BS) + CE(beam | true BS).
  StageOneLoss<T> stage1_loss(const HeadOutput<T>& out, std::span<const std::size_t> y_next,
                              std::span<const T> s_next, T lambda_sw) const {
    using namespace nn;
    StageOneLoss<T> l;
    switch (cfg_.head) {
      case HeadKind::gated: {
        Var<T> lb = nll_probs(out.probs, y_next);
        Var<T> ls = bce_logits(out.gate_logit, s_next);
        l.beam = lb.item();
        l.sw = ls.item();
        l.total = add(lb, scale(ls, lambda_sw));
        break;
      }
      case HeadKind::ungated: {
        l.total = cross_entropy_logits(out.logits, y_next);
        l.beam = l.total.item();
        break;
      }
      case HeadKind::hierarchical: {
        const std::size_t bsz = y_next.size(), nb = dims_.n_bs, nm = dims_.n_beam;
        std::vector<std::size_t> bs(bsz), beam(bsz), rows(bsz);
        for (std::size_t i = 0; i < bsz; ++i) {
          bs[i] = y_next[i] / nm;
          beam[i] = y_next[i] % nm;
          rows[i] = i * nb + bs[i];
        }
        Var<T> per_bs = gather_rows(reshape(out.beam_logits, {bsz * nb, nm}), rows);
        l.total = add(cross_entropy_logits(out.bs_logits, bs), cross_entropy_logits(per_bs, beam));
        l.beam = l.total.item();
        break;
      }
    }
    return l;
  }

  /// Scores whose descending order (ties to the lowest index) is the model's
  /// class ranking. For the hierarchical head the BS decision comes first.
  std::vector<T> ranking_scores(const HeadOutput<T>& out) const {
    const std::size_t bsz = out.probs.dim(0), c = dims_.n_classes();
    std::vector<T> s(out.probs.value().begin(), out.probs.value().end());
    if (cfg_.head != HeadKind::hierarchical) return s;
    const std::size_t nb = dims_.n_bs, nm = dims_.n_beam;
    for (std::size_t i = 0; i < bsz; ++i) {
      const auto bl = out.bs_logits.value().subspan(i * nb, nb);
      const std::size_t best = argmax_lowest(bl);
      // beams of the chosen BS ranked by p(m | b*), ahead of everything else
      std::vector<T> cond(nm);
      nn::detail::softmax_rows(out.beam_logits.data() + i * c + best * nm, 1, nm, cond.data());
      for (std::size_t m = 0; m < nm; ++m) s[i * c + best * nm + m] = T(1) + cond[m];
    }
    return s;
  }

  /// Auxiliary masked-label logits for rows (window, patch) of the pooled
  /// patch representations, [n, C].
  nn::Var<T> aux_logits(const Encoded<T>& e, const std::vector<std::size_t>& patch_rows) const {
    const std::size_t bsz = e.patches.dim(0);
    nn::Var<T> flat = nn::reshape(e.patches, {bsz * n_patch(), cfg_.d});
    return nn::linear(nn::gather_rows(flat, patch_rows), aux_w_->tensor, aux_b_->tensor);
  }

 private:
  ModelConfig cfg_;
  WindowDims dims_;
  std::vector<std::unique_ptr<nn::ParamBlock<T>>> blocks_;
  std::vector<BlockParams<T>> layers_;
  nn::Buffer<T> mask_;

  nn::ParamBlock<T>*conv1_w_ = nullptr, *conv1_b_ = nullptr, *conv2_w_ = nullptr, *conv2_b_ = nullptr;
  nn::ParamBlock<T>*embed_w_ = nullptr, *embed_b_ = nullptr, *pos_emb_ = nullptr, *bs_emb_ = nullptr;
  nn::ParamBlock<T>*pool_w_ = nullptr, *pool_a_ = nullptr;
  nn::ParamBlock<T>*stable_w_ = nullptr, *stable_b_ = nullptr, *flip_w_ = nullptr, *flip_b_ = nullptr;
  nn::ParamBlock<T>*prior_u_ = nullptr, *prior_v_ = nullptr, *gate_w_ = nullptr, *gate_b_ = nullptr;
  nn::ParamBlock<T>*bs_w_ = nullptr, *bs_b_ = nullptr, *beam_w_ = nullptr, *beam_b_ = nullptr;
  nn::ParamBlock<T>*aux_w_ = nullptr, *aux_b_ = nullptr;

  enum class Init { normal, normal_residual, zeros, ones, conv_uniform };
  std::vector<Init> init_kind_;

  nn::ParamBlock<T>* add_block(const std::string& name, nn::Shape shape, Init kind, bool trainable = true) {
    auto b = std::make_unique<nn::ParamBlock<T>>();
    b->name = name;
    b->tensor = nn::Var<T>::zeros(std::move(shape), trainable);
    b->trainable = trainable;
    blocks_.push_back(std::move(b));
    init_kind_.push_back(kind);
    return blocks_.back().get();
  }

  bool is_head_block(const nn::ParamBlock<T>* p) const {
    for (auto* q : {stable_w_, stable_b_, flip_w_, flip_b_, prior_u_, prior_v_, gate_w_, gate_b_, bs_w_, bs_b_, beam_w_,
                    beam_b_})
      if (p == q) return true;
    return false;
  }

  void check_labels(std::span<const std::size_t> y, const char* where) const {
    for (auto v : y)
      if (v >= dims_.n_classes())
        throw std::out_of_range(std::string(where) + ": current label index " + std::to_string(v) + " outside 0.." +
                                std::to_string(dims_.n_classes() - 1));
  }

  nn::Var<T> hierarchical_probs(const nn::Var<T>& bs_logits, const nn::Var<T>& beam_logits) const {
    // p(b) p(m | b) laid out as the joint label; used for the loss-free
    // distribution view and as the non-cascade part of the ranking
    const std::size_t bsz = bs_logits.dim(0), nb = dims_.n_bs, nm = dims_.n_beam;
    nn::Buffer<T> pb(bsz * nb), pm(bsz * nb * nm), out(bsz * nb * nm);
    nn::detail::softmax_rows(bs_logits.data(), bsz, nb, pb.data());
    nn::detail::softmax_rows(beam_logits.data(), bsz * nb, nm, pm.data());
    for (std::size_t i = 0; i < bsz; ++i)
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t m = 0; m < nm; ++m)
          out[(i * nb + b) * nm + m] = pb[i * nb + b] * pm[(i * nb + b) * nm + m];
    return nn::Var<T>::from_buffer({bsz, nb * nm}, std::move(out));
  }

  void build() {
    const std::size_t d = cfg_.d, c = dims_.n_classes(), cc = cfg_.conv_channels;
    conv1_w_ = add_block("frontend.conv1.weight", {cc, 2, 3, 3}, Init::conv_uniform);
    conv1_b_ = add_block("frontend.conv1.bias", {cc}, Init::conv_uniform);
    conv2_w_ = add_block("frontend.conv2.weight", {cfg_.d_c, cc, 3, 3}, Init::conv_uniform);
    conv2_b_ = add_block("frontend.conv2.bias", {cfg_.d_c}, Init::conv_uniform);
    embed_w_ = add_block("embed.weight", {d, cfg_.d_c}, Init::normal);
    embed_b_ = add_block("embed.bias", {d}, Init::zeros);
    pos_emb_ = add_block("embed.patch_position", {n_patch(), d}, Init::normal);
    bs_emb_ = add_block("embed.bs", {dims_.n_bs, d}, Init::normal);
    const bool tr = !cfg_.frozen_backbone;
    layers_.resize(cfg_.n_layers);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "backbone." + std::to_string(l) + ".";
      auto& L = layers_[l];
      auto take = [&](nn::ParamBlock<T>*& dst, const std::string& n, nn::Shape s, Init k, bool t) {
        dst = add_block(p + n, std::move(s), k, t);
      };
      take(L.ln1_gain, "ln1.gain", {d}, Init::ones, true);
      take(L.ln1_bias, "ln1.bias", {d}, Init::zeros, true);
      take(L.qkv_w, "attn.qkv.weight", {3 * d, d}, Init::normal, tr);
      take(L.qkv_b, "attn.qkv.bias", {3 * d}, Init::zeros, tr);
      take(L.proj_w, "attn.proj.weight", {d, d}, Init::normal_residual, tr);
      take(L.proj_b, "attn.proj.bias", {d}, Init::zeros, tr);
      take(L.ln2_gain, "ln2.gain", {d}, Init::ones, true);
      take(L.ln2_bias, "ln2.bias", {d}, Init::zeros, true);
      take(L.fc_w, "mlp.fc.weight", {4 * d, d}, Init::normal, tr);
      take(L.fc_b, "mlp.fc.bias", {4 * d}, Init::zeros, tr);
      take(L.out_w, "mlp.out.weight", {d, 4 * d}, Init::normal_residual, tr);
      take(L.out_b, "mlp.out.bias", {d}, Init::zeros, tr);
    }
    pool_w_ = add_block("pool.proj.weight", {d, d}, Init::normal);
    pool_a_ = add_block("pool.score.weight", {1, d}, Init::normal);
    switch (cfg_.head) {
      case HeadKind::gated:
        stable_w_ = add_block("head.stable.weight", {c, d}, Init::normal);
        stable_b_ = add_block("head.stable.bias", {c}, Init::zeros);
        flip_w_ = add_block("head.flip_residual.weight", {c, d}, Init::normal);
        flip_b_ = add_block("head.flip_residual.bias", {c}, Init::zeros);
        prior_u_ = add_block("head.prior.u", {c, cfg_.rank_r}, Init::normal);
        prior_v_ = add_block("head.prior.v", {c, cfg_.rank_r}, Init::normal);
        gate_w_ = add_block("head.gate.weight", {1, d}, Init::normal);
        gate_b_ = add_block("head.gate.bias", {1}, Init::zeros);
        break;
      case HeadKind::ungated:
        stable_w_ = add_block("head.stable.weight", {c, d}, Init::normal);
        stable_b_ = add_block("head.stable.bias", {c}, Init::zeros);
        prior_u_ = add_block("head.prior.u", {c, cfg_.rank_r}, Init::normal);
        prior_v_ = add_block("head.prior.v", {c, cfg_.rank_r}, Init::normal);
        break;
      case HeadKind::hierarchical:
        bs_w_ = add_block("head.bs.weight", {dims_.n_bs, d}, Init::normal);
        bs_b_ = add_block("head.bs.bias", {dims_.n_bs}, Init::zeros);
        beam_w_ = add_block("head.beam.weight", {c, d}, Init::normal);
        beam_b_ = add_block("head.beam.bias", {c}, Init::zeros);
        break;
    }
    aux_w_ = add_block("aux.masked_label.weight", {c, d}, Init::normal);
    aux_b_ = add_block("aux.masked_label.bias", {c}, Init::zeros);
  }

  void init() {
    Rng rng(derive_seed(cfg_.init_seed, 0, 10));
    std::normal_distribution<double> normal(0.0, 0.02);
    const double resid = 0.02 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(cfg_.n_layers, 1)));
    const double conv1_bound = 1.0 / std::sqrt(2.0 * 9.0);
    const double conv2_bound = 1.0 / std::sqrt(static_cast<double>(cfg_.conv_channels) * 9.0);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      auto v = blocks_[i]->tensor.mutable_value();
      const double bound = blocks_[i]->name.rfind("frontend.conv1", 0) == 0 ? conv1_bound : conv2_bound;
      std::uniform_real_distribution<double> uni(-bound, bound);
      for (auto& x : v) {
        switch (init_kind_[i]) {
          case Init::normal: x = static_cast<T>(normal(rng)); break;
          case Init::normal_residual: x = static_cast<T>(normal(rng) * resid / 0.02); break;
          case Init::zeros: x = T(0); break;
          case Init::ones: x = T(1); break;
          case Init::conv_uniform: x = static_cast<T>(uni(rng)); break;
        }
      }
    }
  }

  void build_mask() {
    const std::size_t n = n_tokens(), nb = dims_.n_bs;
    mask_.assign(n * n, T(0));
    if (cfg_.mask_mode == MaskMode::none) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const bool blocked = cfg_.mask_mode == MaskMode::causal ? j > i : j / nb > i / nb;
        if (blocked) mask_[i * n + j] = nn::kMaskedScore<T>;
      }
  }
};

/// One-hot distribution on the current label.
inline std::vector<float> persistence_scores(const WindowSet& set, std::size_t begin, std::size_t end) {
  const std::size_t c = set.dims.n_classes();
  std::vector<float> s((end - begin) * c, 0.0F);
  for (std::size_t i = begin; i < end; ++i) s[(i - begin) * c + set.windows[i].y_now.index()] = 1.0F;
  return s;
}

}  // namespace coopbeam
