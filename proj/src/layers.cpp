/* Copyright 2026 The BEVTraj Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "bevtraj/layers.hpp"

#include <cmath>

namespace bevtraj::nn {

MlpImpl::MlpImpl(int64_t in_dim, int64_t hidden_dim, int64_t out_dim, int n_layers) {
  TORCH_CHECK(n_layers >= 1, "Mlp needs at least one layer");
  int64_t prev = in_dim;
  for (int i = 0; i < n_layers; ++i) {
    const int64_t next = (i + 1 == n_layers) ? out_dim : hidden_dim;
    layers_.push_back(register_module("fc" + std::to_string(i), torch::nn::Linear(prev, next)));
    prev = next;
  }
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) {
  torch::Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h);
    if (i + 1 < layers_.size()) h = torch::relu(h);
  }
  return h;
}

void MlpImpl::zero_last() {
  torch::NoGradGuard guard;
  layers_.back()->weight.zero_();
  layers_.back()->bias.zero_();
}

MultiheadAttentionImpl::MultiheadAttentionImpl(int64_t dim, int64_t n_heads)
    : dim_(dim), n_heads_(n_heads) {
  TORCH_CHECK(dim % n_heads == 0, "attention dim must be divisible by the head count");
  q_proj_ = register_module("q_proj", torch::nn::Linear(dim, dim));
  k_proj_ = register_module("k_proj", torch::nn::Linear(dim, dim));
  v_proj_ = register_module("v_proj", torch::nn::Linear(dim, dim));
  out_proj_ = register_module("out_proj", torch::nn::Linear(dim, dim));
}

torch::Tensor MultiheadAttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& key,
                                              const torch::Tensor& value,
                                              const std::optional<torch::Tensor>& key_mask,
                                              const std::optional<torch::Tensor>& attn_mask) {
  const int64_t n = query.size(0);
  const int64_t lq = query.size(1);
  const int64_t lk = key.size(1);
  const int64_t dh = dim_ / n_heads_;

  auto split = [&](const torch::Tensor& t, int64_t len) {
    return t.view({n, len, n_heads_, dh}).transpose(1, 2);  // [N, h, L, dh]
  };
  auto q = split(q_proj_->forward(query), lq);
  auto k = split(k_proj_->forward(key), lk);
  auto v = split(v_proj_->forward(value), lk);

  auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
  // Finite fill keeps fully-masked rows NaN-free; exp underflows to exactly 0.
  constexpr double kMasked = -1e9;
  if (key_mask) {
    logits = logits.masked_fill(key_mask->logical_not().view({n, 1, 1, lk}), kMasked);
  }
  if (attn_mask) {
    logits = logits.masked_fill(attn_mask->logical_not().view({n, 1, lq, lk}), kMasked);
  }
  auto weights = torch::softmax(logits, -1);
  last_weights_ = weights;
  auto out = torch::matmul(weights, v).transpose(1, 2).reshape({n, lq, dim_});
  return out_proj_->forward(out);
}

AttentionBlockImpl::AttentionBlockImpl(int64_t dim, int64_t n_heads) {
  attn = register_module("attn", MultiheadAttention(dim, n_heads));
  norm_q = register_module("norm_q", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm_kv = register_module("norm_kv", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& ctx,
                                          const torch::Tensor& pos_q, const torch::Tensor& pos_k,
                                          const std::optional<torch::Tensor>& key_mask,
                                          const std::optional<torch::Tensor>& attn_mask) {
  auto xq = norm_q->forward(x);
  auto kv = ctx.defined() ? norm_kv->forward(ctx) : xq;
  auto q = pos_q.defined() ? xq + pos_q : xq;
  auto k = kv;
  if (pos_k.defined()) {
    k = kv + pos_k;
  } else if (!ctx.defined() && pos_q.defined()) {
    k = q;
  }
  return x + attn->forward(q, k, kv, key_mask, attn_mask);
}

FeedForwardImpl::FeedForwardImpl(int64_t dim, int64_t hidden_dim) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden_dim));
  fc2 = register_module("fc2", torch::nn::Linear(hidden_dim, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
  return x + fc2->forward(torch::relu(fc1->forward(norm->forward(x))));
}

}  // namespace bevtraj::nn
