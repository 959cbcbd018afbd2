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

#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

namespace bevtraj::nn {

// Linear -> ReLU -> ... -> Linear.
struct MlpImpl : torch::nn::Module {
  MlpImpl(int64_t in_dim, int64_t hidden_dim, int64_t out_dim, int n_layers = 2);

  torch::Tensor forward(const torch::Tensor& x);
  // Zero the final projection so the MLP starts as the constant zero map.
  void zero_last();
  torch::nn::Linear last() { return layers_.back(); }

 private:
  std::vector<torch::nn::Linear> layers_;
};
TORCH_MODULE(Mlp);

// Scaled dot-product multi-head attention.
// Masks are boolean with true = may attend. A row with no admissible key
// produces an arbitrary finite value; callers must not read it.
struct MultiheadAttentionImpl : torch::nn::Module {
  MultiheadAttentionImpl(int64_t dim, int64_t n_heads);

  // query: [N, Lq, D], key/value: [N, Lk, D]
  // key_mask: [N, Lk]; attn_mask: [N, Lq, Lk]
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& key,
                        const torch::Tensor& value,
                        const std::optional<torch::Tensor>& key_mask = std::nullopt,
                        const std::optional<torch::Tensor>& attn_mask = std::nullopt);

  // Attention probabilities of the last forward call, [N, heads, Lq, Lk].
  const torch::Tensor& last_weights() const { return last_weights_; }

  int64_t n_heads() const { return n_heads_; }

 private:
  int64_t dim_;
  int64_t n_heads_;
  torch::nn::Linear q_proj_{nullptr}, k_proj_{nullptr}, v_proj_{nullptr}, out_proj_{nullptr};
  torch::Tensor last_weights_;
};
TORCH_MODULE(MultiheadAttention);

// Pre-norm residual attention: x + attn(LN(x) + pos_q, LN(ctx) + pos_k, LN(ctx)).
// Self-attention when ctx is undefined.
struct AttentionBlockImpl : torch::nn::Module {
  AttentionBlockImpl(int64_t dim, int64_t n_heads);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& ctx = {},
                        const torch::Tensor& pos_q = {}, const torch::Tensor& pos_k = {},
                        const std::optional<torch::Tensor>& key_mask = std::nullopt,
                        const std::optional<torch::Tensor>& attn_mask = std::nullopt);

  MultiheadAttention attn{nullptr};
  torch::nn::LayerNorm norm_q{nullptr}, norm_kv{nullptr};
};
TORCH_MODULE(AttentionBlock);

// Pre-norm residual feed-forward: x + W2 relu(W1 LN(x)).
struct FeedForwardImpl : torch::nn::Module {
  FeedForwardImpl(int64_t dim, int64_t hidden_dim);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

}  // namespace bevtraj::nn
