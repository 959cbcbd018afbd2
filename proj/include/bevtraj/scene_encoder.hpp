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

#include <vector>

#include <torch/torch.h>

#include "bevtraj/deform_attn.hpp"
#include "bevtraj/layers.hpp"

namespace bevtraj::model {

// Per-step input features derived from a [.., 7] dynamic state:
// (x/20, y/20, cos yaw, sin yaw, vx/10, vy/10, kind, valid), zero where invalid.
torch::Tensor state_features(const torch::Tensor& states);
inline constexpr int64_t kStateFeatures = 8;

struct AgentFeatures {
  torch::Tensor features;  // [N, Na, D]
  torch::Tensor empty;     // [N, Na] bool, no valid history step
};

// Temporal then social self-attention per layer, followed by an MLP and a
// masked max-pool over time.
struct PreEncoderImpl : torch::nn::Module {
  PreEncoderImpl(int64_t dim, int64_t heads, int64_t layers, int64_t steps);
  // hist: [N, Na, t, 7], mask: [N, Na, t]
  AgentFeatures forward(const torch::Tensor& hist, const torch::Tensor& mask);

  torch::nn::Linear input{nullptr};
  std::vector<nn::AttentionBlock> temporal, social;
  std::vector<nn::FeedForward> temporal_ff, social_ff;
  nn::Mlp out{nullptr};

 private:
  int64_t dim_;
  torch::Tensor time_pe_;
};
TORCH_MODULE(PreEncoder);

struct BdaOutput {
  torch::Tensor features;           // [N, Nm, D]
  torch::Tensor anchors;            // [N, Nm, 2] metres, target frame
  torch::Tensor refs;               // [N, Nm, 2] final normalized refs
  std::vector<torch::Tensor> refs_per_layer;  // input refs of each layer, then the final refs
};

// BEV deformable aggregation: zero-initialised queries with learnable
// reference positions, refined additively layer by layer.
struct BdaImpl : torch::nn::Module {
  BdaImpl(int64_t dim, int64_t heads, int64_t points, int64_t n_queries, int64_t layers);
  // bev: [N, D, H, W]; target_in_ego: [N, 3]
  BdaOutput forward(const torch::Tensor& bev, const torch::Tensor& target_in_ego, double range_m);

  torch::Tensor queries;  // [Nm, D]
  torch::Tensor refs;     // [Nm, 2]
  nn::Mlp pos_mlp{nullptr};
  std::vector<nn::AttentionBlock> self_attn;
  std::vector<attn::DeformAttn> cross;
  std::vector<torch::nn::LayerNorm> cross_norm;
  std::vector<nn::FeedForward> ffn;
  std::vector<torch::nn::Linear> offset_head;
  nn::Mlp out{nullptr};

 private:
  int64_t dim_;
};
TORCH_MODULE(Bda);

// Boolean [N, L, L] mask: row i admits the k nearest valid tokens of token i
// by anchor distance (self included, ties by lower index). Rows of invalid
// tokens admit only themselves.
torch::Tensor knn_mask(const torch::Tensor& anchors, const torch::Tensor& valid, int64_t k);

struct LocalSelfAttentionImpl : torch::nn::Module {
  LocalSelfAttentionImpl(int64_t dim, int64_t heads, int64_t layers, int64_t k);
  // tokens: [N, L, D], anchors: [N, L, 2] metres, valid: [N, L]
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& anchors,
                        const torch::Tensor& valid);

  nn::Mlp pos_mlp{nullptr};
  std::vector<nn::AttentionBlock> blocks;
  std::vector<nn::FeedForward> ffn;

 private:
  int64_t dim_;
  int64_t k_;
};
TORCH_MODULE(LocalSelfAttention);

// Single-mode future for every agent, re-encoded and added back to the
// agent tokens.
struct DenseFutureHeadImpl : torch::nn::Module {
  DenseFutureHeadImpl(int64_t dim, int64_t horizon);
  // agent_tokens: [N, Na, D], anchors: [N, Na, 2] -> (prediction [N, Na, T, 2], fused tokens)
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& agent_tokens,
                                                  const torch::Tensor& anchors);

  nn::Mlp head{nullptr};
  nn::Mlp reencode{nullptr};

 private:
  int64_t horizon_;
};
TORCH_MODULE(DenseFutureHead);

struct SceneContext {
  torch::Tensor tokens;   // [N, Na + Nm, D]
  torch::Tensor anchors;  // [N, Na + Nm, 2]
  torch::Tensor valid;    // [N, Na + Nm]
  int64_t n_agents = 0;
  torch::Tensor dense;    // [N, Na, T, 2]
  torch::Tensor empty_agents;  // [N, Na]
  BdaOutput bda;
};

struct SceneEncoderOptions {
  int64_t dim = 256;
  int64_t heads = 8;
  int64_t points = 4;
  int64_t n_bev_queries = 256;
  int64_t pre_layers = 2;
  int64_t bda_layers = 3;
  int64_t local_layers = 6;
  int64_t local_k = 16;
  int64_t history = 21;
  int64_t horizon = 60;
};

struct SceneEncoderImpl : torch::nn::Module {
  explicit SceneEncoderImpl(const SceneEncoderOptions& options);
  SceneContext forward(const torch::Tensor& bev, const torch::Tensor& hist, const torch::Tensor& hist_mask,
                       const torch::Tensor& agent_mask, const torch::Tensor& anchors,
                       const torch::Tensor& target_in_ego, double range_m);

  PreEncoder pre{nullptr};
  Bda bda{nullptr};
  LocalSelfAttention local{nullptr};
  DenseFutureHead dense{nullptr};
  torch::Tensor type_embed;  // [2, D]: agent, bev

 private:
  SceneEncoderOptions options_;
};
TORCH_MODULE(SceneEncoder);

}  // namespace bevtraj::model
