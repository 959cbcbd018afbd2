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
#include "bevtraj/scene_encoder.hpp"

namespace bevtraj::model {

// GMM parameter layout along the last axis.
inline constexpr int64_t kGmmParams = 5;  // mu_x, mu_y, sigma_x, sigma_y, rho

struct Hypotheses {
  torch::Tensor gmm;     // [N, K, T, 5]
  torch::Tensor logits;  // [N, K]

  torch::Tensor means() const { return gmm.narrow(-1, 0, 2); }
  torch::Tensor probs() const { return torch::softmax(logits, -1); }
};

// Maps raw head outputs [.., 3] to (sigma_x, sigma_y, rho).
torch::Tensor gmm_scale(const torch::Tensor& raw);

struct DecoderOptions {
  int64_t dim = 256;
  int64_t heads = 8;
  int64_t points = 4;
  int64_t modes = 10;
  int64_t sgcp_blocks = 2;
  int64_t itr_blocks = 3;
  int64_t history = 21;
  int64_t horizon = 60;
  double key_temperature = 1.0;
};

// Geometry of the current batch shared by every decoder stage.
struct DecoderInputs {
  torch::Tensor bev;            // [N, D, H, W]
  torch::Tensor s_ego;          // [N, t, 7]
  torch::Tensor s_target;       // [N, t, 7]
  torch::Tensor target_in_ego;  // [N, 3]
  double range_m = 50.0;
};

struct GoalSet {
  torch::Tensor queries;  // [N, K, D]
  torch::Tensor goals;    // [N, K, 2] metres, target frame
  torch::Tensor disp;     // [N, K]
};

struct SgcpImpl : torch::nn::Module {
  explicit SgcpImpl(const DecoderOptions& options);
  GoalSet forward(const DecoderInputs& in);

  torch::Tensor seeds;  // [K, D]
  nn::Mlp ego_embed{nullptr}, target_embed{nullptr};
  std::vector<nn::Mlp> fuse_ego, fuse_target;
  std::vector<attn::KeyDrivenSampler> sampler;
  std::vector<attn::DeformAttn> deform;
  std::vector<torch::nn::LayerNorm> deform_norm;
  std::vector<nn::AttentionBlock> mode_attn;
  std::vector<nn::FeedForward> ffn;
  std::vector<torch::nn::Linear> goal_head;
  nn::Mlp disp_head{nullptr};

 private:
  DecoderOptions options_;
};
TORCH_MODULE(Sgcp);

struct StageOutput {
  torch::Tensor embedding;  // [N, K, T, D]
  Hypotheses hyp;
  torch::Tensor outside;    // [N, K] or [N, K, T] reference fell off the grid
};

// Context tokens C with their positional encodings, computed once per batch.
struct ContextView {
  torch::Tensor tokens;  // [N, L, D]
  torch::Tensor pos;     // [N, L, D]
  torch::Tensor valid;   // [N, L]
};

struct ItpImpl : torch::nn::Module {
  explicit ItpImpl(const DecoderOptions& options);
  StageOutput forward(const GoalSet& goals, const ContextView& ctx, const DecoderInputs& in);

  nn::Mlp pos_mlp{nullptr};
  nn::AttentionBlock cross{nullptr};
  attn::DeformAttn deform{nullptr};
  torch::nn::LayerNorm deform_norm{nullptr};
  nn::FeedForward ffn{nullptr};
  nn::Mlp expand{nullptr};
  nn::Mlp delta_head{nullptr}, scale_head{nullptr}, logit_head{nullptr};

 private:
  DecoderOptions options_;
  torch::Tensor time_pe_;
};
TORCH_MODULE(Itp);

struct ItrBlockImpl : torch::nn::Module {
  explicit ItrBlockImpl(const DecoderOptions& options);
  // prev: [N, K, T, 2] means of the previous layer
  StageOutput forward(const torch::Tensor& embedding, const torch::Tensor& prev, const ContextView& ctx,
                      const DecoderInputs& in);

  nn::Mlp pos_mlp{nullptr};
  nn::AttentionBlock temporal{nullptr}, mode{nullptr}, cross{nullptr};
  attn::DeformAttn deform{nullptr};
  torch::nn::LayerNorm deform_norm{nullptr};
  nn::FeedForward ffn{nullptr};
  nn::Mlp delta_head{nullptr}, scale_head{nullptr}, logit_head{nullptr};

 private:
  DecoderOptions options_;
  torch::Tensor time_pe_;
};
TORCH_MODULE(ItrBlock);

struct DecoderOutput {
  GoalSet goals;
  std::vector<Hypotheses> layers;  // ITP first, then each ITR block
  std::vector<torch::Tensor> outside;
};

struct DecoderImpl : torch::nn::Module {
  explicit DecoderImpl(const DecoderOptions& options);
  DecoderOutput forward(const SceneContext& ctx, const DecoderInputs& in);

  nn::Mlp ctx_pos{nullptr};
  Sgcp sgcp{nullptr};
  Itp itp{nullptr};
  std::vector<ItrBlock> itr;

 private:
  DecoderOptions options_;
};
TORCH_MODULE(Decoder);

}  // namespace bevtraj::model
