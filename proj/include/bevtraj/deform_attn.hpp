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

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace bevtraj::attn {

// Single-scale deformable attention kernel with a hand-written backward.
//   value:   [N, H*W, heads, head_dim] (row-major cells)
//   loc:     [N, M, heads, points, 2] normalized (u, v)
//   weights: [N, M, heads, points] (already normalized)
//   return:  [N, M, heads * head_dim]
torch::Tensor deform_attn_core(const torch::Tensor& value, int64_t height, int64_t width,
                               const torch::Tensor& loc, const torch::Tensor& weights);

struct DeformAttnOptions {
  int64_t dim = 256;
  int64_t n_heads = 8;
  int64_t n_points = 4;
  // When > 0, predicted offsets are clamped to [-r, r] cells per axis.
  double max_offset_cells = 0.0;
};

// Deformable cross-attention of M queries against a BEV feature map.
// Offsets are predicted in cell units and divided by the grid size.
struct DeformAttnImpl : torch::nn::Module {
  explicit DeformAttnImpl(const DeformAttnOptions& options);

  // query: [N, M, D]; refs: [N, M, 2]; bev: [N, D, H, W]
  // offsets (optional): [N, M, heads, points, 2] in cells, replaces the offset head.
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& refs,
                        const torch::Tensor& bev, const torch::Tensor& offsets = {});

  // Value projection of every cell: [N, H*W, heads, head_dim].
  torch::Tensor project_values(const torch::Tensor& bev);
  // Raw offsets in cell units for the given queries: [N, M, heads, points, 2].
  torch::Tensor predict_offsets(const torch::Tensor& query);
  // Sampling locations used by the last forward, [N, M, heads, points, 2].
  const torch::Tensor& last_locations() const { return last_loc_; }
  // Softmax attention weights of the last forward, [N, M, heads, points].
  const torch::Tensor& last_weights() const { return last_weights_; }

  const DeformAttnOptions& options() const { return options_; }

  torch::nn::Linear value_proj{nullptr}, offset_head{nullptr}, weight_head{nullptr},
      output_proj{nullptr};

 private:
  DeformAttnOptions options_;
  torch::Tensor last_loc_;
  torch::Tensor last_weights_;
};
TORCH_MODULE(DeformAttn);

// Indices of the K largest entries, ordered by value (descending) with ties
// broken by lower index.
std::vector<int64_t> top_k_cells(const float* saliency, int64_t n, int64_t k);
std::vector<int64_t> top_k_cells(const double* saliency, int64_t n, int64_t k);

struct KeySamples {
  torch::Tensor refs;      // [N, K, 2] centres of the selected cells
  torch::Tensor offsets;   // [N, K, heads, points, 2] cells, predicted from B at refs
  torch::Tensor gate;      // [N, K] straight-through gate, exactly 1 in the forward pass
  torch::Tensor indices;   // [N, K] int64 row-major cell indices
  torch::Tensor saliency;  // [N, H*W] logits
};

// Reference points and offsets derived from the key (the BEV map) instead of
// the query. Selection is a hard top-K of a 1x1 saliency head; gradients reach
// the saliency head through a temperature softmax relaxation.
struct KeyDrivenSamplerImpl : torch::nn::Module {
  KeyDrivenSamplerImpl(int64_t dim, int64_t n_heads, int64_t n_points, double temperature = 1.0);

  KeySamples forward(const torch::Tensor& bev, int64_t k);
  // Same as forward but with externally supplied saliency logits [N, H*W].
  KeySamples sample_with_saliency(const torch::Tensor& bev, const torch::Tensor& saliency,
                                  int64_t k);

  torch::nn::Linear saliency_head{nullptr}, offset_head{nullptr};

 private:
  int64_t n_heads_;
  int64_t n_points_;
  double temperature_;
};
TORCH_MODULE(KeyDrivenSampler);

// Scaled dot-product logits between per-head query slices and every
// value-projected cell: [N, M, heads, H*W].
torch::Tensor dense_attention_logits(const torch::Tensor& query, const torch::Tensor& values);

// Exact attention over every cell of a small map, sharing the value and
// output projections of `params`. Test oracle only; rejects H*W > 4096.
torch::Tensor dense_attn_oracle(const torch::Tensor& query, const torch::Tensor& bev,
                                DeformAttnImpl& params);

}  // namespace bevtraj::attn
