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

#include "bevtraj/geom.hpp"

namespace bevtraj::model {

struct BevEncoderOptions {
  int64_t in_channels = 6;
  int64_t dim = 256;
  int64_t blocks = 2;
  int64_t stride = 1;
  int64_t classes = 5;
};

// Surrogate sensor encoder: conv stem followed by residual 3x3 blocks, no
// normalisation layers so the map stays translation equivariant away from
// the border. A 1x1 head produces segmentation logits.
struct BevEncoderImpl : torch::nn::Module {
  explicit BevEncoderImpl(const BevEncoderOptions& options);

  // raster: [N, C_in, H, W] -> B: [N, dim, H / stride, W / stride]
  torch::Tensor forward(const torch::Tensor& raster);
  // B -> per-cell class logits [N, classes, H', W']
  torch::Tensor segment(const torch::Tensor& bev);
  // Throws Error(kInvalidArgument) if the raster does not match `spec`.
  void check_input(const torch::Tensor& raster, const geom::GridSpec& spec) const;

  const BevEncoderOptions& options() const { return options_; }

  torch::nn::Conv2d stem{nullptr};
  std::vector<torch::nn::Conv2d> conv_a, conv_b;
  torch::nn::Conv2d seg_head{nullptr};

 private:
  BevEncoderOptions options_;
};
TORCH_MODULE(BevEncoder);

// Mean per-cell cross-entropy of the segmentation head.
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& labels);
// Fraction of cells whose argmax class equals the label.
double segmentation_accuracy(const torch::Tensor& logits, const torch::Tensor& labels);

}  // namespace bevtraj::model
