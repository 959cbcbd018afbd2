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

#include "bevtraj/bev_encoder.hpp"

#include "bevtraj/error.hpp"

namespace bevtraj::model {

namespace {
torch::nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}
}  // namespace

BevEncoderImpl::BevEncoderImpl(const BevEncoderOptions& options) : options_(options) {
  stem = register_module("stem", conv3(options.in_channels, options.dim, options.stride));
  for (int64_t i = 0; i < options.blocks; ++i) {
    conv_a.push_back(register_module("block" + std::to_string(i) + "_a", conv3(options.dim, options.dim)));
    conv_b.push_back(register_module("block" + std::to_string(i) + "_b", conv3(options.dim, options.dim)));
    // Residual branches start small so the stack begins close to the stem.
    torch::NoGradGuard guard;
    conv_b.back()->weight.mul_(0.1);
  }
  seg_head = register_module(
      "seg_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(options.dim, options.classes, 1)));
}

void BevEncoderImpl::check_input(const torch::Tensor& raster, const geom::GridSpec& spec) const {
  if (raster.dim() != 4 || raster.size(1) != options_.in_channels || raster.size(2) != spec.height_cells ||
      raster.size(3) != spec.width_cells) {
    throw Error(ErrorCode::kInvalidArgument,
                "bev encoder: raster shape " + std::string(c10::str(raster.sizes())) + " does not match grid " +
                    std::to_string(spec.height_cells) + "x" + std::to_string(spec.width_cells) + " with " +
                    std::to_string(options_.in_channels) + " channels");
  }
}

torch::Tensor BevEncoderImpl::forward(const torch::Tensor& raster) {
  if (raster.dim() != 4 || raster.size(1) != options_.in_channels) {
    throw Error(ErrorCode::kInvalidArgument, "bev encoder: expected [N, " + std::to_string(options_.in_channels) +
                                                 ", H, W], got " + c10::str(raster.sizes()));
  }
  auto x = torch::relu(stem->forward(raster));
  for (std::size_t i = 0; i < conv_a.size(); ++i) {
    x = x + conv_b[i]->forward(torch::relu(conv_a[i]->forward(x)));
  }
  return x;
}

torch::Tensor BevEncoderImpl::segment(const torch::Tensor& bev) { return seg_head->forward(bev); }

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  return torch::nn::functional::cross_entropy(logits, labels);
}

double segmentation_accuracy(const torch::Tensor& logits, const torch::Tensor& labels) {
  torch::NoGradGuard guard;
  return logits.argmax(1).eq(labels).to(torch::kDouble).mean().item<double>();
}

}  // namespace bevtraj::model
