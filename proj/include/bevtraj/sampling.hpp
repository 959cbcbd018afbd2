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

#include <string>

#include <torch/torch.h>

namespace bevtraj::geom {

// Bilinear sampling of a dense feature grid at normalized (u, v) points.
//   grid:   [B, C, H, W]
//   points: [B, M, 2] with (u, v) in [0,1]^2, u along W and v along H
//   return: [B, M, C]
// Cell centres sit at (j + 0.5) / W. Inside the unit square the four-cell
// stencil is clamped to the border; outside it the result is zero. The
// backward pass is hand written and covers both grid values and points.
torch::Tensor bilinear_sample(const torch::Tensor& grid, const torch::Tensor& points);

// Interleaved sin/cos encoding of each coordinate of `positions` ([..., A]).
// `dim` is split evenly across the A axes and must be divisible by 2 * A.
// Frequencies are temperature^(-2i / (dim / A)); positions are multiplied
// by `scale` first.
torch::Tensor sinusoidal_pe(const torch::Tensor& positions, int64_t dim,
                            double temperature = 10000.0, double scale = 1.0);

// Target-frame metric points -> ego-grid normalized points.
//   points: [B, ..., 2] metres in the target frame
//   target_in_ego: [B, 3] (x, y, yaw) of the target frame in the ego frame
torch::Tensor target_to_grid(const torch::Tensor& points, const torch::Tensor& target_in_ego,
                             double range_m);
// Inverse of target_to_grid.
torch::Tensor grid_to_target(const torch::Tensor& uv, const torch::Tensor& target_in_ego,
                             double range_m);

}  // namespace bevtraj::geom

namespace bevtraj::testing {

// Fault injection for the gradient checker: when set to the name of a
// hand-written backward ("bilinear_sample" or "deform_attn_core"), that
// backward scales its gradients by 1.01. Empty string disables.
void set_corrupted_gradient(const std::string& op);
const std::string& corrupted_gradient();

}  // namespace bevtraj::testing
