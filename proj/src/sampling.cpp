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

#include "bevtraj/sampling.hpp"

#include <cmath>

#include "bevtraj/error.hpp"
#include "bilinear_stencil.hpp"

namespace bevtraj::testing {
namespace {
std::string& corrupted_gradient_slot() {
  static std::string op;
  return op;
}
}  // namespace

void set_corrupted_gradient(const std::string& op) { corrupted_gradient_slot() = op; }
const std::string& corrupted_gradient() { return corrupted_gradient_slot(); }

}  // namespace bevtraj::testing

namespace bevtraj::geom {
namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

// grid_cl: [B, H*W, C] (channels last), points: [B, M, 2] -> [B, M, C]
template <typename T>
void sample_forward(const T* grid, const T* pts, T* out, int64_t batch, int64_t n_points,
                    int64_t height, int64_t width, int64_t channels) {
  const int64_t cells = height * width;
  for (int64_t b = 0; b < batch; ++b) {
    const T* g = grid + b * cells * channels;
    for (int64_t m = 0; m < n_points; ++m) {
      const T* p = pts + (b * n_points + m) * 2;
      T* o = out + (b * n_points + m) * channels;
      const auto st = detail::make_stencil<T>(p[0], p[1], height, width);
      if (!st.valid) continue;
      for (int k = 0; k < 4; ++k) {
        const T w = st.weight[k];
        if (w == T(0)) continue;
        const T* cell = g + st.index[k] * channels;
        for (int64_t c = 0; c < channels; ++c) o[c] += w * cell[c];
      }
    }
  }
}

template <typename T>
void sample_backward(const T* grid, const T* pts, const T* grad_out, T* grad_grid, T* grad_pts,
                     int64_t batch, int64_t n_points, int64_t height, int64_t width,
                     int64_t channels, T scale) {
  const int64_t cells = height * width;
  for (int64_t b = 0; b < batch; ++b) {
    const T* g = grid + b * cells * channels;
    T* gg = grad_grid + b * cells * channels;
    for (int64_t m = 0; m < n_points; ++m) {
      const T* p = pts + (b * n_points + m) * 2;
      const T* go = grad_out + (b * n_points + m) * channels;
      T* gp = grad_pts + (b * n_points + m) * 2;
      const auto st = detail::make_stencil<T>(p[0], p[1], height, width);
      if (!st.valid) continue;
      for (int k = 0; k < 4; ++k) {
        const T* cell = g + st.index[k] * channels;
        T* gcell = gg + st.index[k] * channels;
        T dot = 0;
        for (int64_t c = 0; c < channels; ++c) {
          gcell[c] += scale * st.weight[k] * go[c];
          dot += go[c] * cell[c];
        }
        gp[0] += scale * dot * st.du[k];
        gp[1] += scale * dot * st.dv[k];
      }
    }
  }
}

struct BilinearSampleFn : public torch::autograd::Function<BilinearSampleFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& grid,
                               const torch::Tensor& points) {
    const int64_t batch = grid.size(0);
    const int64_t channels = grid.size(1);
    const int64_t height = grid.size(2);
    const int64_t width = grid.size(3);
    const int64_t n_points = points.size(1);
    auto grid_cl = grid.permute({0, 2, 3, 1}).contiguous();
    auto pts = points.contiguous();
    auto out = torch::zeros({batch, n_points, channels}, grid.options());
    AT_DISPATCH_FLOATING_TYPES(grid.scalar_type(), "bilinear_sample_forward", [&] {
      sample_forward<scalar_t>(grid_cl.data_ptr<scalar_t>(), pts.data_ptr<scalar_t>(),
                               out.data_ptr<scalar_t>(), batch, n_points, height, width,
                               channels);
    });
    ctx->save_for_backward({grid_cl, pts});
    ctx->saved_data["height"] = height;
    ctx->saved_data["width"] = width;
    return out;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    auto saved = ctx->get_saved_variables();
    const auto& grid_cl = saved[0];
    const auto& pts = saved[1];
    const int64_t height = ctx->saved_data["height"].toInt();
    const int64_t width = ctx->saved_data["width"].toInt();
    const int64_t batch = grid_cl.size(0);
    const int64_t channels = grid_cl.size(3);
    const int64_t n_points = pts.size(1);
    auto grad_out = grad_outputs[0].contiguous();
    auto grad_grid = torch::zeros_like(grid_cl);
    auto grad_pts = torch::zeros_like(pts);
    const bool corrupt = testing::corrupted_gradient() == "bilinear_sample";
    AT_DISPATCH_FLOATING_TYPES(grid_cl.scalar_type(), "bilinear_sample_backward", [&] {
      sample_backward<scalar_t>(grid_cl.data_ptr<scalar_t>(), pts.data_ptr<scalar_t>(),
                                grad_out.data_ptr<scalar_t>(), grad_grid.data_ptr<scalar_t>(),
                                grad_pts.data_ptr<scalar_t>(), batch, n_points, height, width,
                                channels, corrupt ? scalar_t(1.01) : scalar_t(1));
    });
    return {grad_grid.permute({0, 3, 1, 2}), grad_pts};
  }
};

}  // namespace

torch::Tensor bilinear_sample(const torch::Tensor& grid, const torch::Tensor& points) {
  TORCH_CHECK(grid.dim() == 4, "bilinear_sample: grid must be [B, C, H, W]");
  TORCH_CHECK(points.dim() == 3 && points.size(2) == 2, "bilinear_sample: points must be [B, M, 2]");
  TORCH_CHECK(grid.size(0) == points.size(0), "bilinear_sample: batch mismatch");
  TORCH_CHECK(grid.numel() > 0, "bilinear_sample: empty grid");
  TORCH_CHECK(grid.scalar_type() == points.scalar_type(), "bilinear_sample: dtype mismatch");
  return BilinearSampleFn::apply(grid, points);
}

torch::Tensor sinusoidal_pe(const torch::Tensor& positions, int64_t dim, double temperature,
                            double scale) {
  const int64_t axes = positions.size(-1);
  if (dim <= 0 || dim % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "sinusoidal_pe: dim must be positive and even");
  }
  if (dim % (2 * axes) != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "sinusoidal_pe: dim must be divisible by 2 * number of axes");
  }
  const int64_t per_axis = dim / axes;
  const int64_t n_freq = per_axis / 2;
  auto opts = positions.options();
  auto i = torch::arange(n_freq, opts);
  auto inv_freq = torch::pow(torch::tensor(temperature, opts), -2.0 * i / double(per_axis));
  // [..., A, F]
  auto angles = (positions * scale).unsqueeze(-1) * inv_freq;
  // interleave: [..., A, F, 2] -> [..., A * F * 2]
  auto enc = torch::stack({torch::sin(angles), torch::cos(angles)}, -1);
  return enc.flatten(-3);
}

namespace {

// Broadcast [B, 3] poses against points [B, ..., 2].
std::pair<torch::Tensor, torch::Tensor> pose_terms(const torch::Tensor& points,
                                                   const torch::Tensor& pose) {
  std::vector<int64_t> shape(points.dim(), 1);
  shape[0] = pose.size(0);
  auto view = [&](const torch::Tensor& t) { return t.reshape(shape); };
  auto c = view(torch::cos(pose.select(1, 2)));
  auto s = view(torch::sin(pose.select(1, 2)));
  return {c, s};
}

}  // namespace

torch::Tensor target_to_grid(const torch::Tensor& points, const torch::Tensor& target_in_ego,
                             double range_m) {
  auto [c, s] = pose_terms(points, target_in_ego);
  std::vector<int64_t> shape(points.dim() - 1, 1);
  shape[0] = target_in_ego.size(0);
  auto tx = target_in_ego.select(1, 0).reshape(shape);
  auto ty = target_in_ego.select(1, 1).reshape(shape);
  c = c.squeeze(-1);
  s = s.squeeze(-1);
  auto px = points.select(-1, 0);
  auto py = points.select(-1, 1);
  auto ex = c * px - s * py + tx;
  auto ey = s * px + c * py + ty;
  return torch::stack({(ex + range_m) / (2.0 * range_m), (ey + range_m) / (2.0 * range_m)}, -1);
}

torch::Tensor grid_to_target(const torch::Tensor& uv, const torch::Tensor& target_in_ego,
                             double range_m) {
  auto [c, s] = pose_terms(uv, target_in_ego);
  std::vector<int64_t> shape(uv.dim() - 1, 1);
  shape[0] = target_in_ego.size(0);
  auto tx = target_in_ego.select(1, 0).reshape(shape);
  auto ty = target_in_ego.select(1, 1).reshape(shape);
  c = c.squeeze(-1);
  s = s.squeeze(-1);
  auto ex = uv.select(-1, 0) * (2.0 * range_m) - range_m - tx;
  auto ey = uv.select(-1, 1) * (2.0 * range_m) - range_m - ty;
  return torch::stack({c * ex + s * ey, -s * ex + c * ey}, -1);
}

}  // namespace bevtraj::geom
