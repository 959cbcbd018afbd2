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

#include "bevtraj/deform_attn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "bevtraj/error.hpp"
#include "bevtraj/sampling.hpp"
#include "bilinear_stencil.hpp"

namespace bevtraj::attn {
namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

struct CoreShape {
  int64_t batch, cells, heads, head_dim, queries, points, height, width;
};

template <typename T>
void core_forward(const CoreShape& s, const T* value, const T* loc, const T* weights, T* out) {
  for (int64_t n = 0; n < s.batch; ++n) {
    const T* v_n = value + n * s.cells * s.heads * s.head_dim;
    for (int64_t m = 0; m < s.queries; ++m) {
      for (int64_t h = 0; h < s.heads; ++h) {
        T* o = out + ((n * s.queries + m) * s.heads + h) * s.head_dim;
        for (int64_t p = 0; p < s.points; ++p) {
          const int64_t lp = ((n * s.queries + m) * s.heads + h) * s.points + p;
          const T a = weights[lp];
          const auto st = detail::make_stencil<T>(loc[2 * lp], loc[2 * lp + 1], s.height, s.width);
          if (!st.valid) continue;
          for (int k = 0; k < 4; ++k) {
            const T w = a * st.weight[k];
            if (w == T(0)) continue;
            const T* cell = v_n + (st.index[k] * s.heads + h) * s.head_dim;
            for (int64_t c = 0; c < s.head_dim; ++c) o[c] += w * cell[c];
          }
        }
      }
    }
  }
}

template <typename T>
void core_backward(const CoreShape& s, const T* value, const T* loc, const T* weights,
                   const T* grad_out, T* grad_value, T* grad_loc, T* grad_weights, T scale) {
  for (int64_t n = 0; n < s.batch; ++n) {
    const T* v_n = value + n * s.cells * s.heads * s.head_dim;
    T* gv_n = grad_value + n * s.cells * s.heads * s.head_dim;
    for (int64_t m = 0; m < s.queries; ++m) {
      for (int64_t h = 0; h < s.heads; ++h) {
        const T* go = grad_out + ((n * s.queries + m) * s.heads + h) * s.head_dim;
        for (int64_t p = 0; p < s.points; ++p) {
          const int64_t lp = ((n * s.queries + m) * s.heads + h) * s.points + p;
          const T a = weights[lp];
          const auto st = detail::make_stencil<T>(loc[2 * lp], loc[2 * lp + 1], s.height, s.width);
          if (!st.valid) continue;
          T g_weight = 0, g_u = 0, g_v = 0;
          for (int k = 0; k < 4; ++k) {
            const T* cell = v_n + (st.index[k] * s.heads + h) * s.head_dim;
            T* gcell = gv_n + (st.index[k] * s.heads + h) * s.head_dim;
            T dot = 0;
            const T w = a * st.weight[k];
            for (int64_t c = 0; c < s.head_dim; ++c) {
              dot += go[c] * cell[c];
              gcell[c] += scale * w * go[c];
            }
            g_weight += st.weight[k] * dot;
            g_u += st.du[k] * dot;
            g_v += st.dv[k] * dot;
          }
          grad_weights[lp] += scale * g_weight;
          grad_loc[2 * lp] += scale * a * g_u;
          grad_loc[2 * lp + 1] += scale * a * g_v;
        }
      }
    }
  }
}

struct DeformAttnCoreFn : public torch::autograd::Function<DeformAttnCoreFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& value, int64_t height,
                               int64_t width, const torch::Tensor& loc,
                               const torch::Tensor& weights) {
    auto v = value.contiguous();
    auto l = loc.contiguous();
    auto w = weights.contiguous();
    const CoreShape s{v.size(0), v.size(1), v.size(2), v.size(3),
                      l.size(1), l.size(3), height,    width};
    auto out = torch::zeros({s.batch, s.queries, s.heads, s.head_dim}, v.options());
    AT_DISPATCH_FLOATING_TYPES(v.scalar_type(), "deform_attn_core_forward", [&] {
      core_forward<scalar_t>(s, v.data_ptr<scalar_t>(), l.data_ptr<scalar_t>(),
                             w.data_ptr<scalar_t>(), out.data_ptr<scalar_t>());
    });
    ctx->save_for_backward({v, l, w});
    ctx->saved_data["height"] = height;
    ctx->saved_data["width"] = width;
    return out.view({s.batch, s.queries, s.heads * s.head_dim});
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    auto saved = ctx->get_saved_variables();
    const auto& v = saved[0];
    const auto& l = saved[1];
    const auto& w = saved[2];
    const int64_t height = ctx->saved_data["height"].toInt();
    const int64_t width = ctx->saved_data["width"].toInt();
    const CoreShape s{v.size(0), v.size(1), v.size(2), v.size(3),
                      l.size(1), l.size(3), height,    width};
    auto go = grad_outputs[0].contiguous();
    auto grad_value = torch::zeros_like(v);
    auto grad_loc = torch::zeros_like(l);
    auto grad_weights = torch::zeros_like(w);
    const bool corrupt = testing::corrupted_gradient() == "deform_attn_core";
    AT_DISPATCH_FLOATING_TYPES(v.scalar_type(), "deform_attn_core_backward", [&] {
      core_backward<scalar_t>(s, v.data_ptr<scalar_t>(), l.data_ptr<scalar_t>(),
                              w.data_ptr<scalar_t>(), go.data_ptr<scalar_t>(),
                              grad_value.data_ptr<scalar_t>(), grad_loc.data_ptr<scalar_t>(),
                              grad_weights.data_ptr<scalar_t>(),
                              corrupt ? scalar_t(1.01) : scalar_t(1));
    });
    return {grad_value, torch::Tensor(), torch::Tensor(), grad_loc, grad_weights};
  }
};

template <typename T>
std::vector<int64_t> top_k_impl(const T* saliency, int64_t n, int64_t k) {
  TORCH_CHECK(k >= 0 && k <= n, "top_k_cells: k out of range");
  std::vector<int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), int64_t{0});
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int64_t a, int64_t b) {
    if (saliency[a] != saliency[b]) return saliency[a] > saliency[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace

torch::Tensor deform_attn_core(const torch::Tensor& value, int64_t height, int64_t width,
                               const torch::Tensor& loc, const torch::Tensor& weights) {
  TORCH_CHECK(value.dim() == 4, "deform_attn_core: value must be [N, H*W, heads, head_dim]");
  TORCH_CHECK(value.size(1) == height * width, "deform_attn_core: value cells != H*W");
  TORCH_CHECK(loc.dim() == 5 && loc.size(4) == 2, "deform_attn_core: loc must be [N, M, heads, points, 2]");
  TORCH_CHECK(loc.size(0) == value.size(0) && loc.size(2) == value.size(2),
              "deform_attn_core: loc batch/head mismatch");
  TORCH_CHECK(weights.sizes() == loc.sizes().slice(0, 4), "deform_attn_core: weight shape mismatch");
  return DeformAttnCoreFn::apply(value, height, width, loc, weights);
}

DeformAttnImpl::DeformAttnImpl(const DeformAttnOptions& options) : options_(options) {
  const auto d = options.dim;
  TORCH_CHECK(d % options.n_heads == 0, "DeformAttn: dim must be divisible by n_heads");
  value_proj = register_module("value_proj", torch::nn::Linear(d, d));
  offset_head = register_module(
      "offset_head", torch::nn::Linear(d, options.n_heads * options.n_points * 2));
  weight_head =
      register_module("weight_head", torch::nn::Linear(d, options.n_heads * options.n_points));
  output_proj = register_module("output_proj", torch::nn::Linear(d, d));

  // Offsets start on rays around the reference point, one direction per head
  // and growing radius per point; weights start uniform.
  torch::NoGradGuard guard;
  offset_head->weight.zero_();
  auto bias = offset_head->bias.view({options.n_heads, options.n_points, 2});
  for (int64_t h = 0; h < options.n_heads; ++h) {
    const double theta = 2.0 * std::numbers::pi * double(h) / double(options.n_heads);
    double dx = std::cos(theta);
    double dy = std::sin(theta);
    const double norm = std::max(std::abs(dx), std::abs(dy));
    dx /= norm;
    dy /= norm;
    for (int64_t p = 0; p < options.n_points; ++p) {
      bias[h][p][0] = dx * double(p + 1);
      bias[h][p][1] = dy * double(p + 1);
    }
  }
  weight_head->weight.zero_();
  weight_head->bias.zero_();
}

torch::Tensor DeformAttnImpl::project_values(const torch::Tensor& bev) {
  const auto n = bev.size(0);
  const auto h = bev.size(2);
  const auto w = bev.size(3);
  auto cells = bev.permute({0, 2, 3, 1}).reshape({n, h * w, options_.dim});
  return value_proj->forward(cells).view(
      {n, h * w, options_.n_heads, options_.dim / options_.n_heads});
}

torch::Tensor DeformAttnImpl::predict_offsets(const torch::Tensor& query) {
  auto off = offset_head->forward(query).view(
      {query.size(0), query.size(1), options_.n_heads, options_.n_points, 2});
  if (options_.max_offset_cells > 0.0) {
    off = torch::clamp(off, -options_.max_offset_cells, options_.max_offset_cells);
  }
  return off;
}

torch::Tensor DeformAttnImpl::forward(const torch::Tensor& query, const torch::Tensor& refs,
                                      const torch::Tensor& bev, const torch::Tensor& offsets) {
  TORCH_CHECK(query.dim() == 3 && query.size(2) == options_.dim,
              "DeformAttn: query must be [N, M, dim]");
  TORCH_CHECK(refs.dim() == 3 && refs.size(0) == query.size(0) && refs.size(1) == query.size(1) &&
                  refs.size(2) == 2,
              "DeformAttn: refs must be [N, M, 2] matching the queries");
  TORCH_CHECK(bev.dim() == 4 && bev.size(0) == query.size(0) && bev.size(1) == options_.dim,
              "DeformAttn: bev must be [N, dim, H, W]");
  const auto n = query.size(0);
  const auto m = query.size(1);
  const auto height = bev.size(2);
  const auto width = bev.size(3);

  auto off = offsets.defined() ? offsets : predict_offsets(query);
  TORCH_CHECK(off.sizes() == torch::IntArrayRef({n, m, options_.n_heads, options_.n_points, 2}),
              "DeformAttn: offset shape mismatch");
  auto normalizer = torch::tensor({double(width), double(height)}, query.options());
  auto loc = refs.view({n, m, 1, 1, 2}) + off / normalizer;

  auto logits = weight_head->forward(query).view({n, m, options_.n_heads, options_.n_points});
  auto weights = torch::softmax(logits, -1);

  last_loc_ = loc;
  last_weights_ = weights;
  auto sampled = deform_attn_core(project_values(bev), height, width, loc, weights);
  return output_proj->forward(sampled);
}

std::vector<int64_t> top_k_cells(const float* saliency, int64_t n, int64_t k) {
  return top_k_impl(saliency, n, k);
}

std::vector<int64_t> top_k_cells(const double* saliency, int64_t n, int64_t k) {
  return top_k_impl(saliency, n, k);
}

KeyDrivenSamplerImpl::KeyDrivenSamplerImpl(int64_t dim, int64_t n_heads, int64_t n_points,
                                           double temperature)
    : n_heads_(n_heads), n_points_(n_points), temperature_(temperature) {
  saliency_head = register_module("saliency_head", torch::nn::Linear(dim, 1));
  offset_head = register_module("offset_head", torch::nn::Linear(dim, n_heads * n_points * 2));
  torch::NoGradGuard guard;
  offset_head->weight.mul_(0.1);
  offset_head->bias.zero_();
}

KeySamples KeyDrivenSamplerImpl::forward(const torch::Tensor& bev, int64_t k) {
  const auto n = bev.size(0);
  const auto cells = bev.size(2) * bev.size(3);
  auto flat = bev.permute({0, 2, 3, 1}).reshape({n, cells, bev.size(1)});
  auto saliency = saliency_head->forward(flat).squeeze(-1);
  return sample_with_saliency(bev, saliency, k);
}

KeySamples KeyDrivenSamplerImpl::sample_with_saliency(const torch::Tensor& bev,
                                                      const torch::Tensor& saliency, int64_t k) {
  const auto n = bev.size(0);
  const auto dim = bev.size(1);
  const auto height = bev.size(2);
  const auto width = bev.size(3);
  const auto cells = height * width;
  if (k * n_points_ > cells) {
    throw Error(ErrorCode::kInvalidArgument, "key_driven_sampling: K * n_points exceeds H * W");
  }

  auto sal = saliency.detach().contiguous().to(torch::kDouble);
  auto indices = torch::empty({n, k}, torch::kLong);
  for (int64_t b = 0; b < n; ++b) {
    const auto top = top_k_cells(sal[b].data_ptr<double>(), cells, k);
    for (int64_t i = 0; i < k; ++i) indices[b][i] = top[static_cast<std::size_t>(i)];
  }

  auto rows = indices.div(width, "floor");
  auto cols = indices.remainder(width);
  auto opts = bev.options();
  auto refs = torch::stack({(cols.to(opts.dtype()) + 0.5) / double(width),
                            (rows.to(opts.dtype()) + 0.5) / double(height)},
                           -1);

  auto flat = bev.permute({0, 2, 3, 1}).reshape({n, cells, dim});
  auto picked = flat.gather(1, indices.unsqueeze(-1).expand({n, k, dim}));
  auto offsets = offset_head->forward(picked).view({n, k, n_heads_, n_points_, 2});

  // Straight-through gate: g - g.detach() is exactly zero in the forward pass.
  auto soft = torch::softmax(saliency / temperature_, -1);
  auto g = soft.gather(1, indices);
  auto gate = 1.0 + (g - g.detach());

  return KeySamples{refs, offsets, gate, indices, saliency};
}

torch::Tensor dense_attention_logits(const torch::Tensor& query, const torch::Tensor& values) {
  // query: [N, M, D] -> [N, M, heads, dh]; values: [N, S, heads, dh]
  const auto heads = values.size(2);
  const auto dh = values.size(3);
  auto q = query.view({query.size(0), query.size(1), heads, dh});
  return torch::einsum("nmhd,nshd->nmhs", {q, values}) / std::sqrt(double(dh));
}

torch::Tensor dense_attn_oracle(const torch::Tensor& query, const torch::Tensor& bev,
                                DeformAttnImpl& params) {
  const auto cells = bev.size(2) * bev.size(3);
  if (cells > 4096) {
    throw Error(ErrorCode::kInvalidArgument, "dense_attn_oracle: H*W > 4096");
  }
  auto values = params.project_values(bev);
  auto weights = torch::softmax(dense_attention_logits(query, values), -1);
  auto out = torch::einsum("nmhs,nshd->nmhd", {weights, values});
  return params.output_proj->forward(out.reshape({query.size(0), query.size(1), -1}));
}

}  // namespace bevtraj::attn
