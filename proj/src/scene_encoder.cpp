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

#include "bevtraj/scene_encoder.hpp"

#include "bevtraj/error.hpp"
#include "bevtraj/sampling.hpp"

namespace bevtraj::model {

namespace {
constexpr double kRefPeScale = 100.0;  // normalized coords -> roughly cell-scale phases
}

torch::Tensor state_features(const torch::Tensor& states) {
  auto valid = states.select(-1, 6).unsqueeze(-1);
  auto yaw = states.select(-1, 2);
  auto f = torch::stack({states.select(-1, 0) / 20.0, states.select(-1, 1) / 20.0, torch::cos(yaw),
                         torch::sin(yaw), states.select(-1, 3) / 10.0, states.select(-1, 4) / 10.0,
                         states.select(-1, 5), states.select(-1, 6)},
                        -1);
  return f * valid;
}

PreEncoderImpl::PreEncoderImpl(int64_t dim, int64_t heads, int64_t layers, int64_t steps) : dim_(dim) {
  input = register_module("input", torch::nn::Linear(kStateFeatures, dim));
  for (int64_t l = 0; l < layers; ++l) {
    const auto s = std::to_string(l);
    temporal.push_back(register_module("temporal" + s, nn::AttentionBlock(dim, heads)));
    temporal_ff.push_back(register_module("temporal_ff" + s, nn::FeedForward(dim, 2 * dim)));
    social.push_back(register_module("social" + s, nn::AttentionBlock(dim, heads)));
    social_ff.push_back(register_module("social_ff" + s, nn::FeedForward(dim, 2 * dim)));
  }
  out = register_module("out", nn::Mlp(dim, dim, dim));
  auto idx = torch::arange(steps, torch::kFloat).unsqueeze(-1);
  time_pe_ = register_buffer("time_pe", geom::sinusoidal_pe(idx, dim));
}

AgentFeatures PreEncoderImpl::forward(const torch::Tensor& hist, const torch::Tensor& mask) {
  const auto n = hist.size(0), na = hist.size(1), t = hist.size(2);
  TORCH_CHECK(t == time_pe_.size(0), "PreEncoder: history length ", t, " != ", time_pe_.size(0));
  auto keep = mask.unsqueeze(-1);
  auto x = (input->forward(state_features(hist)) + time_pe_).masked_fill(~keep, 0.0);
  for (std::size_t l = 0; l < temporal.size(); ++l) {
    auto xt = x.reshape({n * na, t, dim_});
    xt = temporal[l]->forward(xt, {}, {}, {}, mask.reshape({n * na, t}));
    xt = temporal_ff[l]->forward(xt);
    x = xt.view({n, na, t, dim_}).masked_fill(~keep, 0.0);

    auto xs = x.permute({0, 2, 1, 3}).reshape({n * t, na, dim_});
    auto ms = mask.permute({0, 2, 1}).reshape({n * t, na});
    xs = social[l]->forward(xs, {}, {}, {}, ms);
    xs = social_ff[l]->forward(xs);
    x = xs.view({n, t, na, dim_}).permute({0, 2, 1, 3}).masked_fill(~keep, 0.0);
  }
  auto h = out->forward(x).masked_fill(~keep, -std::numeric_limits<float>::infinity());
  auto pooled = std::get<0>(h.max(2));
  auto empty = ~mask.any(2);
  pooled = pooled.masked_fill(empty.unsqueeze(-1), 0.0);
  return {pooled, empty};
}

BdaImpl::BdaImpl(int64_t dim, int64_t heads, int64_t points, int64_t n_queries, int64_t layers) : dim_(dim) {
  queries = register_parameter("queries", torch::zeros({n_queries, dim}));
  refs = register_parameter("refs", torch::rand({n_queries, 2}) * 0.9 + 0.05);
  pos_mlp = register_module("pos_mlp", nn::Mlp(dim, dim, dim));
  for (int64_t l = 0; l < layers; ++l) {
    const auto s = std::to_string(l);
    self_attn.push_back(register_module("self" + s, nn::AttentionBlock(dim, heads)));
    cross.push_back(register_module("cross" + s, attn::DeformAttn(attn::DeformAttnOptions{dim, heads, points})));
    cross_norm.push_back(register_module("cross_norm" + s, torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim}))));
    ffn.push_back(register_module("ffn" + s, nn::FeedForward(dim, 2 * dim)));
    auto head = register_module("offset" + s, torch::nn::Linear(dim, 2));
    torch::NoGradGuard guard;
    head->weight.zero_();
    head->bias.zero_();
    offset_head.push_back(head);
  }
  out = register_module("out", nn::Mlp(dim, dim, dim));
}

BdaOutput BdaImpl::forward(const torch::Tensor& bev, const torch::Tensor& target_in_ego, double range_m) {
  const auto n = bev.size(0);
  const auto m = queries.size(0);
  auto q = queries.unsqueeze(0).expand({n, m, dim_});
  auto r = refs.clamp(0.0, 1.0).unsqueeze(0).expand({n, m, 2});
  auto normalizer = torch::tensor({double(bev.size(3)), double(bev.size(2))}, bev.options());
  BdaOutput o;
  for (std::size_t l = 0; l < cross.size(); ++l) {
    o.refs_per_layer.push_back(r);
    auto pos = pos_mlp->forward(geom::sinusoidal_pe(r, dim_, 10000.0, kRefPeScale));
    q = self_attn[l]->forward(q, {}, pos, pos);
    q = q + cross[l]->forward(cross_norm[l]->forward(q) + pos, r, bev);
    q = ffn[l]->forward(q);
    r = torch::clamp(r.detach() + offset_head[l]->forward(q + pos) / normalizer, 0.0, 1.0);
  }
  o.refs_per_layer.push_back(r);
  o.refs = r;
  o.features = out->forward(q);
  o.anchors = geom::grid_to_target(r, target_in_ego, range_m);
  return o;
}

torch::Tensor knn_mask(const torch::Tensor& anchors, const torch::Tensor& valid, int64_t k) {
  torch::NoGradGuard guard;
  const auto n = anchors.size(0), l = anchors.size(1);
  auto a = anchors.detach().to(torch::kDouble);
  auto d = torch::cdist(a, a);
  auto eye = torch::eye(l, torch::TensorOptions().dtype(torch::kBool)).unsqueeze(0).expand({n, l, l});
  d = d.masked_fill(~valid.unsqueeze(1), std::numeric_limits<double>::infinity());
  d = d.masked_fill(eye & valid.unsqueeze(1), -1.0);  // self first
  const auto kk = std::min(k, l);
  auto order = std::get<1>(d.sort(/*stable=*/true, /*dim=*/-1, /*descending=*/false));
  auto mask = torch::zeros({n, l, l}, torch::kBool);
  mask.scatter_(-1, order.narrow(-1, 0, kk), true);
  mask = mask & valid.unsqueeze(1);
  auto invalid_row = (~valid).unsqueeze(-1);
  return torch::where(invalid_row, eye, mask);
}

LocalSelfAttentionImpl::LocalSelfAttentionImpl(int64_t dim, int64_t heads, int64_t layers, int64_t k)
    : dim_(dim), k_(k) {
  pos_mlp = register_module("pos_mlp", nn::Mlp(dim, dim, dim));
  for (int64_t i = 0; i < layers; ++i) {
    blocks.push_back(register_module("block" + std::to_string(i), nn::AttentionBlock(dim, heads)));
    ffn.push_back(register_module("ffn" + std::to_string(i), nn::FeedForward(dim, 2 * dim)));
  }
}

torch::Tensor LocalSelfAttentionImpl::forward(const torch::Tensor& tokens, const torch::Tensor& anchors,
                                              const torch::Tensor& valid) {
  auto mask = knn_mask(anchors, valid, k_);
  auto pos = pos_mlp->forward(geom::sinusoidal_pe(anchors, dim_));
  auto keep = valid.unsqueeze(-1);
  auto x = tokens;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = blocks[i]->forward(x, {}, pos, pos, std::nullopt, mask);
    x = ffn[i]->forward(x).masked_fill(~keep, 0.0);
  }
  return x;
}

DenseFutureHeadImpl::DenseFutureHeadImpl(int64_t dim, int64_t horizon) : horizon_(horizon) {
  head = register_module("head", nn::Mlp(dim, dim, horizon * 2));
  reencode = register_module("reencode", nn::Mlp(horizon * 2, dim, dim));
  reencode->zero_last();
}

std::pair<torch::Tensor, torch::Tensor> DenseFutureHeadImpl::forward(const torch::Tensor& agent_tokens,
                                                                     const torch::Tensor& anchors) {
  const auto n = agent_tokens.size(0), na = agent_tokens.size(1);
  auto rel = head->forward(agent_tokens).view({n, na, horizon_, 2}) * 10.0;
  auto pred = anchors.unsqueeze(2) + rel;
  auto fused = agent_tokens + reencode->forward(rel.reshape({n, na, horizon_ * 2}) / 10.0);
  return {pred, fused};
}

SceneEncoderImpl::SceneEncoderImpl(const SceneEncoderOptions& o) : options_(o) {
  pre = register_module("pre", PreEncoder(o.dim, o.heads, o.pre_layers, o.history));
  bda = register_module("bda", Bda(o.dim, o.heads, o.points, o.n_bev_queries, o.bda_layers));
  local = register_module("local", LocalSelfAttention(o.dim, o.heads, o.local_layers, o.local_k));
  dense = register_module("dense", DenseFutureHead(o.dim, o.horizon));
  type_embed = register_parameter("type_embed", torch::randn({2, o.dim}) * 0.02);
}

SceneContext SceneEncoderImpl::forward(const torch::Tensor& bev, const torch::Tensor& hist,
                                       const torch::Tensor& hist_mask, const torch::Tensor& agent_mask,
                                       const torch::Tensor& anchors, const torch::Tensor& target_in_ego,
                                       double range_m) {
  auto agents = pre->forward(hist, hist_mask);
  auto agent_valid = agent_mask & ~agents.empty;
  auto a = (agents.features + type_embed[0]).masked_fill(~agent_valid.unsqueeze(-1), 0.0);

  SceneContext ctx;
  ctx.bda = bda->forward(bev, target_in_ego, range_m);
  auto m = ctx.bda.features + type_embed[1];
  const auto na = a.size(1);
  const auto nm = m.size(1);

  ctx.anchors = torch::cat({anchors, ctx.bda.anchors}, 1);
  ctx.valid = torch::cat({agent_valid, torch::ones({bev.size(0), nm}, torch::kBool)}, 1);
  auto tokens = local->forward(torch::cat({a, m}, 1), ctx.anchors, ctx.valid);

  auto [pred, fused] = dense->forward(tokens.narrow(1, 0, na), anchors);
  fused = fused.masked_fill(~agent_valid.unsqueeze(-1), 0.0);
  ctx.tokens = torch::cat({fused, tokens.narrow(1, na, nm)}, 1);
  ctx.dense = pred;
  ctx.n_agents = na;
  ctx.empty_agents = agents.empty;
  return ctx;
}

}  // namespace bevtraj::model
