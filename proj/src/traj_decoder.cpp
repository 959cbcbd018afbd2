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

#include "bevtraj/traj_decoder.hpp"

#include "bevtraj/sampling.hpp"

namespace bevtraj::model {

namespace {

constexpr double kGoalScale = 10.0;
constexpr double kDeltaScale = 5.0;

torch::Tensor flat_state(const torch::Tensor& s) {
  auto f = state_features(s);
  return f.reshape({f.size(0), f.size(1) * f.size(2)});
}

torch::Tensor off_grid(const torch::Tensor& uv) {
  return (uv < 0.0).any(-1) | (uv > 1.0).any(-1);
}

torch::Tensor time_encoding(int64_t steps, int64_t dim) {
  return geom::sinusoidal_pe(torch::arange(steps, torch::kFloat).unsqueeze(-1), dim);
}

}  // namespace

torch::Tensor gmm_scale(const torch::Tensor& raw) {
  auto sigma = torch::softplus(raw.narrow(-1, 0, 2)) + 1e-3;
  auto rho = 0.99 * torch::tanh(raw.narrow(-1, 2, 1));
  return torch::cat({sigma, rho}, -1);
}

SgcpImpl::SgcpImpl(const DecoderOptions& o) : options_(o) {
  seeds = register_parameter("seeds", torch::randn({o.modes, o.dim}));
  ego_embed = register_module("ego_embed", nn::Mlp(o.history * kStateFeatures, o.dim, o.dim));
  target_embed = register_module("target_embed", nn::Mlp(o.history * kStateFeatures, o.dim, o.dim));
  for (int64_t b = 0; b < o.sgcp_blocks; ++b) {
    const auto s = std::to_string(b);
    fuse_ego.push_back(register_module("fuse_ego" + s, nn::Mlp(2 * o.dim, o.dim, o.dim)));
    sampler.push_back(register_module(
        "sampler" + s, attn::KeyDrivenSampler(o.dim, o.heads, o.points, o.key_temperature)));
    deform.push_back(register_module("deform" + s, attn::DeformAttn(attn::DeformAttnOptions{o.dim, o.heads, o.points})));
    deform_norm.push_back(register_module("deform_norm" + s, torch::nn::LayerNorm(torch::nn::LayerNormOptions({o.dim}))));
    fuse_target.push_back(register_module("fuse_target" + s, nn::Mlp(2 * o.dim, o.dim, o.dim)));
    mode_attn.push_back(register_module("mode_attn" + s, nn::AttentionBlock(o.dim, o.heads)));
    ffn.push_back(register_module("ffn" + s, nn::FeedForward(o.dim, 2 * o.dim)));
    goal_head.push_back(register_module("goal_head" + s, torch::nn::Linear(o.dim, 2)));
  }
  disp_head = register_module("disp_head", nn::Mlp(o.dim, o.dim, 1));
}

GoalSet SgcpImpl::forward(const DecoderInputs& in) {
  const auto n = in.bev.size(0);
  const auto k = options_.modes;
  auto e_ego = ego_embed->forward(flat_state(in.s_ego)).unsqueeze(1).expand({n, k, options_.dim});
  auto e_tgt = target_embed->forward(flat_state(in.s_target)).unsqueeze(1).expand({n, k, options_.dim});
  auto q = seeds.unsqueeze(0).expand({n, k, options_.dim});
  auto goals = torch::zeros({n, k, 2}, in.bev.options());
  for (std::size_t b = 0; b < deform.size(); ++b) {
    q = q + fuse_ego[b]->forward(torch::cat({q, e_ego}, -1));
    auto ks = sampler[b]->forward(in.bev, k);
    q = q + ks.gate.unsqueeze(-1) * deform[b]->forward(deform_norm[b]->forward(q), ks.refs, in.bev, ks.offsets);
    q = q + fuse_target[b]->forward(torch::cat({q, e_tgt}, -1));
    q = mode_attn[b]->forward(q);
    q = ffn[b]->forward(q);
    goals = goals + goal_head[b]->forward(q) * kGoalScale;
  }
  auto disp = torch::softplus(disp_head->forward(q).squeeze(-1));
  return {q, goals, disp};
}

ItpImpl::ItpImpl(const DecoderOptions& o) : options_(o) {
  pos_mlp = register_module("pos_mlp", nn::Mlp(o.dim, o.dim, o.dim));
  cross = register_module("cross", nn::AttentionBlock(o.dim, o.heads));
  deform = register_module("deform", attn::DeformAttn(attn::DeformAttnOptions{o.dim, o.heads, o.points}));
  deform_norm = register_module("deform_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({o.dim})));
  ffn = register_module("ffn", nn::FeedForward(o.dim, 2 * o.dim));
  expand = register_module("expand", nn::Mlp(o.dim, o.dim, o.horizon * o.dim));
  delta_head = register_module("delta_head", nn::Mlp(o.dim, o.dim, 2));
  scale_head = register_module("scale_head", nn::Mlp(o.dim, o.dim, 3));
  logit_head = register_module("logit_head", nn::Mlp(o.dim, o.dim, 1));
  time_pe_ = register_buffer("time_pe", time_encoding(o.horizon, o.dim));
}

StageOutput ItpImpl::forward(const GoalSet& gs, const ContextView& ctx, const DecoderInputs& in) {
  const auto n = gs.queries.size(0), k = gs.queries.size(1);
  const auto T = options_.horizon, d = options_.dim;
  auto goals = gs.goals.detach();
  auto pos = pos_mlp->forward(geom::sinusoidal_pe(goals, d));
  auto q = cross->forward(gs.queries, ctx.tokens, pos, ctx.pos, ctx.valid);
  auto refs = geom::target_to_grid(goals, in.target_in_ego, in.range_m);
  q = q + deform->forward(deform_norm->forward(q) + pos, refs, in.bev);
  q = ffn->forward(q);

  auto e = expand->forward(q).view({n, k, T, d}) + time_pe_;
  auto frac = torch::arange(1, T + 1, goals.options()).div(double(T)).view({1, 1, T, 1});
  auto mu = goals.unsqueeze(2) * frac + delta_head->forward(e) * kDeltaScale;
  StageOutput out;
  out.embedding = e;
  out.hyp.gmm = torch::cat({mu, gmm_scale(scale_head->forward(e))}, -1);
  out.hyp.logits = logit_head->forward(e.mean(2)).squeeze(-1);
  out.outside = off_grid(refs);
  return out;
}

ItrBlockImpl::ItrBlockImpl(const DecoderOptions& o) : options_(o) {
  pos_mlp = register_module("pos_mlp", nn::Mlp(o.dim, o.dim, o.dim));
  temporal = register_module("temporal", nn::AttentionBlock(o.dim, o.heads));
  mode = register_module("mode", nn::AttentionBlock(o.dim, o.heads));
  cross = register_module("cross", nn::AttentionBlock(o.dim, o.heads));
  deform = register_module("deform", attn::DeformAttn(attn::DeformAttnOptions{o.dim, o.heads, o.points}));
  deform_norm = register_module("deform_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({o.dim})));
  ffn = register_module("ffn", nn::FeedForward(o.dim, 2 * o.dim));
  delta_head = register_module("delta_head", nn::Mlp(o.dim, o.dim, 2));
  delta_head->zero_last();
  scale_head = register_module("scale_head", nn::Mlp(o.dim, o.dim, 3));
  logit_head = register_module("logit_head", nn::Mlp(o.dim, o.dim, 1));
  time_pe_ = register_buffer("time_pe", time_encoding(o.horizon, o.dim));
}

StageOutput ItrBlockImpl::forward(const torch::Tensor& embedding, const torch::Tensor& prev,
                                  const ContextView& ctx, const DecoderInputs& in) {
  const auto n = embedding.size(0), k = embedding.size(1);
  const auto T = options_.horizon, d = options_.dim;
  auto anchor = prev.detach();
  auto pos = pos_mlp->forward(geom::sinusoidal_pe(anchor, d));  // [N, K, T, D]

  auto x = temporal->forward(embedding.reshape({n * k, T, d}), {}, time_pe_, time_pe_);
  auto pos_t = pos.permute({0, 2, 1, 3}).reshape({n * T, k, d});
  x = x.view({n, k, T, d}).permute({0, 2, 1, 3}).reshape({n * T, k, d});
  x = mode->forward(x, {}, pos_t, pos_t);
  x = x.view({n, T, k, d}).permute({0, 2, 1, 3}).reshape({n, k * T, d});

  auto pos_flat = pos.reshape({n, k * T, d});
  x = cross->forward(x, ctx.tokens, pos_flat, ctx.pos, ctx.valid);
  auto refs = geom::target_to_grid(anchor.reshape({n, k * T, 2}), in.target_in_ego, in.range_m);
  x = x + deform->forward(deform_norm->forward(x) + pos_flat, refs, in.bev);
  x = ffn->forward(x);

  auto e = x.view({n, k, T, d});
  auto mu = anchor + delta_head->forward(e) * kDeltaScale;
  StageOutput out;
  out.embedding = e;
  out.hyp.gmm = torch::cat({mu, gmm_scale(scale_head->forward(e))}, -1);
  out.hyp.logits = logit_head->forward(e.mean(2)).squeeze(-1);
  out.outside = off_grid(refs).view({n, k, T});
  return out;
}

DecoderImpl::DecoderImpl(const DecoderOptions& o) : options_(o) {
  ctx_pos = register_module("ctx_pos", nn::Mlp(o.dim, o.dim, o.dim));
  sgcp = register_module("sgcp", Sgcp(o));
  itp = register_module("itp", Itp(o));
  for (int64_t b = 0; b < o.itr_blocks; ++b) {
    itr.push_back(register_module("itr" + std::to_string(b), ItrBlock(o)));
  }
}

DecoderOutput DecoderImpl::forward(const SceneContext& ctx, const DecoderInputs& in) {
  ContextView view{ctx.tokens, ctx_pos->forward(geom::sinusoidal_pe(ctx.anchors, options_.dim)), ctx.valid};
  DecoderOutput out;
  out.goals = sgcp->forward(in);
  auto stage = itp->forward(out.goals, view, in);
  out.layers.push_back(stage.hyp);
  out.outside.push_back(stage.outside);
  for (auto& block : itr) {
    stage = block->forward(stage.embedding, stage.hyp.means(), view, in);
    out.layers.push_back(stage.hyp);
    out.outside.push_back(stage.outside);
  }
  return out;
}

}  // namespace bevtraj::model
