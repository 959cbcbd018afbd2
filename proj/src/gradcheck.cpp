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

#include "bevtraj/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "bevtraj/bev_encoder.hpp"
#include "bevtraj/deform_attn.hpp"
#include "bevtraj/objectives.hpp"
#include "bevtraj/sampling.hpp"
#include "bevtraj/traj_decoder.hpp"

namespace bevtraj::gradcheck {

double max_rel_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                     double h) {
  auto x = x0.detach().clone().to(torch::kDouble).contiguous().set_requires_grad(true);
  auto g = torch::autograd::grad({f(x)}, {x}, {}, false, false, true)[0];
  if (!g.defined()) g = torch::zeros_like(x);
  g = g.contiguous();
  torch::NoGradGuard ng;
  auto flat = x.detach().clone();
  auto* p = flat.data_ptr<double>();
  const auto* ga = g.data_ptr<double>();
  double worst = 0.0;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f(flat).item<double>();
    p[i] = keep - h;
    const double dn = f(flat).item<double>();
    p[i] = keep;
    const double fd = (up - dn) / (2 * h);
    const double scale = std::max({1.0, std::abs(fd), std::abs(ga[i])});
    worst = std::max(worst, std::abs(fd - ga[i]) / scale);
  }
  return worst;
}

namespace {

using Check = std::function<double()>;

constexpr int64_t kH = 8, kW = 8;

attn::DeformAttn seeded_attn(int64_t dim, int64_t heads, int64_t points) {
  auto a = attn::DeformAttn(attn::DeformAttnOptions{dim, heads, points});
  torch::NoGradGuard g;
  for (auto& p : a->parameters()) p.uniform_(-0.5, 0.5);
  a->to(torch::kDouble);
  return a;
}

double bilinear() {
  auto grid = torch::randn({1, 3, kH, kW}, torch::kDouble);
  auto pts = torch::rand({1, 5, 2}, torch::kDouble) * 0.8 + 0.1;
  auto probe = torch::randn({1, 5, 3}, torch::kDouble);
  const double eg = max_rel_error([&](const torch::Tensor& x) { return (geom::bilinear_sample(x, pts) * probe).sum(); },
                                  grid);
  const double ep = max_rel_error([&](const torch::Tensor& x) { return (geom::bilinear_sample(grid, x) * probe).sum(); },
                                  pts);
  return std::max(eg, ep);
}

double core() {
  const int64_t heads = 2, dh = 3, m = 3, pts = 2;
  auto value = torch::randn({1, kH * kW, heads, dh}, torch::kDouble);
  auto loc = torch::rand({1, m, heads, pts, 2}, torch::kDouble) * 0.8 + 0.1;
  auto w = torch::softmax(torch::randn({1, m, heads, pts}, torch::kDouble), -1);
  auto probe = torch::randn({1, m, heads * dh}, torch::kDouble);
  auto f = [&](const torch::Tensor& v, const torch::Tensor& l, const torch::Tensor& ww) {
    return (attn::deform_attn_core(v, kH, kW, l, ww) * probe).sum();
  };
  return std::max({max_rel_error([&](const torch::Tensor& x) { return f(x, loc, w); }, value),
                   max_rel_error([&](const torch::Tensor& x) { return f(value, x, w); }, loc),
                   max_rel_error([&](const torch::Tensor& x) { return f(value, loc, x); }, w)});
}

double query_driven() {
  auto a = seeded_attn(8, 2, 2);
  auto bev = torch::randn({1, 8, kH, kW}, torch::kDouble);
  auto refs = torch::rand({1, 3, 2}, torch::kDouble) * 0.6 + 0.2;
  auto q = torch::randn({1, 3, 8}, torch::kDouble) * 0.1;
  auto probe = torch::randn({1, 3, 8}, torch::kDouble);
  return std::max({max_rel_error([&](const torch::Tensor& x) { return (a->forward(x, refs, bev) * probe).sum(); }, q),
                   max_rel_error([&](const torch::Tensor& x) { return (a->forward(q, refs, x) * probe).sum(); }, bev),
                   max_rel_error([&](const torch::Tensor& x) { return (a->forward(q, x, bev) * probe).sum(); }, refs)});
}

double key_driven() {
  attn::KeyDrivenSampler ks(4, 1, 2);
  ks->to(torch::kDouble);
  auto a = seeded_attn(4, 1, 2);
  auto bev = torch::randn({1, 4, kH, kW}, torch::kDouble);
  auto q = torch::randn({1, 2, 4}, torch::kDouble);
  // The top-K selection is piecewise constant and the gate is a
  // straight-through estimator with a constant forward value.
  return max_rel_error(
      [&](const torch::Tensor& b) {
        auto s = ks->forward(b, 2);
        return a->forward(q, s.refs, b, s.offsets).sum();
      },
      bev);
}

double gmm() {
  const int64_t k = 2, t = 3;
  auto y = torch::randn({1, t, 2}, torch::kDouble);
  auto mask = torch::ones({1, t}, torch::kBool);
  auto log_q = torch::log_softmax(torch::randn({1, k}, torch::kDouble), -1);
  auto raw = torch::randn({1, k, t, 5}, torch::kDouble) * 0.5;
  return max_rel_error(
      [&](const torch::Tensor& r) {
        auto g = torch::cat({r.narrow(-1, 0, 2), model::gmm_scale(r.narrow(-1, 2, 3))}, -1);
        return loss::gmm_nll(g, y, mask, log_q);
      },
      raw);
}

double encoder_probe() {
  model::BevEncoder enc(model::BevEncoderOptions{6, 4, 2, 1, 5});
  enc->to(torch::kDouble);
  auto x = torch::rand({1, 6, kH, kW}, torch::kDouble);
  auto probe = torch::randn({1, 4, kH, kW}, torch::kDouble);
  return max_rel_error([&](const torch::Tensor& r) { return (enc->forward(r) * probe).sum(); }, x);
}

const std::vector<std::pair<std::string, Check>>& registry() {
  static const std::vector<std::pair<std::string, Check>> r = {
      {"bilinear_sample", bilinear},     {"deform_attn_core", core},   {"deform_attn_query", query_driven},
      {"deform_attn_key", key_driven},   {"gmm_nll", gmm},             {"encoder_probe", encoder_probe},
  };
  return r;
}

}  // namespace

std::vector<std::string> registered() {
  std::vector<std::string> out;
  for (const auto& [name, _] : registry()) out.push_back(name);
  return out;
}

std::vector<CheckResult> run_all(uint64_t seed, double tolerance) {
  std::vector<CheckResult> out;
  uint64_t i = 0;
  for (const auto& [name, check] : registry()) {
    torch::manual_seed(seed * 1000003ULL + i++);
    const double e = check();
    out.push_back({name, e, std::isfinite(e) && e <= tolerance});
  }
  return out;
}

}  // namespace bevtraj::gradcheck
