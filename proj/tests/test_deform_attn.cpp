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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"

#include "bevtraj/deform_attn.hpp"
#include "bevtraj/error.hpp"
#include "bevtraj/sampling.hpp"
#include "test_util.hpp"

using namespace bevtraj;
using namespace bevtraj::attn;

namespace {

// Bilinear interpolation written out cell by cell: centres at (j + 0.5) / W,
// stencil clamped to the border inside the unit square, zero outside.
std::vector<double> bilinear_ref(const torch::Tensor& grid, int64_t b, double u, double v) {
  const auto C = grid.size(1), H = grid.size(2), W = grid.size(3);
  std::vector<double> out(static_cast<std::size_t>(C), 0.0);
  if (u < 0 || u > 1 || v < 0 || v > 1) return out;
  const double x = u * W - 0.5, y = v * H - 0.5;
  const double x0 = std::floor(x), y0 = std::floor(y);
  const double fx = x - x0, fy = y - y0;
  auto clampi = [](double a, int64_t n) { return std::clamp<int64_t>(static_cast<int64_t>(a), 0, n - 1); };
  const int64_t xs[2] = {clampi(x0, W), clampi(x0 + 1, W)};
  const int64_t ys[2] = {clampi(y0, H), clampi(y0 + 1, H)};
  const double wx[2] = {1 - fx, fx}, wy[2] = {1 - fy, fy};
  auto g = grid.to(torch::kDouble);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int64_t c = 0; c < C; ++c) out[c] += wy[i] * wx[j] * g[b][c][ys[i]][xs[j]].item<double>();
  return out;
}

DeformAttn make_attn(int64_t dim, int64_t heads, int64_t points, uint64_t seed) {
  torch::manual_seed(seed);
  auto a = DeformAttn(DeformAttnOptions{dim, heads, points});
  torch::NoGradGuard g;
  for (auto& p : a->parameters()) p.uniform_(-0.5, 0.5);
  return a;
}

}  // namespace

TEST_SUITE("deform_attn") {

TEST_CASE("single head and point with identity projections reduces to bilinear sampling") {
  torch::manual_seed(1);
  const int64_t D = 4;
  auto a = DeformAttn(DeformAttnOptions{D, 1, 1});
  {
    torch::NoGradGuard g;
    a->offset_head->weight.zero_();
    a->offset_head->bias.zero_();
    a->value_proj->weight.copy_(torch::eye(D));
    a->value_proj->bias.zero_();
    a->output_proj->weight.copy_(torch::eye(D));
    a->output_proj->bias.zero_();
  }
  auto bev = torch::randn({2, D, 6, 5});
  auto refs = torch::rand({2, 7, 2});
  auto q = torch::randn({2, 7, D});
  auto out = a->forward(q, refs, bev);
  auto expect = geom::bilinear_sample(bev, refs);
  CHECK(torch::allclose(out, expect, 1e-6, 1e-6));
}

TEST_CASE("attention weights sum to one per query and head") {
  auto a = make_attn(16, 4, 3, 2);
  auto out = a->forward(torch::randn({2, 5, 16}), torch::rand({2, 5, 2}), torch::randn({2, 16, 8, 8}));
  auto sums = a->last_weights().sum(-1);
  CHECK((sums - 1.0).abs().max().item<double>() < 1e-6);
  CHECK(a->last_weights().min().item<double>() >= 0.0);
}

TEST_CASE("deformable attention equals the materialized weighted-sum oracle") {
  for (uint64_t seed : {3u, 4u, 5u}) {
    const int64_t D = 8, heads = 2, points = 3, M = 3, H = 8, W = 8;
    auto a = make_attn(D, heads, points, seed);
    auto bev = torch::randn({1, D, H, W});
    auto refs = torch::rand({1, M, 2});
    auto q = torch::randn({1, M, D});
    auto out = a->forward(q, refs, bev);

    // Project every cell, sample each location by hand, weight and sum.
    auto values = a->project_values(bev).detach();  // [1, HW, heads, dh]
    auto vgrid = values.view({1, H, W, heads * (D / heads)}).permute({0, 3, 1, 2});
    auto loc = a->last_locations().detach();
    auto wts = a->last_weights().detach();
    const int64_t dh = D / heads;
    auto mixed = torch::zeros({M, D}, torch::kDouble);
    for (int64_t m = 0; m < M; ++m)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t p = 0; p < points; ++p) {
          auto s = bilinear_ref(vgrid, 0, loc[0][m][h][p][0].item<double>(), loc[0][m][h][p][1].item<double>());
          const double w = wts[0][m][h][p].item<double>();
          for (int64_t c = 0; c < dh; ++c) mixed[m][h * dh + c] += w * s[static_cast<std::size_t>(h * dh + c)];
        }
    auto expect = a->output_proj->forward(mixed.to(torch::kFloat).unsqueeze(0));
    CHECK((out - expect).abs().max().item<double>() < 1e-5);
  }
}

TEST_CASE("deform_attn_core gradients match finite differences") {
  torch::manual_seed(6);
  const int64_t H = 8, W = 8, heads = 2, dh = 3, M = 3, P = 2;
  auto value = torch::randn({1, H * W, heads, dh}, torch::kDouble);
  auto loc = torch::rand({1, M, heads, P, 2}, torch::kDouble) * 0.8 + 0.1;
  auto weights = torch::softmax(torch::randn({1, M, heads, P}, torch::kDouble), -1);
  auto probe = torch::randn({1, M, heads * dh}, torch::kDouble);
  CHECK(test::fd_rel_error([&](const torch::Tensor& v) { return (deform_attn_core(v, H, W, loc, weights) * probe).sum(); },
                           value) < 1e-3);
  CHECK(test::fd_rel_error([&](const torch::Tensor& l) { return (deform_attn_core(value, H, W, l, weights) * probe).sum(); },
                           loc) < 1e-3);
  CHECK(test::fd_rel_error([&](const torch::Tensor& w) { return (deform_attn_core(value, H, W, loc, w) * probe).sum(); },
                           weights) < 1e-3);
}

TEST_CASE("module gradients w.r.t. query, map and refs match finite differences") {
  auto a = make_attn(8, 2, 2, 7);
  a->to(torch::kDouble);
  auto bev = torch::randn({1, 8, 8, 8}, torch::kDouble);
  auto refs = torch::rand({1, 3, 2}, torch::kDouble) * 0.6 + 0.2;
  auto q = torch::randn({1, 3, 8}, torch::kDouble) * 0.1;
  auto probe = torch::randn({1, 3, 8}, torch::kDouble);
  CHECK(test::fd_rel_error([&](const torch::Tensor& x) { return (a->forward(x, refs, bev) * probe).sum(); }, q) < 1e-3);
  CHECK(test::fd_rel_error([&](const torch::Tensor& x) { return (a->forward(q, refs, x) * probe).sum(); }, bev) < 1e-3);
  CHECK(test::fd_rel_error([&](const torch::Tensor& x) { return (a->forward(q, x, bev) * probe).sum(); }, refs) < 1e-3);
}

TEST_CASE("corrupted backward is detected by the finite-difference check") {
  torch::manual_seed(8);
  auto value = torch::randn({1, 16, 1, 2}, torch::kDouble);
  auto loc = torch::rand({1, 2, 1, 2, 2}, torch::kDouble);
  auto weights = torch::full({1, 2, 1, 2}, 0.5, torch::kDouble);
  testing::set_corrupted_gradient("deform_attn_core");
  const double err =
      test::fd_rel_error([&](const torch::Tensor& v) { return deform_attn_core(v, 4, 4, loc, weights).sum(); }, value);
  testing::set_corrupted_gradient("");
  CHECK(err > 1e-3);
}

TEST_CASE("locality: cells beyond the clamped offset radius do not matter") {
  const int64_t D = 4, H = 16, W = 16;
  torch::manual_seed(9);
  auto a = DeformAttn(DeformAttnOptions{D, 2, 3, 2.0});
  {
    torch::NoGradGuard g;
    for (auto& p : a->parameters()) p.uniform_(-3.0, 3.0);
  }
  auto q = torch::randn({1, 1, D});
  auto refs = torch::tensor({{{8.5 / W, 8.5 / H}}});
  auto bev = torch::randn({1, D, H, W});
  auto out = a->forward(q, refs, bev);
  auto far = bev.clone();
  for (int64_t r = 0; r < H; ++r)
    for (int64_t c = 0; c < W; ++c)
      if (std::max(std::abs(r - 8), std::abs(c - 8)) > 3) far.index_put_({0, torch::indexing::Slice(), r, c}, 100.0);
  CHECK((a->forward(q, refs, far) - out).abs().max().item<double>() < 1e-7);
}

TEST_CASE("top-K cells: one-hot and uniform saliency") {
  std::vector<float> s(12, 0.0f);
  s[7] = 1.0f;
  CHECK((top_k_cells(s.data(), 12, 1) == std::vector<int64_t>{7}));
  std::vector<float> u(12, 0.3f);
  CHECK((top_k_cells(u.data(), 12, 4) == std::vector<int64_t>{0, 1, 2, 3}));

  KeyDrivenSampler ks(4, 1, 1);
  auto bev = torch::zeros({1, 4, 3, 4});
  auto sal = torch::zeros({1, 12});
  sal[0][6] = 5.0;  // row 1, col 2
  auto r = ks->sample_with_saliency(bev, sal, 1);
  CHECK(r.refs[0][0][0].item<double>() == doctest::Approx(2.5 / 4));
  CHECK(r.refs[0][0][1].item<double>() == doctest::Approx(1.5 / 3));
  auto uni = ks->sample_with_saliency(bev, torch::zeros({1, 12}), 4);
  CHECK((std::vector<int64_t>(uni.indices.data_ptr<int64_t>(), uni.indices.data_ptr<int64_t>() + 4) ==
         std::vector<int64_t>{0, 1, 2, 3}));
}

TEST_CASE("top-K selection equals an exhaustive sort on 100 seeded maps") {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> level(0, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = 64;
    const int64_t k = 1 + trial % 20;
    std::vector<double> s(n);
    for (auto& x : s) x = level(rng) * 0.25;  // coarse levels force ties
    std::vector<std::pair<double, int64_t>> all;
    for (int64_t i = 0; i < n; ++i) all.emplace_back(-s[i], i);
    std::sort(all.begin(), all.end());
    std::vector<int64_t> expect;
    for (int64_t i = 0; i < k; ++i) expect.push_back(all[i].second);
    CHECK((top_k_cells(s.data(), n, k) == expect));
  }
}

TEST_CASE("key-driven sampler: forward gate is one and saliency receives gradient") {
  torch::manual_seed(11);
  KeyDrivenSampler ks(8, 2, 2);
  auto bev = torch::randn({2, 8, 5, 5}, torch::requires_grad());
  auto r = ks->forward(bev, 3);
  CHECK(torch::equal(r.gate, torch::ones_like(r.gate)));
  CHECK(r.offsets.sizes() == torch::IntArrayRef({2, 3, 2, 2, 2}));
  (r.gate.sum() + r.offsets.sum()).backward();
  CHECK(ks->saliency_head->weight.grad().abs().sum().item<double>() > 0);
  CHECK(bev.grad().abs().sum().item<double>() > 0);
  CHECK_THROWS_AS(ks->forward(bev, 13), Error);
}

TEST_CASE("key-driven path gradients match finite differences") {
  torch::manual_seed(12);
  KeyDrivenSampler ks(4, 1, 2);
  auto a = make_attn(4, 1, 2, 13);
  ks->to(torch::kDouble);
  a->to(torch::kDouble);
  auto bev = torch::randn({1, 4, 8, 8}, torch::kDouble);
  auto q = torch::randn({1, 2, 4}, torch::kDouble);
  // Selection is piecewise constant and the gate is a straight-through
  // estimator, so only the sampled features and key-derived offsets are checked.
  auto f = [&](const torch::Tensor& b) {
    auto s = ks->forward(b, 2);
    return a->forward(q, s.refs, b, s.offsets).sum();
  };
  CHECK(test::fd_rel_error(f, bev, 1e-6) < 1e-3);
}

TEST_CASE("dense oracle: 1x1 grid, query permutation and the shared kernel") {
  auto a = make_attn(8, 2, 1, 14);
  auto one = torch::randn({1, 8, 1, 1});
  auto q = torch::randn({1, 4, 8});
  auto out = dense_attn_oracle(q, one, *a);
  auto cell = a->output_proj->forward(a->value_proj->forward(one.view({1, 1, 8})));
  CHECK((out - cell.expand({1, 4, 8})).abs().max().item<double>() < 1e-6);

  auto bev = torch::randn({1, 8, 4, 4});
  auto base = dense_attn_oracle(q, bev, *a);
  auto perm = torch::tensor({2, 0, 3, 1}, torch::kLong);
  auto permuted = dense_attn_oracle(q.index_select(1, perm), bev, *a);
  CHECK((permuted - base.index_select(1, perm)).abs().max().item<double>() < 1e-6);

  // Sample every cell centre with the dense softmax as weights.
  const int64_t H = 4, W = 4, heads = 2;
  auto values = a->project_values(bev);
  auto logits = dense_attention_logits(q, values);  // [1, 4, heads, 16]
  auto centres = torch::empty({H * W, 2});
  for (int64_t r = 0; r < H; ++r)
    for (int64_t c = 0; c < W; ++c) {
      centres[r * W + c][0] = (c + 0.5) / W;
      centres[r * W + c][1] = (r + 0.5) / H;
    }
  auto loc = centres.view({1, 1, 1, H * W, 2}).expand({1, 4, heads, H * W, 2}).contiguous();
  auto shared = a->output_proj->forward(deform_attn_core(values, H, W, loc, torch::softmax(logits, -1)));
  CHECK((shared - base).abs().max().item<double>() < 1e-6);

  CHECK_THROWS_AS(dense_attn_oracle(q, torch::zeros({1, 8, 65, 64}), *a), Error);
}

}  // TEST_SUITE
