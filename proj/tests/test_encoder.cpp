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
#include <filesystem>
#include <numeric>

#include "doctest.h"

#include "bevtraj/bev_encoder.hpp"
#include "bevtraj/error.hpp"
#include "bevtraj/layers.hpp"
#include "bevtraj/sampling.hpp"
#include "bevtraj/scene_encoder.hpp"
#include "bevtraj/train.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace bevtraj;
using namespace bevtraj::model;

namespace {

BevEncoderOptions small_bev(int64_t dim = 8) { return BevEncoderOptions{6, dim, 2, 1, 5}; }

// Random history batch with a per-step validity pattern.
std::pair<torch::Tensor, torch::Tensor> random_history(int64_t n, int64_t na, int64_t t, uint64_t seed) {
  torch::manual_seed(seed);
  auto hist = torch::randn({n, na, t, 7});
  auto mask = torch::rand({n, na, t}) > 0.3;
  mask.select(2, t - 1).fill_(true);
  hist.select(-1, 6).copy_(mask.to(torch::kFloat));
  return {hist, mask};
}

}  // namespace

TEST_SUITE("bev_encoder") {

TEST_CASE("shapes, zero parameters and input validation") {
  BevEncoder enc(small_bev());
  auto x = torch::rand({2, 6, 12, 10});
  auto b = enc->forward(x);
  CHECK(b.sizes() == torch::IntArrayRef({2, 8, 12, 10}));
  auto logits = enc->segment(b);
  CHECK(logits.sizes() == torch::IntArrayRef({2, 5, 12, 10}));
  CHECK((torch::softmax(logits, 1).sum(1) - 1.0).abs().max().item<double>() < 1e-6);
  {
    torch::NoGradGuard g;
    for (auto& p : enc->parameters()) p.zero_();
  }
  CHECK(enc->forward(x).abs().max().item<double>() == 0.0);
  CHECK_THROWS_AS(enc->check_input(x, geom::GridSpec{50.0, 12, 12}), Error);
  CHECK_NOTHROW(enc->check_input(x, geom::GridSpec{50.0, 12, 10}));
  CHECK_THROWS_AS(enc->forward(torch::rand({2, 5, 12, 10})), Error);

  BevEncoder strided(BevEncoderOptions{6, 8, 1, 2, 5});
  CHECK(strided->forward(torch::rand({1, 6, 12, 12})).sizes() == torch::IntArrayRef({1, 8, 6, 6}));
}

TEST_CASE("probe gradient w.r.t. input cells matches finite differences") {
  torch::manual_seed(1);
  BevEncoder enc(small_bev(4));
  enc->to(torch::kDouble);
  auto probe = torch::randn({1, 4, 6, 6}, torch::kDouble);
  auto x = torch::rand({1, 6, 6, 6}, torch::kDouble);
  CHECK(test::fd_rel_error([&](const torch::Tensor& r) { return (enc->forward(r) * probe).sum(); }, x) < 1e-3);
}

TEST_CASE("translation equivariance away from the border") {
  torch::manual_seed(2);
  BevEncoder enc(small_bev());
  auto x = torch::rand({1, 6, 24, 24});
  auto shifted = torch::roll(x, {1, 1}, {2, 3});
  auto a = enc->forward(x);
  auto b = enc->forward(shifted);
  const int64_t r = 6;  // receptive radius plus one
  using torch::indexing::Slice;
  auto ai = a.index({Slice(), Slice(), Slice(r, 24 - r - 1), Slice(r, 24 - r - 1)});
  auto bi = b.index({Slice(), Slice(), Slice(r + 1, 24 - r), Slice(r + 1, 24 - r)});
  CHECK((ai - bi).abs().max().item<double>() < 1e-5);
}

TEST_CASE("pretrain step behaviour") {
  torch::manual_seed(3);
  const auto& s = test::tiny_scenes()[0];
  auto x = torch::from_blob(const_cast<float*>(s.raster.data.data()), {1, 6, 24, 24}, torch::kFloat).clone();
  auto y = torch::from_blob(const_cast<uint8_t*>(s.seg_labels.data()), {1, 24, 24}, torch::kUInt8).to(torch::kLong);

  BevEncoder enc(small_bev());
  {
    torch::optim::AdamW zero(enc->parameters(), torch::optim::AdamWOptions(0.0));
    std::vector<torch::Tensor> before;
    for (auto& p : enc->parameters()) before.push_back(p.detach().clone());
    auto loss = segmentation_loss(enc->segment(enc->forward(x)), y);
    zero.zero_grad();
    loss.backward();
    zero.step();
    auto params = enc->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(torch::equal(params[i], before[i]));
  }
  torch::optim::AdamW opt(enc->parameters(), torch::optim::AdamWOptions(1e-3));
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    auto loss = segmentation_loss(enc->segment(enc->forward(x)), y);
    if (i == 0) first = loss.item<double>();
    last = loss.item<double>();
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  CHECK(last < first);

  auto perfect = torch::one_hot(y, 5).permute({0, 3, 1, 2}).to(torch::kFloat) * 20.0;
  CHECK(segmentation_loss(perfect, y).item<double>() <= 1e-3);
  CHECK(segmentation_accuracy(perfect, y) == 1.0);
}

TEST_CASE("pretraining on 64 noiseless scenes reaches 0.9 per-cell accuracy") {
  auto cfg = test::tiny_config();
  cfg.sim.noise_rate = 0.0;
  cfg.sim.occlusion = false;
  cfg.model.d_model = 16;
  cfg.train.pretrain_steps = 200;
  cfg.train.pretrain_batch = 8;
  auto data = data::generate_dataset(4, 64, cfg.sim);
  torch::manual_seed(4);
  BevEncoder enc(BevEncoderOptions{6, 16, 2, 1, 5});
  auto dir = std::filesystem::temp_directory_path() / "bevtraj_pretrain_test";
  auto r = train::pretrain(cfg, data, enc, dir.string(), true);
  CHECK(r.steps == 200);
  CHECK(r.accuracy > 0.9);
  CHECK(r.clean_accuracy > 0.9);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE

TEST_SUITE("scene_encoder") {

TEST_CASE("attention probabilities are normalised and masked keys get none") {
  torch::manual_seed(5);
  nn::MultiheadAttention mha(8, 2);
  auto x = torch::randn({2, 5, 8});
  auto km = torch::tensor({1, 1, 0, 1, 0}, torch::kBool).unsqueeze(0).expand({2, 5});
  mha->forward(x, x, x, km);
  auto w = mha->last_weights();
  CHECK((w.sum(-1) - 1.0).abs().max().item<double>() < 1e-6);
  CHECK(w.select(-1, 2).abs().max().item<double>() == 0.0);
}

TEST_CASE("state features are zero on invalid steps") {
  auto [hist, mask] = random_history(1, 3, 5, 6);
  auto f = state_features(hist);
  CHECK(f.size(-1) == kStateFeatures);
  CHECK(f.masked_select(~mask.unsqueeze(-1).expand_as(f)).abs().max().item<double>() == 0.0);
}

TEST_CASE("pre-encoder: single agent, appended invalid agent, permutation") {
  torch::manual_seed(7);
  PreEncoder pre(16, 2, 2, 5);
  auto [hist, mask] = random_history(2, 3, 5, 8);
  auto base = pre->forward(hist, mask);
  CHECK(base.features.sizes() == torch::IntArrayRef({2, 3, 16}));

  auto one = pre->forward(hist.narrow(1, 0, 1), mask.narrow(1, 0, 1));
  CHECK(one.features.size(1) == 1);
  CHECK((pre->social[1]->attn->last_weights() - 1.0).abs().max().item<double>() < 1e-6);

  auto extra_hist = torch::cat({hist, torch::randn({2, 1, 5, 7}) * 50.0}, 1);
  auto extra_mask = torch::cat({mask, torch::zeros({2, 1, 5}, torch::kBool)}, 1);
  auto ext = pre->forward(extra_hist, extra_mask);
  CHECK((ext.features.narrow(1, 0, 3) - base.features).abs().max().item<double>() < 1e-6);
  CHECK(ext.empty[0][3].item<bool>());
  CHECK(ext.features[0][3].abs().max().item<double>() == 0.0);

  auto perm = torch::tensor({2, 0, 1}, torch::kLong);
  auto p = pre->forward(hist.index_select(1, perm), mask.index_select(1, perm));
  CHECK((p.features - base.features.index_select(1, perm)).abs().max().item<double>() < 1e-5);
}

TEST_CASE("masked timesteps cannot influence the encoder") {
  auto cfg = test::tiny_config();
  auto batch = test::tiny_batch();
  torch::manual_seed(9);
  SceneEncoder enc(SceneEncoderOptions{16, 2, 2, 8, 2, 2, 2, 6, 21, 60});
  auto bev = torch::randn({4, 16, 24, 24});
  auto run = [&](const torch::Tensor& hist) {
    return enc->forward(bev, hist, batch.hist_mask, batch.agent_mask, batch.anchors, batch.target_in_ego,
                        batch.range_m);
  };
  auto a = run(batch.hist);
  auto garbage = batch.hist.clone();
  auto invalid = (~batch.hist_mask).unsqueeze(-1).expand_as(garbage);
  garbage.masked_scatter_(invalid, torch::randn({invalid.sum().item<int64_t>()}) * 100.0);
  garbage.select(-1, 6).copy_(batch.hist_mask.to(torch::kFloat));
  auto b = run(garbage);
  CHECK((a.tokens - b.tokens).abs().max().item<double>() < 1e-6);
  CHECK((a.dense - b.dense).abs().max().item<double>() < 1e-6);
  CHECK(a.tokens.size(1) == batch.hist.size(1) + 8);
  CHECK(a.dense.sizes() == torch::IntArrayRef({4, batch.hist.size(1), 60, 2}));
}

TEST_CASE("BDA: zero offset heads keep refs, refs stay in the unit square, centre anchor") {
  torch::manual_seed(10);
  Bda bda(16, 2, 2, 8, 3);
  auto bev = torch::randn({2, 16, 12, 12});
  auto tie = torch::zeros({2, 3});
  auto out = bda->forward(bev, tie, 50.0);
  REQUIRE(out.refs_per_layer.size() == 4);
  for (std::size_t l = 1; l < out.refs_per_layer.size(); ++l) {
    CHECK(torch::equal(out.refs_per_layer[l], out.refs_per_layer[0]));
  }
  {
    torch::NoGradGuard g;
    for (auto& h : bda->offset_head) {
      h->weight.normal_(0, 5.0);
      h->bias.normal_(0, 50.0);
    }
  }
  auto wild = bda->forward(bev, tie, 50.0);
  for (const auto& r : wild.refs_per_layer) {
    CHECK(r.min().item<double>() >= 0.0);
    CHECK(r.max().item<double>() <= 1.0);
  }
  CHECK(torch::isfinite(wild.anchors).all().item<bool>());

  auto centre = geom::grid_to_target(torch::full({1, 1, 2}, 0.5), torch::zeros({1, 3}), 50.0);
  CHECK(centre.abs().max().item<double>() < 1e-6);
}

TEST_CASE("BDA refs can be trained to converge on a single bright cell") {
  torch::manual_seed(11);
  const int64_t D = 16, H = 16, W = 16;
  Bda bda(D, 2, 2, 8, 3);
  auto bev = torch::zeros({1, D, H, W});
  bev.index_put_({0, torch::indexing::Slice(), 4, 11}, 3.0);
  auto target = torch::tensor({(11 + 0.5) / W, (4 + 0.5) / H});
  std::vector<torch::Tensor> params;
  for (auto& p : bda->named_parameters()) {
    if (p.key() != "refs") params.push_back(p.value());
  }
  torch::optim::Adam opt(params, torch::optim::AdamOptions(1e-2));
  auto dist = [&](const torch::Tensor& r) { return (r - target).norm(2, -1).mean(); };
  for (int it = 0; it < 100; ++it) {
    auto out = bda->forward(bev, torch::zeros({1, 3}), 50.0);
    auto loss = torch::zeros({});
    for (std::size_t l = 1; l < out.refs_per_layer.size(); ++l) loss = loss + dist(out.refs_per_layer[l]);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  auto out = bda->forward(bev, torch::zeros({1, 3}), 50.0);
  std::vector<double> d;
  for (const auto& r : out.refs_per_layer) d.push_back(dist(r).item<double>());
  INFO("distances " << d[0] << " " << d[1] << " " << d[2] << " " << d[3]);
  CHECK(d.back() < 0.25 * d.front());
  for (const auto& r : out.refs_per_layer) {
    CHECK(r.min().item<double>() >= 0.0);
    CHECK(r.max().item<double>() <= 1.0);
  }
}

TEST_CASE("k-nearest mask matches an exhaustive distance sort") {
  torch::manual_seed(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t L = 12, k = 1 + trial % 8;
    auto anchors = torch::randint(0, 5, {1, L, 2}).to(torch::kFloat);  // integer lattice forces ties
    auto valid = torch::rand({1, L}) > 0.25;
    valid[0][0] = true;
    auto mask = knn_mask(anchors, valid, k);
    for (int64_t i = 0; i < L; ++i) {
      std::vector<int64_t> expect;
      if (!valid[0][i].item<bool>()) {
        expect.push_back(i);
      } else {
        std::vector<std::pair<double, int64_t>> cand;
        for (int64_t j = 0; j < L; ++j) {
          if (!valid[0][j].item<bool>()) continue;
          const double dx = anchors[0][i][0].item<double>() - anchors[0][j][0].item<double>();
          const double dy = anchors[0][i][1].item<double>() - anchors[0][j][1].item<double>();
          cand.emplace_back(j == i ? -1.0 : std::hypot(dx, dy), j);
        }
        std::sort(cand.begin(), cand.end());
        for (std::size_t c = 0; c < cand.size() && c < static_cast<std::size_t>(k); ++c) expect.push_back(cand[c].second);
        std::sort(expect.begin(), expect.end());
      }
      std::vector<int64_t> got;
      for (int64_t j = 0; j < L; ++j)
        if (mask[0][i][j].item<bool>()) got.push_back(j);
      CHECK((got == expect));
    }
    auto moved = knn_mask(anchors + torch::tensor({3.0f, -7.0f}), valid, k);
    CHECK(torch::equal(moved, mask));
  }
}

TEST_CASE("local attention with k at least the token count is full self-attention") {
  torch::manual_seed(13);
  LocalSelfAttention local(16, 2, 2, 64);
  auto x = torch::randn({2, 9, 16});
  auto anchors = torch::randn({2, 9, 2}) * 10;
  auto valid = torch::ones({2, 9}, torch::kBool);
  auto out = local->forward(x, anchors, valid);
  auto pos = local->pos_mlp->forward(geom::sinusoidal_pe(anchors, 16));
  auto y = x;
  for (std::size_t i = 0; i < local->blocks.size(); ++i) {
    y = local->blocks[i]->forward(y, {}, pos, pos);
    y = local->ffn[i]->forward(y);
  }
  CHECK((out - y).abs().max().item<double>() < 1e-6);
}

TEST_CASE("dense head shapes and zero re-encoder") {
  torch::manual_seed(14);
  DenseFutureHead head(16, 60);
  auto tokens = torch::randn({2, 3, 16});
  auto anchors = torch::randn({2, 3, 2});
  auto [pred, fused] = head->forward(tokens, anchors);
  CHECK(pred.sizes() == torch::IntArrayRef({2, 3, 60, 2}));
  CHECK(torch::equal(fused, tokens));
}

}  // TEST_SUITE
