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

#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"

#include "bevtraj/error.hpp"
#include "bevtraj/geom.hpp"
#include "bevtraj/sampling.hpp"
#include "test_util.hpp"

using namespace bevtraj;
using namespace bevtraj::geom;

namespace {
constexpr double kPi = std::numbers::pi;

// Explicit rotation-matrix oracle.
Vec2 rot_apply(double x, double y, double yaw, Vec2 p) {
  const double r00 = std::cos(yaw), r01 = -std::sin(yaw);
  const double r10 = std::sin(yaw), r11 = std::cos(yaw);
  return {r00 * p.x + r01 * p.y + x, r10 * p.x + r11 * p.y + y};
}

void check_pose_near(const Pose2& a, const Pose2& b, double tol) {
  CHECK(std::abs(a.x - b.x) < tol);
  CHECK(std::abs(a.y - b.y) < tol);
  CHECK(std::abs(normalize_angle(a.yaw - b.yaw)) < tol);
}
}  // namespace

TEST_SUITE("geom") {

TEST_CASE("se2_apply examples") {
  auto p = se2_apply(Pose2(0, 0, 0), Vec2{3, 4});
  CHECK(p.x == doctest::Approx(3));
  CHECK(p.y == doctest::Approx(4));

  for (auto [pose, pt] : {std::pair{Pose2(1, 2, kPi / 2), Vec2{1, 0}}, std::pair{Pose2(5, -5, kPi), Vec2{1, 1}}}) {
    const auto got = se2_apply(pose, pt);
    const auto want = rot_apply(pose.x, pose.y, pose.yaw, pt);
    CHECK(std::abs(got.x - want.x) < 1e-12);
    CHECK(std::abs(got.y - want.y) < 1e-12);
  }
  const auto a = se2_apply(Pose2(1, 2, kPi / 2), Vec2{1, 0});
  CHECK(a.x == doctest::Approx(1).epsilon(1e-12));
  CHECK(a.y == doctest::Approx(3).epsilon(1e-12));
  const auto b = se2_apply(Pose2(5, -5, kPi), Vec2{1, 1});
  CHECK(b.x == doctest::Approx(4));
  CHECK(b.y == doctest::Approx(-6));
}

TEST_CASE("se2_apply preserves length and rejects non-finite input") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-10, 10);
  for (int i = 0; i < 50; ++i) {
    const Pose2 pose(0, 0, d(rng));
    const Vec2 p{d(rng), d(rng)};
    const auto q = se2_apply(pose, p);
    CHECK(std::hypot(q.x, q.y) == doctest::Approx(std::hypot(p.x, p.y)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(se2_apply(Pose2(0, 0, 0), Vec2{NAN, 0}), Error);
  std::vector<Vec2> pts{{1, 2}, {INFINITY, 0}};
  CHECK_THROWS_AS(se2_apply(Pose2(0, 0, 0), std::span<const Vec2>(pts)), Error);
}

TEST_CASE("pose yaw normalisation") {
  CHECK(Pose2(0, 0, 3 * kPi).yaw == doctest::Approx(kPi));
  CHECK(Pose2(0, 0, -kPi).yaw == doctest::Approx(kPi));
  CHECK(Pose2(0, 0, 2 * kPi + 0.1).yaw == doctest::Approx(0.1));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-50, 50);
  for (int i = 0; i < 1000; ++i) {
    const double a = normalize_angle(d(rng));
    CHECK(a > -kPi);
    CHECK(a <= kPi);
  }
}

TEST_CASE("se2_invert examples and round trip") {
  check_pose_near(se2_invert(Pose2(0, 0, 0)), Pose2(0, 0, 0), 1e-12);
  const auto inv = se2_invert(Pose2(1, 0, kPi / 2));
  check_pose_near(inv, Pose2(0, 1, -kPi / 2), 1e-12);
  check_pose_near(se2_compose(Pose2(1, 0, kPi / 2), inv), Pose2(), 1e-12);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(-100, 100);
  const Pose2 pose(d(rng), d(rng), d(rng));
  check_pose_near(se2_compose(pose, se2_invert(pose)), Pose2(), 1e-9);
  check_pose_near(se2_compose(se2_invert(pose), pose), Pose2(), 1e-9);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec2 p{d(rng), d(rng)};
    const auto back = se2_apply(se2_invert(pose), se2_apply(pose, p));
    worst = std::max({worst, std::abs(back.x - p.x), std::abs(back.y - p.y)});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("se2 composition is associative with identity unit") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(-20, 20);
  for (int i = 0; i < 100; ++i) {
    const Pose2 a(d(rng), d(rng), d(rng)), b(d(rng), d(rng), d(rng)), c(d(rng), d(rng), d(rng));
    check_pose_near(se2_compose(se2_compose(a, b), c), se2_compose(a, se2_compose(b, c)), 1e-9);
    check_pose_near(se2_compose(Pose2(), a), a, 1e-12);
    check_pose_near(se2_compose(a, Pose2()), a, 1e-12);
    // compose applies b first
    const Vec2 p{d(rng), d(rng)};
    const auto lhs = se2_apply(se2_compose(a, b), p);
    const auto rhs = se2_apply(a, se2_apply(b, p));
    CHECK(std::abs(lhs.x - rhs.x) < 1e-9);
    CHECK(std::abs(lhs.y - rhs.y) < 1e-9);
  }
}

TEST_CASE("grid spec validation") {
  GridSpec s{50, 96, 96};
  CHECK_NOTHROW(s.validate());
  CHECK(s.cell_width_m() == doctest::Approx(100.0 / 96));
  CHECK_THROWS_AS((GridSpec{0, 4, 4}.validate()), Error);
  CHECK_THROWS_AS((GridSpec{50, 0, 4}.validate()), Error);
  CHECK_THROWS_AS((GridSpec{50, 4, -1}.validate()), Error);
}

TEST_CASE("ego_to_grid examples") {
  const GridSpec spec{50, 96, 96};
  auto c = ego_to_grid(spec, Vec2{0, 0});
  CHECK(c.u == doctest::Approx(0.5));
  CHECK(c.v == doctest::Approx(0.5));
  auto k = ego_to_grid(spec, Vec2{50, -50});
  CHECK(k.u == doctest::Approx(1.0));
  CHECK(k.v == doctest::Approx(0.0));
  CHECK(k.in_grid);
  auto q = ego_to_grid(spec, Vec2{25, 10});
  CHECK(q.u == doctest::Approx((25.0 + 50.0) / 100.0));
  CHECK(q.v == doctest::Approx((10.0 + 50.0) / 100.0));
  CHECK(q.u == doctest::Approx(0.75));
  CHECK(q.v == doctest::Approx(0.60));
  auto out = ego_to_grid(spec, Vec2{60, 0});
  CHECK_FALSE(out.in_grid);
  CHECK(out.u == doctest::Approx(1.1));  // flagged, not clamped
}

TEST_CASE("grid_to_ego inverts ego_to_grid") {
  const GridSpec spec{37.5, 40, 64};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(-37.5, 37.5);
  for (int i = 0; i < 200; ++i) {
    const Vec2 p{d(rng), d(rng)};
    const auto back = grid_to_ego(spec, ego_to_grid(spec, p));
    CHECK(std::abs(back.x - p.x) < 1e-9);
    CHECK(std::abs(back.y - p.y) < 1e-9);
  }
  const auto centre = ego_to_grid(spec, cell_center_ego(spec, 3, 7));
  CHECK(centre.u == doctest::Approx((7 + 0.5) / 64));
  CHECK(centre.v == doctest::Approx((3 + 0.5) / 40));
}

TEST_CASE("bilinear_sample at cell centres and midpoint") {
  auto grid = torch::tensor({1.0, 2.0, 3.0, 4.0}, torch::kDouble).view({1, 1, 2, 2});
  // rows follow v: row 0 = [1, 2], row 1 = [3, 4]
  auto pts = torch::tensor({0.25, 0.25, 0.75, 0.25, 0.25, 0.75, 0.75, 0.75, 0.5, 0.5}, torch::kDouble)
                 .view({1, 5, 2});
  auto out = bilinear_sample(grid, pts);
  CHECK(out.sizes() == torch::IntArrayRef({1, 5, 1}));
  CHECK(out[0][0][0].item<double>() == doctest::Approx(1.0));
  CHECK(out[0][1][0].item<double>() == doctest::Approx(2.0));
  CHECK(out[0][2][0].item<double>() == doctest::Approx(3.0));
  CHECK(out[0][3][0].item<double>() == doctest::Approx(4.0));
  // closed form: mean of four corners for the centroid
  CHECK(out[0][4][0].item<double>() == doctest::Approx((1.0 + 2.0 + 3.0 + 4.0) / 4.0));
}

TEST_CASE("bilinear_sample returns the cell vector at each centre") {
  torch::manual_seed(0);
  auto grid = torch::randn({2, 3, 5, 7}, torch::kDouble);
  std::vector<double> uv;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) {
      uv.push_back((j + 0.5) / 7);
      uv.push_back((i + 0.5) / 5);
    }
  auto pts = torch::tensor(uv, torch::kDouble).view({1, 35, 2}).expand({2, 35, 2}).contiguous();
  auto out = bilinear_sample(grid, pts);
  auto want = grid.flatten(2).transpose(1, 2);
  CHECK(torch::allclose(out, want, 0, 1e-12));
}

TEST_CASE("bilinear_sample outside the unit square is zero and one cell is constant") {
  auto grid = torch::ones({1, 2, 3, 3}, torch::kDouble);
  auto pts = torch::tensor({-0.1, 0.5, 0.5, 1.2, 1.01, 1.01}, torch::kDouble).view({1, 3, 2});
  CHECK(bilinear_sample(grid, pts).abs().max().item<double>() == 0.0);

  auto one = torch::full({1, 1, 1, 1}, 7.0, torch::kDouble);
  auto anywhere = torch::tensor({0.0, 0.0, 0.3, 0.9, 1.0, 1.0, 0.5, 0.5}, torch::kDouble).view({1, 4, 2});
  auto v = bilinear_sample(one, anywhere);
  CHECK(torch::allclose(v, torch::full_like(v, 7.0)));
}

TEST_CASE("bilinear_sample is exact on affine grids") {
  const int H = 6, W = 9;
  auto grid = torch::empty({1, 1, H, W}, torch::kDouble);
  auto f = [](double u, double v) { return 0.3 + 2.0 * u - 1.5 * v; };
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) grid[0][0][i][j] = f((j + 0.5) / W, (i + 0.5) / H);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> du(0.5 / W, 1 - 0.5 / W), dv(0.5 / H, 1 - 0.5 / H);
  std::vector<double> uv, want;
  for (int k = 0; k < 100; ++k) {
    const double u = du(rng), v = dv(rng);
    uv.push_back(u);
    uv.push_back(v);
    want.push_back(f(u, v));
  }
  auto out = bilinear_sample(grid, torch::tensor(uv, torch::kDouble).view({1, 100, 2}));
  for (int k = 0; k < 100; ++k) CHECK(std::abs(out[0][k][0].item<double>() - want[k]) < 1e-9);
}

TEST_CASE("bilinear_sample gradients match finite differences") {
  torch::manual_seed(4);
  auto grid = torch::randn({1, 3, 4, 5}, torch::kDouble);
  // keep points away from cell-centre lines where the kernel has kinks
  auto pts = (torch::rand({1, 6, 2}, torch::kDouble) * 0.7 + 0.15);
  auto probe = torch::randn({1, 6, 3}, torch::kDouble);
  auto wrt_points = [&](const torch::Tensor& p) { return (bilinear_sample(grid, p) * probe).sum(); };
  auto wrt_grid = [&](const torch::Tensor& g) { return (bilinear_sample(g, pts) * probe).sum(); };
  CHECK(test::fd_rel_error(wrt_points, pts, 1e-4) < 1e-3);
  CHECK(test::fd_rel_error(wrt_grid, grid, 1e-4) < 1e-3);
}

TEST_CASE("bilinear_sample float path agrees with double") {
  torch::manual_seed(1);
  auto grid = torch::randn({2, 4, 6, 6});
  auto pts = torch::rand({2, 10, 2});
  auto a = bilinear_sample(grid, pts);
  auto b = bilinear_sample(grid.to(torch::kDouble), pts.to(torch::kDouble));
  CHECK(torch::allclose(a.to(torch::kDouble), b, 1e-5, 1e-5));
}

TEST_CASE("sinusoidal_pe basics") {
  auto z = sinusoidal_pe(torch::zeros({1, 2}, torch::kDouble), 64);
  CHECK(z.size(-1) == 64);
  auto zv = z.view({-1});
  for (int i = 0; i < 64; i += 2) {
    CHECK(zv[i].item<double>() == 0.0);
    CHECK(zv[i + 1].item<double>() == 1.0);
  }
  CHECK(zv.norm().item<double>() == doctest::Approx(std::sqrt(32.0)));
  CHECK_THROWS_AS(sinusoidal_pe(torch::zeros({1, 1}), 63), Error);
  auto d1 = sinusoidal_pe(torch::tensor({{0.25, 0.5}}), 32);
  auto d2 = sinusoidal_pe(torch::tensor({{0.25, 0.5}}), 32);
  CHECK(torch::equal(d1, d2));
}

TEST_CASE("sinusoidal_pe is injective on a fine lattice") {
  const int n = 1001;
  auto lin = torch::linspace(0, 1, n, torch::kDouble);
  auto grid = torch::stack(torch::meshgrid({lin, lin}, "ij"), -1).view({-1, 2});
  // scale places the unit square on the high-frequency range of the code
  auto pe = sinusoidal_pe(grid, 64, 10000.0, 2 * std::numbers::pi).to(torch::kFloat);
  auto distinct = std::get<0>(torch::unique_dim(pe, 0));
  CHECK(distinct.size(0) == static_cast<int64_t>(n) * n);
}

TEST_CASE("resample_history linear and endpoint exact") {
  std::vector<TimedState> src{{0.0, 0.0, 0.0, 0.0, true}, {0.5, 1.0, 0.0, 0.0, true}};
  auto r = resample_history(src, 10.0);
  REQUIRE(r.states.size() == 6);
  CHECK_FALSE(r.degenerate);
  const double want[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  for (int i = 0; i < 6; ++i) {
    CHECK(r.states[i].x == doctest::Approx(want[i]).epsilon(1e-12));
    CHECK(r.states[i].valid);
  }
  CHECK(r.states.front().x == 0.0);
  CHECK(r.states.back().x == 1.0);
  CHECK(r.states.back().t == 0.5);
}

TEST_CASE("resample_history constant track") {
  std::vector<TimedState> src;
  for (int i = 0; i < 5; ++i) src.push_back({i * 0.5, 3.0, -2.0, 0.7, true});
  auto r = resample_history(src, 10.0);
  CHECK(r.states.size() == 21);
  for (const auto& s : r.states) {
    CHECK(s.x == 3.0);
    CHECK(s.y == -2.0);
    CHECK(s.yaw == doctest::Approx(0.7));
  }
}

TEST_CASE("resample_history yaw takes the short arc") {
  std::vector<TimedState> src{{0.0, 0, 0, 3.1, true}, {0.5, 0, 0, -3.1, true}};
  auto r = resample_history(src, 10.0);
  for (const auto& s : r.states) CHECK(std::abs(s.yaw) >= 3.1 - 1e-9);
  // midpoint sits at pi
  CHECK(std::abs(normalize_angle(r.states[2].yaw - 3.1 - 0.4 * (2 * kPi - 6.2))) < 1e-9);
}

TEST_CASE("resample_history does not bridge invalid spans") {
  std::vector<TimedState> src{{0.0, 0, 0, 0, true}, {0.5, 1, 0, 0, false}, {1.0, 2, 0, 0, true}};
  auto r = resample_history(src, 10.0);
  REQUIRE(r.states.size() == 11);
  CHECK(r.states[0].valid);
  for (int i = 1; i < 10; ++i) CHECK_FALSE(r.states[i].valid);
  CHECK(r.states[10].valid);
  CHECK(r.states[10].x == 2.0);
}

TEST_CASE("resample_history with one valid sample is degenerate") {
  std::vector<TimedState> src{{0.0, 0, 0, 0, true}, {0.5, 1, 0, 0, false}};
  auto r = resample_history(src, 10.0);
  CHECK(r.degenerate);
  int valid = 0;
  for (const auto& s : r.states) valid += s.valid;
  CHECK(valid <= 1);
}

}  // TEST_SUITE
