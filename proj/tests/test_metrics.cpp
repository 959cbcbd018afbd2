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
#include <vector>

#include "doctest.h"

#include "bevtraj/metrics.hpp"

using namespace bevtraj::metrics;

namespace {

struct Sample {
  std::vector<double> traj, probs, y;
  std::vector<uint8_t> mask;
  int k = 0, t = 0;
  ModeView view() const { return {traj, probs, k, t}; }
  TruthView truth() const { return {y, mask}; }
};

Sample random_sample(std::mt19937_64& rng, int k, int t) {
  std::normal_distribution<double> n(0.0, 3.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sample s;
  s.k = k;
  s.t = t;
  for (int i = 0; i < k * t * 2; ++i) s.traj.push_back(n(rng));
  for (int i = 0; i < t * 2; ++i) s.y.push_back(n(rng));
  double z = 0.0;
  for (int i = 0; i < k; ++i) z += s.probs.emplace_back(u(rng));
  for (auto& p : s.probs) p /= z;
  for (int i = 0; i < t; ++i) s.mask.push_back(u(rng) < 0.85);
  return s;
}

// Exhaustive reference: every subset ordering via full sort of indices.
double brute_ade(const Sample& s, int k) {
  std::vector<int> idx(s.k);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return s.probs[a] > s.probs[b] || (s.probs[a] == s.probs[b] && a < b);
  });
  double best = 1e300;
  for (int j = 0; j < std::min(k, s.k); ++j) {
    double sum = 0;
    int c = 0;
    for (int i = 0; i < s.t; ++i) {
      if (!s.mask[i]) continue;
      const double dx = s.traj[(idx[j] * s.t + i) * 2] - s.y[i * 2];
      const double dy = s.traj[(idx[j] * s.t + i) * 2 + 1] - s.y[i * 2 + 1];
      sum += std::hypot(dx, dy);
      ++c;
    }
    best = std::min(best, sum / c);
  }
  return best;
}

double brute_fde(const Sample& s, int k) {
  std::vector<int> idx(s.k);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s.probs[a] > s.probs[b]; });
  double best = 1e300;
  const int i = s.t - 1;
  for (int j = 0; j < std::min(k, s.k); ++j) {
    best = std::min(best, std::hypot(s.traj[(idx[j] * s.t + i) * 2] - s.y[i * 2],
                                     s.traj[(idx[j] * s.t + i) * 2 + 1] - s.y[i * 2 + 1]));
  }
  return best;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("hand-computed ADE and FDE") {
  // Two modes, three steps; truth on the x axis.
  Sample s;
  s.k = 2;
  s.t = 3;
  s.y = {0, 0, 1, 0, 2, 0};
  s.mask = {1, 1, 1};
  s.traj = {0, 1, 1, 1, 2, 1,     // offset by 1 everywhere
            0, 0, 1, 0, 2, 3};    // exact until the last step
  s.probs = {0.7, 0.3};
  CHECK(*min_ade(s.view(), s.truth(), 2) == doctest::Approx(1.0));
  CHECK(*min_fde(s.view(), s.truth(), 2) == doctest::Approx(1.0));
  CHECK(*min_ade(s.view(), s.truth(), 1) == doctest::Approx(1.0));
  s.probs = {0.3, 0.7};
  CHECK(*min_fde(s.view(), s.truth(), 1) == doctest::Approx(3.0));
  CHECK(*min_ade(s.view(), s.truth(), 1) == doctest::Approx(1.0));
}

TEST_CASE("top-k selection orders by probability with ties to the lower index") {
  std::vector<double> p = {0.1, 0.3, 0.3, 0.05, 0.25};
  CHECK((top_modes(p, 3) == std::vector<int>{1, 2, 4}));
  CHECK((top_modes(p, 1) == std::vector<int>{1}));
  CHECK((top_modes(p, 5) == std::vector<int>{1, 2, 4, 0, 3}));
  CHECK_THROWS(top_modes(p, 6));
}

TEST_CASE("minFDE1 uses the most probable mode") {
  std::mt19937_64 rng(11);
  for (int r = 0; r < 50; ++r) {
    auto s = random_sample(rng, 6, 5);
    s.mask.back() = 1;
    const int arg = static_cast<int>(std::max_element(s.probs.begin(), s.probs.end()) - s.probs.begin());
    const int i = s.t - 1;
    const double ref = std::hypot(s.traj[(arg * s.t + i) * 2] - s.y[i * 2],
                                  s.traj[(arg * s.t + i) * 2 + 1] - s.y[i * 2 + 1]);
    CHECK(*min_fde(s.view(), s.truth(), 1) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("miss rate uses a strict threshold") {
  std::vector<double> f = {1.9, 2.0, 2.1};
  CHECK(miss_rate(f) == doctest::Approx(1.0 / 3.0));
  CHECK(miss_rate(std::vector<double>{0.0}) == 0.0);
  CHECK_THROWS(miss_rate(std::vector<double>{}));
}

TEST_CASE("agrees with a brute-force reference") {
  std::mt19937_64 rng(12);
  for (int r = 0; r < 200; ++r) {
    auto s = random_sample(rng, 10, 8);
    s.mask[0] = 1;
    for (int k : {1, 5, 10}) {
      CHECK(std::abs(*min_ade(s.view(), s.truth(), k) - brute_ade(s, k)) < 1e-9);
      if (s.mask.back()) CHECK(std::abs(*min_fde(s.view(), s.truth(), k) - brute_fde(s, k)) < 1e-9);
    }
  }
}

TEST_CASE("invariant to a rigid transform of predictions and truth") {
  std::mt19937_64 rng(13);
  const double c = std::cos(0.8), s_ = std::sin(0.8);
  for (int r = 0; r < 30; ++r) {
    auto a = random_sample(rng, 10, 6);
    a.mask.back() = 1;
    auto b = a;
    auto tf = [&](std::vector<double>& v) {
      for (std::size_t i = 0; i < v.size(); i += 2) {
        const double x = v[i], y = v[i + 1];
        v[i] = c * x - s_ * y + 12.0;
        v[i + 1] = s_ * x + c * y - 7.0;
      }
    };
    tf(b.traj);
    tf(b.y);
    for (int k : {1, 5, 10}) {
      CHECK(std::abs(*min_ade(a.view(), a.truth(), k) - *min_ade(b.view(), b.truth(), k)) < 1e-9);
      CHECK(std::abs(*min_fde(a.view(), a.truth(), k) - *min_fde(b.view(), b.truth(), k)) < 1e-9);
    }
  }
}

TEST_CASE("samples without a valid final step are skipped") {
  std::mt19937_64 rng(14);
  auto s = random_sample(rng, 4, 5);
  s.mask = {1, 1, 1, 1, 0};
  CHECK(min_ade(s.view(), s.truth(), 4).has_value());
  CHECK(!min_fde(s.view(), s.truth(), 4).has_value());
  Accumulator acc;
  CHECK(!acc.add(s.view(), s.truth()));
  CHECK_THROWS(acc.result());
  s.mask = {0, 0, 0, 0, 0};
  CHECK(!min_ade(s.view(), s.truth(), 4).has_value());
  s.mask = {1, 0, 0, 0, 1};
  CHECK(acc.add(s.view(), s.truth()));
  auto r = acc.result();
  CHECK(r.n_samples == 1);
  CHECK(r.n_skipped == 1);
}

TEST_CASE("accumulator averages, clamps k to the mode count and merges") {
  std::mt19937_64 rng(15);
  std::vector<Sample> all;
  for (int i = 0; i < 40; ++i) {
    all.push_back(random_sample(rng, 4, 6));
    all.back().mask.back() = 1;
  }
  Accumulator whole, left, right;
  double ade10 = 0, ade5 = 0, fde10 = 0, fde1 = 0;
  int miss = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    whole.add(all[i].view(), all[i].truth());
    (i % 3 == 0 ? left : right).add(all[i].view(), all[i].truth());
    ade10 += brute_ade(all[i], 10);
    ade5 += brute_ade(all[i], 5);
    fde10 += brute_fde(all[i], 10);
    fde1 += brute_fde(all[i], 1);
    miss += brute_fde(all[i], 10) > 2.0;
  }
  left.merge(right);
  const double n = static_cast<double>(all.size());
  for (const auto& r : {whole.result(), left.result()}) {
    CHECK(r.n_samples == 40);
    CHECK(r.min_ade10 == doctest::Approx(ade10 / n).epsilon(1e-12));
    CHECK(r.min_ade5 == doctest::Approx(ade5 / n).epsilon(1e-12));
    CHECK(r.min_fde10 == doctest::Approx(fde10 / n).epsilon(1e-12));
    CHECK(r.min_fde1 == doctest::Approx(fde1 / n).epsilon(1e-12));
    CHECK(r.miss_rate == doctest::Approx(miss / n).epsilon(1e-12));
  }
}

}  // TEST_SUITE
