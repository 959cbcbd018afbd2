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

#include "bevtraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bevtraj/error.hpp"

namespace bevtraj::metrics {

namespace {

double step_error(const ModeView& p, const TruthView& g, int mode, int step) {
  const auto* m = p.traj.data() + (static_cast<std::size_t>(mode) * p.t + step) * 2;
  const auto* y = g.y.data() + static_cast<std::size_t>(step) * 2;
  return std::hypot(m[0] - y[0], m[1] - y[1]);
}

void check(const ModeView& p, const TruthView& g) {
  if (p.k <= 0 || p.t <= 0 || p.traj.size() != static_cast<std::size_t>(p.k) * p.t * 2 ||
      p.probs.size() != static_cast<std::size_t>(p.k) || g.y.size() != static_cast<std::size_t>(p.t) * 2 ||
      g.mask.size() != static_cast<std::size_t>(p.t)) {
    throw Error(ErrorCode::kInvalidArgument, "metrics: inconsistent prediction / ground-truth sizes");
  }
}

}  // namespace

std::vector<int> top_modes(std::span<const double> probs, int k) {
  if (k <= 0 || k > static_cast<int>(probs.size())) {
    throw Error(ErrorCode::kInvalidArgument, "metrics: k must be in [1, K]");
  }
  std::vector<int> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::optional<double> min_ade(const ModeView& pred, const TruthView& gt, int k) {
  check(pred, gt);
  const int valid = static_cast<int>(std::count(gt.mask.begin(), gt.mask.end(), uint8_t{1}));
  if (valid == 0) return std::nullopt;
  double best = INFINITY;
  for (int m : top_modes(pred.probs, k)) {
    double sum = 0;
    for (int s = 0; s < pred.t; ++s) {
      if (gt.mask[s]) sum += step_error(pred, gt, m, s);
    }
    best = std::min(best, sum / valid);
  }
  return best;
}

std::optional<double> min_fde(const ModeView& pred, const TruthView& gt, int k) {
  check(pred, gt);
  if (!gt.mask[pred.t - 1]) return std::nullopt;
  double best = INFINITY;
  for (int m : top_modes(pred.probs, k)) best = std::min(best, step_error(pred, gt, m, pred.t - 1));
  return best;
}

double miss_rate(std::span<const double> fdes, double threshold) {
  if (fdes.empty()) throw Error(ErrorCode::kInvalidArgument, "miss_rate: empty batch");
  const auto misses = std::count_if(fdes.begin(), fdes.end(), [&](double f) { return f > threshold; });
  return static_cast<double>(misses) / static_cast<double>(fdes.size());
}

bool Accumulator::add(const ModeView& pred, const TruthView& gt) {
  const int k5 = std::min(5, pred.k), k10 = std::min(10, pred.k);
  auto a5 = min_ade(pred, gt, k5);
  auto f1 = min_fde(pred, gt, 1);
  if (!a5 || !f1) {
    ++skipped_;
    return false;
  }
  const double f10 = *min_fde(pred, gt, k10);
  ade5_ += *a5;
  ade10_ += *min_ade(pred, gt, k10);
  fde1_ += *f1;
  fde10_ += f10;
  misses_ += f10 > threshold_ ? 1 : 0;
  ++n_;
  return true;
}

void Accumulator::merge(const Accumulator& o) {
  ade5_ += o.ade5_;
  ade10_ += o.ade10_;
  fde1_ += o.fde1_;
  fde10_ += o.fde10_;
  misses_ += o.misses_;
  n_ += o.n_;
  skipped_ += o.skipped_;
}

EvalResult Accumulator::result() const {
  if (n_ == 0) throw Error(ErrorCode::kInvalidArgument, "metrics: no evaluable sample");
  const double n = static_cast<double>(n_);
  return {ade5_ / n, ade10_ / n, fde1_ / n, fde10_ / n, static_cast<double>(misses_) / n, n_, skipped_};
}

}  // namespace bevtraj::metrics
