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

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace bevtraj::metrics {

// Multimodal prediction of one sample. `traj` is [K][T][2] row-major means,
// `probs` the K mode probabilities.
struct ModeView {
  std::span<const double> traj;
  std::span<const double> probs;
  int k = 0;
  int t = 0;
};

// Ground truth [T][2] with a per-step validity mask.
struct TruthView {
  std::span<const double> y;
  std::span<const uint8_t> mask;
};

// Indices of the k most probable modes, ties to the lower index.
std::vector<int> top_modes(std::span<const double> probs, int k);

// Minimum over the top-k modes of the mean Euclidean error on valid steps.
// Empty when no step is valid.
std::optional<double> min_ade(const ModeView& pred, const TruthView& gt, int k);
// Minimum over the top-k modes of the final-step error. Empty when the final
// step is invalid.
std::optional<double> min_fde(const ModeView& pred, const TruthView& gt, int k);
// Fraction of `fdes` strictly above `threshold`. Throws on an empty input.
double miss_rate(std::span<const double> fdes, double threshold = 2.0);

struct EvalResult {
  double min_ade5 = 0, min_ade10 = 0;
  double min_fde1 = 0, min_fde10 = 0;
  double miss_rate = 0;
  int64_t n_samples = 0;
  int64_t n_skipped = 0;
};

// Sums per-sample metrics; merging two accumulators is order independent.
class Accumulator {
 public:
  explicit Accumulator(double miss_threshold = 2.0) : threshold_(miss_threshold) {}

  // Returns false when the sample was skipped (no valid step or invalid
  // final step).
  bool add(const ModeView& pred, const TruthView& gt);
  void merge(const Accumulator& other);
  // Throws when no sample was accumulated.
  EvalResult result() const;

 private:
  double threshold_;
  double ade5_ = 0, ade10_ = 0, fde1_ = 0, fde10_ = 0;
  int64_t misses_ = 0, n_ = 0, skipped_ = 0;
};

}  // namespace bevtraj::metrics
