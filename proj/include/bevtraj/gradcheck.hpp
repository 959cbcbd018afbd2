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
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace bevtraj::gradcheck {

// Largest relative difference between the autograd gradient of a scalar
// function and central differences, over every entry of `x` (in double).
double max_rel_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                     double h = 1e-6);

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Names of the registered checks, in run order.
std::vector<std::string> registered();

// Runs every registered check on seeded double-precision instances
// (8x8 grids, K=2 modes, T=3 steps).
std::vector<CheckResult> run_all(uint64_t seed, double tolerance = 1e-3);

}  // namespace bevtraj::gradcheck
