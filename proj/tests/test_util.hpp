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

#include <cmath>
#include <functional>

#include <torch/torch.h>

namespace bevtraj::test {

// Largest relative discrepancy between the autograd gradient of a scalar
// function and central finite differences, over every entry of `x`.
inline double fd_rel_error(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                           torch::Tensor x, double h = 1e-6) {
  x = x.detach().clone().to(torch::kDouble).set_requires_grad(true);
  auto y = f(x);
  auto g = torch::autograd::grad({y}, {x}, {}, false, false, true)[0];
  if (!g.defined()) g = torch::zeros_like(x);
  g = g.contiguous();
  auto flat = x.detach().clone().contiguous();
  auto* p = flat.data_ptr<double>();
  const auto* ga = g.data_ptr<double>();
  double worst = 0.0;
  torch::NoGradGuard ng;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f(flat).item<double>();
    p[i] = keep - h;
    const double dn = f(flat).item<double>();
    p[i] = keep;
    const double fd = (up - dn) / (2 * h);
    const double err = std::abs(fd - ga[i]) / std::max(1.0, std::max(std::abs(fd), std::abs(ga[i])));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace bevtraj::test
