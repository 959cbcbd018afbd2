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

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace bevtraj::detail {

// Four-tap bilinear stencil at a normalized (u, v) location with cell
// centres at (j + 0.5) / W. du/dv hold d(weight)/d(u) and d(weight)/d(v).
template <typename T>
struct BilinearStencil {
  bool valid = false;
  int64_t index[4] = {0, 0, 0, 0};  // row-major cell index
  T weight[4] = {0, 0, 0, 0};
  T du[4] = {0, 0, 0, 0};
  T dv[4] = {0, 0, 0, 0};
};

template <typename T>
inline BilinearStencil<T> make_stencil(T u, T v, int64_t height, int64_t width) {
  BilinearStencil<T> s;
  if (!(u >= T(0) && u <= T(1) && v >= T(0) && v <= T(1))) return s;
  s.valid = true;

  T px = u * T(width) - T(0.5);
  T py = v * T(height) - T(0.5);
  // Inside the unit square but beyond the outermost cell centres the stencil
  // is clamped to the border cell, which makes the value locally constant.
  T gx = T(width);
  T gy = T(height);
  if (px <= T(0)) { px = T(0); gx = T(0); }
  if (px >= T(width - 1)) { px = T(width - 1); gx = T(0); }
  if (py <= T(0)) { py = T(0); gy = T(0); }
  if (py >= T(height - 1)) { py = T(height - 1); gy = T(0); }

  int64_t x0 = static_cast<int64_t>(std::floor(px));
  int64_t y0 = static_cast<int64_t>(std::floor(py));
  x0 = std::clamp<int64_t>(x0, 0, std::max<int64_t>(width - 2, 0));
  y0 = std::clamp<int64_t>(y0, 0, std::max<int64_t>(height - 2, 0));
  const int64_t x1 = std::min<int64_t>(x0 + 1, width - 1);
  const int64_t y1 = std::min<int64_t>(y0 + 1, height - 1);
  const T lx = px - T(x0);
  const T ly = py - T(y0);
  const T hx = T(1) - lx;
  const T hy = T(1) - ly;

  s.index[0] = y0 * width + x0;
  s.index[1] = y0 * width + x1;
  s.index[2] = y1 * width + x0;
  s.index[3] = y1 * width + x1;
  s.weight[0] = hy * hx;
  s.weight[1] = hy * lx;
  s.weight[2] = ly * hx;
  s.weight[3] = ly * lx;
  s.du[0] = -hy * gx;
  s.du[1] = hy * gx;
  s.du[2] = -ly * gx;
  s.du[3] = ly * gx;
  s.dv[0] = -hx * gy;
  s.dv[1] = -lx * gy;
  s.dv[2] = hx * gy;
  s.dv[3] = lx * gy;
  return s;
}

}  // namespace bevtraj::detail
