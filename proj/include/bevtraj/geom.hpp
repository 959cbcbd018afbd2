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

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace bevtraj::geom {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

double normalize_angle(double a);

// Rigid 2-D transform mapping local coordinates into the parent frame:
// p_parent = R(yaw) * p_local + (x, y). Yaw is kept in (-pi, pi].
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double yaw_) : x(x_), y(y_), yaw(normalize_angle(yaw_)) {}

  friend bool operator==(const Pose2&, const Pose2&) = default;
};

Vec2 se2_apply(const Pose2& pose, Vec2 p);
std::vector<Vec2> se2_apply(const Pose2& pose, std::span<const Vec2> points);
Pose2 se2_invert(const Pose2& pose);
// compose(a, b) applies b first, then a.
Pose2 se2_compose(const Pose2& a, const Pose2& b);
// Pose of `child` expressed in the frame of `frame` (both given in a common parent).
Pose2 relative_pose(const Pose2& frame, const Pose2& child);

struct GridSpec {
  double range_m = 50.0;  // half extent, symmetric about the ego origin
  int height_cells = 96;
  int width_cells = 96;

  double cell_width_m() const { return 2.0 * range_m / width_cells; }
  double cell_height_m() const { return 2.0 * range_m / height_cells; }
  // Throws on non-positive range or cell counts.
  void validate() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// (u, v) in [0,1]^2 addresses the grid: u runs along ego x (columns), v
// along ego y (rows). Cell (i, j) is centred at ((j + 0.5) / W, (i + 0.5) / H).
struct NormalizedPoint {
  double u = 0.0;
  double v = 0.0;
  bool in_grid = true;
};

NormalizedPoint ego_to_grid(const GridSpec& spec, Vec2 p);
std::vector<NormalizedPoint> ego_to_grid(const GridSpec& spec, std::span<const Vec2> points);
Vec2 grid_to_ego(const GridSpec& spec, const NormalizedPoint& q);
Vec2 cell_center_ego(const GridSpec& spec, int row, int col);

struct TimedState {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  bool valid = true;
};

struct ResampledTrack {
  std::vector<TimedState> states;
  // Fewer than two valid source samples: only samples that coincide with a
  // source timestamp are valid, nothing is interpolated.
  bool degenerate = false;
};

// Linear interpolation of x/y and shortest-arc interpolation of yaw onto a
// uniform grid at `target_hz` spanning the source time range. An output step
// is valid only when both bracketing source samples are valid.
ResampledTrack resample_history(std::span<const TimedState> track, double target_hz);

}  // namespace bevtraj::geom
