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

#include "bevtraj/geom.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "bevtraj/error.hpp"

namespace bevtraj::geom {
namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "non-finite " << what << " (" << v << ")";
    throw Error(ErrorCode::kInvalidArgument, os.str());
  }
}

void require_finite(const Pose2& p) {
  require_finite(p.x, "pose.x");
  require_finite(p.y, "pose.y");
  require_finite(p.yaw, "pose.yaw");
}

}  // namespace

double normalize_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  if (!std::isfinite(a)) return a;
  double r = std::remainder(a, 2.0 * kPi);  // in [-pi, pi]
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

Vec2 se2_apply(const Pose2& pose, Vec2 p) {
  require_finite(pose);
  require_finite(p.x, "point.x");
  require_finite(p.y, "point.y");
  const double c = std::cos(pose.yaw);
  const double s = std::sin(pose.yaw);
  return {c * p.x - s * p.y + pose.x, s * p.x + c * p.y + pose.y};
}

std::vector<Vec2> se2_apply(const Pose2& pose, std::span<const Vec2> points) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (const Vec2& p : points) out.push_back(se2_apply(pose, p));
  return out;
}

Pose2 se2_invert(const Pose2& pose) {
  require_finite(pose);
  const double c = std::cos(pose.yaw);
  const double s = std::sin(pose.yaw);
  return Pose2(-(c * pose.x + s * pose.y), s * pose.x - c * pose.y, -pose.yaw);
}

Pose2 se2_compose(const Pose2& a, const Pose2& b) {
  const Vec2 t = se2_apply(a, Vec2{b.x, b.y});
  return Pose2(t.x, t.y, a.yaw + b.yaw);
}

Pose2 relative_pose(const Pose2& frame, const Pose2& child) {
  return se2_compose(se2_invert(frame), child);
}

void GridSpec::validate() const {
  if (!(range_m > 0.0) || !std::isfinite(range_m)) {
    throw Error(ErrorCode::kInvalidConfig, "grid range_m must be positive");
  }
  if (height_cells <= 0 || width_cells <= 0) {
    throw Error(ErrorCode::kInvalidConfig, "grid cell counts must be positive");
  }
}

NormalizedPoint ego_to_grid(const GridSpec& spec, Vec2 p) {
  NormalizedPoint q;
  q.u = (p.x + spec.range_m) / (2.0 * spec.range_m);
  q.v = (p.y + spec.range_m) / (2.0 * spec.range_m);
  q.in_grid = q.u >= 0.0 && q.u <= 1.0 && q.v >= 0.0 && q.v <= 1.0;
  return q;
}

std::vector<NormalizedPoint> ego_to_grid(const GridSpec& spec, std::span<const Vec2> points) {
  std::vector<NormalizedPoint> out;
  out.reserve(points.size());
  for (const Vec2& p : points) out.push_back(ego_to_grid(spec, p));
  return out;
}

Vec2 grid_to_ego(const GridSpec& spec, const NormalizedPoint& q) {
  return {q.u * 2.0 * spec.range_m - spec.range_m, q.v * 2.0 * spec.range_m - spec.range_m};
}

Vec2 cell_center_ego(const GridSpec& spec, int row, int col) {
  return {-spec.range_m + (col + 0.5) * spec.cell_width_m(),
          -spec.range_m + (row + 0.5) * spec.cell_height_m()};
}

ResampledTrack resample_history(std::span<const TimedState> track, double target_hz) {
  if (!(target_hz > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "target_hz must be positive");
  }
  if (track.empty()) return {{}, true};
  for (std::size_t i = 1; i < track.size(); ++i) {
    if (!(track[i].t > track[i - 1].t)) {
      throw Error(ErrorCode::kInvalidArgument, "track timestamps must be strictly increasing");
    }
  }

  std::size_t n_valid = 0;
  for (const auto& s : track) n_valid += s.valid ? 1 : 0;

  const double t0 = track.front().t;
  const double t1 = track.back().t;
  const auto n_steps = static_cast<std::size_t>(std::llround((t1 - t0) * target_hz));
  const double dt = 1.0 / target_hz;

  ResampledTrack out;
  out.degenerate = n_valid < 2;
  out.states.reserve(n_steps + 1);

  std::size_t seg = 0;
  for (std::size_t i = 0; i <= n_steps; ++i) {
    const double t = (i == n_steps) ? t1 : t0 + static_cast<double>(i) * dt;
    while (seg + 1 < track.size() - 1 && track[seg + 1].t <= t) ++seg;

    const TimedState& a = track[seg];
    const TimedState& b = track[std::min(seg + 1, track.size() - 1)];
    TimedState s;
    s.t = t;

    constexpr double kTimeEps = 1e-9;
    if (std::abs(t - a.t) < kTimeEps) {
      s = a;
      s.t = t;
    } else if (std::abs(t - b.t) < kTimeEps) {
      s = b;
      s.t = t;
    } else if (out.degenerate || !a.valid || !b.valid) {
      s.valid = false;
    } else {
      const double alpha = (t - a.t) / (b.t - a.t);
      s.x = a.x + alpha * (b.x - a.x);
      s.y = a.y + alpha * (b.y - a.y);
      s.yaw = normalize_angle(a.yaw + alpha * normalize_angle(b.yaw - a.yaw));
      s.valid = true;
    }
    if (out.degenerate && !s.valid) s = TimedState{t, 0.0, 0.0, 0.0, false};
    out.states.push_back(s);
  }
  return out;
}

}  // namespace bevtraj::geom
