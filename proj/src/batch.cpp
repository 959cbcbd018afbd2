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

#include "bevtraj/batch.hpp"

#include <algorithm>
#include <cmath>

#include "bevtraj/error.hpp"

namespace bevtraj {

double kind_code(sim::AgentKind kind) {
  switch (kind) {
    case sim::AgentKind::kVehicle: return 0.0;
    case sim::AgentKind::kPedestrian: return 0.5;
    case sim::AgentKind::kCyclist: return 1.0;
  }
  return 0.0;
}

TargetMode parse_target_mode(const std::string& s) {
  if (s == "agent") return TargetMode::kAgent;
  if (s == "ego") return TargetMode::kEgo;
  throw Error(ErrorCode::kInvalidArgument, "target must be 'agent' or 'ego', got '" + s + "'");
}

namespace {

void write_state(float* out, const sim::AgentState& st, const geom::Pose2& frame, double code) {
  const auto inv = geom::se2_invert(frame);
  const auto p = geom::se2_apply(inv, geom::Vec2{st.x, st.y});
  const double c = std::cos(frame.yaw), s = std::sin(frame.yaw);
  out[0] = static_cast<float>(p.x);
  out[1] = static_cast<float>(p.y);
  out[2] = static_cast<float>(geom::normalize_angle(st.yaw - frame.yaw));
  out[3] = static_cast<float>(c * st.vx + s * st.vy);
  out[4] = static_cast<float>(-s * st.vx + c * st.vy);
  out[5] = static_cast<float>(code);
  out[6] = 1.0f;
}

}  // namespace

Batch collate(const std::vector<const sim::SceneSample*>& samples, int max_agents, TargetMode mode) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "collate: empty batch");
  if (max_agents < 1) throw Error(ErrorCode::kInvalidArgument, "collate: max_agents must be >= 1");
  const auto& first = *samples.front();
  const auto spec = first.raster.spec;
  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t t = first.history_steps;
  const int64_t T = first.future_steps;
  const int64_t H = spec.height_cells, W = spec.width_cells;

  // Per-sample agent order: target first, then by distance to the target.
  std::vector<std::vector<const sim::AgentTrack*>> order(samples.size());
  int64_t na = 1;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto& s = *samples[b];
    if (!(s.raster.spec == spec) || s.history_steps != t || s.future_steps != T) {
      throw Error(ErrorCode::kInvalidArgument, "collate: scene " + s.scene_id + " has a different grid or horizon");
    }
    const int target_id = mode == TargetMode::kEgo ? s.ego_id : s.target_id;
    const auto& target = s.agent(target_id);
    const int cur = s.current_index();
    const auto& tc = target.states[static_cast<std::size_t>(cur)];
    std::vector<std::pair<double, const sim::AgentTrack*>> others;
    for (const auto& a : s.agents) {
      if (a.agent_id == target_id || !a.states[static_cast<std::size_t>(cur)].valid) continue;
      const auto& ac = a.states[static_cast<std::size_t>(cur)];
      others.emplace_back(std::hypot(ac.x - tc.x, ac.y - tc.y), &a);
    }
    std::stable_sort(others.begin(), others.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first < y.first;
      return x.second->agent_id < y.second->agent_id;
    });
    order[b].push_back(&target);
    for (const auto& [d, a] : others) {
      if (static_cast<int>(order[b].size()) >= max_agents) break;
      order[b].push_back(a);
    }
    na = std::max<int64_t>(na, static_cast<int64_t>(order[b].size()));
  }

  auto f32 = torch::TensorOptions().dtype(torch::kFloat);
  Batch batch;
  batch.range_m = spec.range_m;
  batch.raster = torch::empty({n, sim::kNumRasterChannels, H, W}, f32);
  batch.seg = torch::empty({n, H, W}, torch::kLong);
  batch.hist = torch::zeros({n, na, t, kStateAttrs}, f32);
  batch.hist_mask = torch::zeros({n, na, t}, torch::kBool);
  batch.agent_mask = torch::zeros({n, na}, torch::kBool);
  batch.anchors = torch::zeros({n, na, 2}, f32);
  batch.fut = torch::zeros({n, na, T, 2}, f32);
  batch.fut_mask = torch::zeros({n, na, T}, torch::kBool);
  batch.s_ego = torch::zeros({n, t, kStateAttrs}, f32);
  batch.target_in_ego = torch::zeros({n, 3}, f32);

  auto* raster = batch.raster.data_ptr<float>();
  auto* seg = batch.seg.data_ptr<int64_t>();
  auto* hist = batch.hist.data_ptr<float>();
  auto* hist_mask = batch.hist_mask.data_ptr<bool>();
  auto* agent_mask = batch.agent_mask.data_ptr<bool>();
  auto* anchors = batch.anchors.data_ptr<float>();
  auto* fut = batch.fut.data_ptr<float>();
  auto* fut_mask = batch.fut_mask.data_ptr<bool>();
  auto* s_ego = batch.s_ego.data_ptr<float>();
  auto* tie = batch.target_in_ego.data_ptr<float>();

  for (int64_t b = 0; b < n; ++b) {
    const auto& s = *samples[static_cast<std::size_t>(b)];
    batch.scene_ids.push_back(s.scene_id);
    std::copy(s.raster.data.begin(), s.raster.data.end(), raster + b * sim::kNumRasterChannels * H * W);
    for (int64_t i = 0; i < H * W; ++i) seg[b * H * W + i] = s.seg_labels[static_cast<std::size_t>(i)];

    const int cur = s.current_index();
    const auto& target = *order[static_cast<std::size_t>(b)].front();
    const auto& tc = target.states[static_cast<std::size_t>(cur)];
    const geom::Pose2 frame(tc.x, tc.y, tc.yaw);
    const auto rel = geom::relative_pose(s.ego_pose, frame);
    tie[b * 3 + 0] = static_cast<float>(rel.x);
    tie[b * 3 + 1] = static_cast<float>(rel.y);
    tie[b * 3 + 2] = static_cast<float>(rel.yaw);

    for (std::size_t a = 0; a < order[static_cast<std::size_t>(b)].size(); ++a) {
      const auto& track = *order[static_cast<std::size_t>(b)][a];
      const double code = kind_code(track.kind);
      const int64_t slot = b * na + static_cast<int64_t>(a);
      agent_mask[slot] = true;
      for (int64_t i = 0; i < t; ++i) {
        const auto& st = track.states[static_cast<std::size_t>(i)];
        if (!st.valid) continue;
        write_state(hist + (slot * t + i) * kStateAttrs, st, frame, code);
        hist_mask[slot * t + i] = true;
        if (a == 0) write_state(s_ego + (b * t + i) * kStateAttrs, st, s.ego_pose, code);
      }
      anchors[slot * 2 + 0] = hist[(slot * t + cur) * kStateAttrs + 0];
      anchors[slot * 2 + 1] = hist[(slot * t + cur) * kStateAttrs + 1];
      for (int64_t i = 0; i < T; ++i) {
        const auto& st = track.states[static_cast<std::size_t>(cur + 1 + i)];
        if (!st.valid) continue;
        const auto p = geom::se2_apply(geom::se2_invert(frame), geom::Vec2{st.x, st.y});
        fut[(slot * T + i) * 2 + 0] = static_cast<float>(p.x);
        fut[(slot * T + i) * 2 + 1] = static_cast<float>(p.y);
        fut_mask[slot * T + i] = true;
      }
    }
  }
  batch.target_fut = batch.fut.select(1, 0).clone();
  batch.target_fut_mask = batch.fut_mask.select(1, 0).clone();
  return batch;
}

}  // namespace bevtraj
