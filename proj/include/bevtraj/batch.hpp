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

#include <string>
#include <vector>

#include <torch/torch.h>

#include "bevtraj/scene.hpp"

namespace bevtraj {

// Number of per-step attributes in a dynamic state:
// (x, y, yaw, vx, vy, kind code, valid).
inline constexpr int64_t kStateAttrs = 7;

double kind_code(sim::AgentKind kind);

// Model-ready tensors for a batch of scenes. Slot 0 of the agent axis is
// always the prediction target; remaining agents are ordered by distance to
// it at the current step. Everything except `raster` and `s_ego` lives in
// the target frame.
struct Batch {
  torch::Tensor raster;           // [N, 6, H, W]
  torch::Tensor seg;              // [N, H, W] int64 class ids
  torch::Tensor hist;             // [N, Na, t, 7]
  torch::Tensor hist_mask;        // [N, Na, t] bool
  torch::Tensor agent_mask;       // [N, Na] bool, slot occupied
  torch::Tensor anchors;          // [N, Na, 2] current positions
  torch::Tensor fut;              // [N, Na, T, 2]
  torch::Tensor fut_mask;         // [N, Na, T] bool
  torch::Tensor target_fut;       // [N, T, 2]
  torch::Tensor target_fut_mask;  // [N, T] bool
  torch::Tensor s_ego;            // [N, t, 7] target history in the ego frame
  torch::Tensor target_in_ego;    // [N, 3] (x, y, yaw)
  std::vector<std::string> scene_ids;
  double range_m = 50.0;

  int64_t size() const { return raster.size(0); }
};

enum class TargetMode { kAgent, kEgo };
TargetMode parse_target_mode(const std::string& s);

// `max_agents` bounds the agent axis (target included); extra agents are
// dropped farthest first.
Batch collate(const std::vector<const sim::SceneSample*>& samples, int max_agents,
              TargetMode mode = TargetMode::kAgent);

}  // namespace bevtraj
