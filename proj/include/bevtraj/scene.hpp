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
#include <string>
#include <vector>

#include "bevtraj/config.hpp"
#include "bevtraj/geom.hpp"

namespace bevtraj::sim {

enum class AgentKind : int { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };
const char* kind_name(AgentKind kind);

struct AgentState {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  bool valid = false;

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

// Global-frame track sampled at the scene rate; index history_steps - 1 is
// the current timestamp (t = 0).
struct AgentTrack {
  int agent_id = 0;
  AgentKind kind = AgentKind::kVehicle;
  double length = 4.6;
  double width = 1.9;
  std::vector<AgentState> states;

  friend bool operator==(const AgentTrack&, const AgentTrack&) = default;
};

enum class Topology : int { kStraight = 0, kCurve = 1, kThreeWay = 2, kFourWay = 3 };
const char* topology_name(Topology t);

struct Polyline {
  std::vector<geom::Vec2> points;
  friend bool operator==(const Polyline&, const Polyline&) = default;
};

// Static scene layout in the global frame.
struct SceneGeometry {
  Topology topology = Topology::kStraight;
  double lane_width = 3.5;
  std::vector<Polyline> lanes;      // vehicle lane centrelines (one per route)
  std::vector<Polyline> sidewalks;  // pedestrian paths
  std::vector<Polyline> medians;    // painted lines between opposing lanes
  std::vector<std::array<geom::Vec2, 4>> obstacles;  // convex quads, CCW

  friend bool operator==(const SceneGeometry&, const SceneGeometry&) = default;
};

enum RasterChannel : int {
  kDrivable = 0,
  kLaneMarking = 1,
  kRoadBoundary = 2,
  kStaticObstacle = 3,
  kAgentOccupancy = 4,
  kOcclusionMask = 5,
  kNumRasterChannels = 6,
};
const std::array<std::string, kNumRasterChannels>& raster_channel_names();

// Segmentation classes; classes 1..4 coincide with raster channels 0..3.
enum SegClass : int {
  kBackground = 0,
  kClassDrivable = 1,
  kClassMarking = 2,
  kClassBoundary = 3,
  kClassObstacle = 4,
  kNumSegClasses = 5,
};

// Sensor-surrogate raster in the ego frame at the current timestamp.
// Layout [channel][row][col]; row follows ego y, col follows ego x.
struct BevRasterInput {
  geom::GridSpec spec;
  std::vector<float> data;

  float at(int channel, int row, int col) const {
    return data[(static_cast<std::size_t>(channel) * spec.height_cells + row) * spec.width_cells +
                col];
  }
  float& at(int channel, int row, int col) {
    return data[(static_cast<std::size_t>(channel) * spec.height_cells + row) * spec.width_cells +
                col];
  }
  friend bool operator==(const BevRasterInput&, const BevRasterInput&) = default;
};

struct SceneSample {
  std::string scene_id;
  uint64_t seed = 0;
  double hz = 10.0;
  int history_steps = 21;
  int future_steps = 60;
  geom::Pose2 ego_pose;  // global, current timestamp
  int ego_id = 0;
  int target_id = 0;
  std::vector<AgentTrack> agents;
  SceneGeometry geometry;
  BevRasterInput raster;
  std::vector<uint8_t> seg_labels;  // H*W class ids, clean (pre-noise, pre-occlusion)

  int current_index() const { return history_steps - 1; }
  const AgentTrack& agent(int id) const;
  const AgentTrack& target() const { return agent(target_id); }

  friend bool operator==(const SceneSample&, const SceneSample&) = default;
};

struct RasterResult {
  BevRasterInput raster;
  std::vector<uint8_t> seg_labels;
};

struct RasterOptions {
  double noise_rate = 0.0;
  bool occlusion = true;
  uint64_t noise_seed = 0;
};

// Render the ego-frame raster and its clean class map.
RasterResult rasterize(const SceneGeometry& geometry, std::span<const AgentTrack> agents,
                       int current_index, const geom::Pose2& ego_pose, const geom::GridSpec& spec,
                       const RasterOptions& options);

// Deterministic in (seed, cfg). Throws Error(kInvalidConfig) on infeasible cfg.
SceneSample generate_scene(uint64_t seed, const SimConfig& cfg);

// Re-centre a sample on the ego vehicle as the prediction target.
SceneSample with_ego_target(const SceneSample& sample);

// Hard-case predicate on a future relative to the current state.
bool is_hard_case(const AgentTrack& track, int current_index, const SimConfig& cfg);

struct PhysicsReport {
  bool ok = true;
  double max_accel = 0.0;
  double max_yaw_rate = 0.0;
  double worst_speed_mismatch = 0.0;  // relative, over steps with speed above 1 m/s
  std::string detail;
};

// Independent post-hoc check of acceleration, yaw rate and speed/position
// consistency for valid consecutive steps.
PhysicsReport check_track_physics(const AgentTrack& track, double hz, double max_accel,
                                  double max_yaw_rate);

double distance_to_polyline(const Polyline& line, geom::Vec2 p);
bool point_in_quad(const std::array<geom::Vec2, 4>& quad, geom::Vec2 p);
bool segment_intersects_quad(const std::array<geom::Vec2, 4>& quad, geom::Vec2 a, geom::Vec2 b);

}  // namespace bevtraj::sim
