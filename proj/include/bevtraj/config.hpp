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
#include <map>
#include <string>
#include <vector>

#include "bevtraj/geom.hpp"

namespace bevtraj {

// Scene generator parameters (keys prefixed "sim.").
struct SimConfig {
  geom::GridSpec grid{50.0, 96, 96};
  double hz = 10.0;
  double history_seconds = 2.0;
  double future_seconds = 6.0;
  int history_steps = 21;  // current step included
  int future_steps = 60;
  // History is generated at this rate and resampled to `hz` when lower.
  double source_history_hz = 10.0;

  double lane_width = 3.5;
  double sidewalk_width = 2.0;
  double vehicle_width = 1.9;
  double vehicle_length = 4.6;
  double cyclist_width = 0.7;
  double pedestrian_width = 0.6;
  double speed_limit = 13.9;
  double max_accel = 4.0;
  double max_yaw_rate = 1.0;
  double turn_probability = 0.6;
  double lateral_noise_m = 0.3;

  double weight_straight = 1.0;
  double weight_curve = 1.0;
  double weight_three_way = 1.0;
  double weight_four_way = 1.0;

  int min_agents = 3;
  int max_agents = 8;
  double cyclist_fraction = 0.1;
  double pedestrian_fraction = 0.1;
  int max_obstacles = 6;

  bool hard_case_filter = false;
  double hard_min_displacement_m = 3.0;
  double hard_min_heading_change_rad = 0.3;
  double hard_min_lateral_m = 2.0;

  double noise_rate = 0.02;
  bool occlusion = true;
};

// Network hyperparameters (keys prefixed "model.").
struct ModelConfig {
  int d_model = 256;
  int n_heads = 8;
  int n_points = 4;
  int n_bev_queries = 256;
  int n_modes = 10;
  int encoder_blocks = 2;
  int encoder_stride = 1;
  int pre_encoder_layers = 2;
  int bda_layers = 3;
  int local_attn_layers = 6;
  int local_k = 16;
  int sgcp_blocks = 2;
  int itr_blocks = 3;
  int max_agents = 16;
  double key_temperature = 1.0;
  double posterior_tau = 1.0;
  double w_nll = 1.0;
  double w_kl = 1.0;
  double w_ent = 0.01;
  double w_aux = 1.0;
  bool freeze_encoder = false;
};

// Optimisation settings (keys prefixed "train.").
struct TrainConfig {
  double lr = 1e-4;
  double lr_decay = 0.4;
  int lr_decay_every_epochs = 5;
  // When > 0 the decay is applied every this many optimizer steps instead.
  int lr_decay_every_steps = 0;
  double weight_decay = 0.01;
  double grad_clip = 5.0;
  int batch_size = 8;
  int epochs = 30;
  // When > 0 training stops after this many steps.
  int max_steps = 0;
  // When > 0 only the newest this many epoch checkpoints are kept.
  int keep_checkpoints = 0;
  int pretrain_steps = 200;
  double pretrain_lr = 1e-3;
  int pretrain_batch = 8;
  bool skip_pretrain = false;
  // Speckle probability of the (non-equivalent) raster-noise augmentation.
  double raster_noise_aug = 0.0;
  std::string target = "agent";  // agent | ego
};

struct RunConfig {
  uint64_t seed = 0;
  int n_scenes = 16;
  SimConfig sim;
  ModelConfig model;
  TrainConfig train;

  // Throws Error(kInvalidConfig) naming the offending key.
  void validate() const;
  // Canonical "key = value" text, sorted by key.
  std::string to_text() const;
  // FNV-1a 64 of to_text(), as 16 hex digits.
  std::string hash() const;
  // Flat key/value view used by checkpoints for compatibility checks.
  std::map<std::string, std::string> model_fields() const;
};

// Parse "key = value" lines; '#' starts a comment. Unknown keys and
// malformed values throw Error(kInvalidConfig) naming the key.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

// Learning rate in effect at a given epoch / optimizer step.
double scheduled_lr(const TrainConfig& cfg, int epoch, int64_t step);

std::string fnv1a_hex(const std::string& data);

}  // namespace bevtraj
