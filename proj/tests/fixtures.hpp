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

#include <vector>

#include "bevtraj/batch.hpp"
#include "bevtraj/config.hpp"
#include "bevtraj/dataset.hpp"

namespace bevtraj::test {

// Small model and grid that keep a training step well under a second.
inline RunConfig tiny_config() {
  RunConfig cfg;
  cfg.sim.grid = {50.0, 24, 24};
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.n_points = 2;
  cfg.model.n_bev_queries = 8;
  cfg.model.n_modes = 4;
  cfg.model.max_agents = 4;
  cfg.sim.max_agents = 4;
  cfg.model.local_attn_layers = 2;
  cfg.model.local_k = 6;
  cfg.model.bda_layers = 2;
  cfg.model.itr_blocks = 2;
  cfg.model.encoder_blocks = 1;
  cfg.train.batch_size = 4;
  cfg.train.epochs = 2;
  cfg.train.pretrain_steps = 5;
  return cfg;
}

inline const std::vector<sim::SceneSample>& tiny_scenes() {
  static const auto data = data::generate_dataset(0, 8, tiny_config().sim);
  return data;
}

inline Batch tiny_batch(int n = 4) {
  const auto& d = tiny_scenes();
  std::vector<const sim::SceneSample*> p;
  for (int i = 0; i < n; ++i) p.push_back(&d[static_cast<std::size_t>(i)]);
  return collate(p, tiny_config().model.max_agents);
}

}  // namespace bevtraj::test
