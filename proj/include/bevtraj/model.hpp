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

#include <torch/torch.h>

#include "bevtraj/batch.hpp"
#include "bevtraj/bev_encoder.hpp"
#include "bevtraj/config.hpp"
#include "bevtraj/scene_encoder.hpp"
#include "bevtraj/traj_decoder.hpp"

namespace bevtraj::model {

struct ModelOptions {
  BevEncoderOptions bev;
  SceneEncoderOptions scene;
  DecoderOptions decoder;
  double range_m = 50.0;
};

ModelOptions model_options(const RunConfig& cfg);

struct Prediction {
  GoalSet goals;
  std::vector<Hypotheses> layers;
  torch::Tensor dense;       // [N, Na, T, 2]
  torch::Tensor bev;         // [N, D, H', W']
  std::vector<torch::Tensor> bda_refs;
  std::vector<torch::Tensor> outside;

  const Hypotheses& final_layer() const { return layers.back(); }
};

struct BevTrajModelImpl : torch::nn::Module {
  explicit BevTrajModelImpl(const ModelOptions& options);

  Prediction forward(const Batch& batch);

  const ModelOptions& options() const { return options_; }

  BevEncoder encoder{nullptr};
  SceneEncoder scene{nullptr};
  Decoder decoder{nullptr};

 private:
  ModelOptions options_;
};
TORCH_MODULE(BevTrajModel);

// Parameter groups used by the gradient-flow audit.
std::vector<std::pair<std::string, std::vector<torch::Tensor>>> parameter_groups(BevTrajModelImpl& model);

}  // namespace bevtraj::model
