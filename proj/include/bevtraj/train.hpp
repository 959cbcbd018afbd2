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

#include "bevtraj/batch.hpp"
#include "bevtraj/checkpoint.hpp"
#include "bevtraj/config.hpp"
#include "bevtraj/metrics.hpp"
#include "bevtraj/model.hpp"
#include "bevtraj/objectives.hpp"

namespace bevtraj::train {

// Seeds torch and builds a freshly initialised model for `cfg`.
model::BevTrajModel make_model(const RunConfig& cfg);

ckpt::Meta model_meta(const RunConfig& cfg, int epoch, int64_t step);
ckpt::Meta encoder_meta(const RunConfig& cfg, int64_t step);

loss::MultiWeights loss_weights(const RunConfig& cfg);

// Batches of the given scene indices; `mode` picks the prediction target.
Batch make_batch(const std::vector<sim::SceneSample>& data, const std::vector<int>& idx, const RunConfig& cfg,
                 TargetMode mode);

// Scene order for one epoch, deterministic in (seed, epoch).
std::vector<int> epoch_order(uint64_t seed, int epoch, int n);

inline constexpr const char* kTrainLogHeader = "step,total,goal,disp,dense,nll,kl,ent,aux,lr,epoch";

struct TrainOptions {
  std::string out_dir;            // log and checkpoints; required
  std::string resume;             // model checkpoint to continue from
  std::string encoder_checkpoint; // pretrained encoder weights
  TargetMode target = TargetMode::kAgent;
  int stop_after_epochs = 0;      // when > 0, stop once this many epochs are complete
  bool quiet = false;
};

struct TrainResult {
  int epochs = 0;          // completed epochs
  int64_t steps = 0;       // completed optimizer steps
  std::vector<double> last;  // last logged row, step-log order
  std::string checkpoint;  // final checkpoint path
};

// Runs AdamW with the step-decay schedule, gradient clipping and a per-step
// CSV log. Non-finite losses throw kNonFinite after writing the offending
// scene ids to `<out_dir>/nonfinite_batch.txt`.
TrainResult train(const RunConfig& cfg, const std::vector<sim::SceneSample>& data, model::BevTrajModel& model,
                  const TrainOptions& options);

// Same sample with the raster re-rendered without noise or occlusion.
sim::SceneSample clean_sample(const sim::SceneSample& s);

struct PretrainResult {
  int64_t steps = 0;
  double accuracy = 0.0;        // on the given rasters
  double clean_accuracy = 0.0;  // on noiseless re-renders
  std::string checkpoint;
};

// Segmentation pretraining of the sensor encoder.
PretrainResult pretrain(const RunConfig& cfg, const std::vector<sim::SceneSample>& data, model::BevEncoder& encoder,
                        const std::string& out_dir, bool quiet = false);
double segmentation_accuracy(const RunConfig& cfg, const std::vector<sim::SceneSample>& data,
                             model::BevEncoder& encoder);

struct EvalOptions {
  std::string out_dir;  // empty: no files
  std::string model_name = "bevtraj";
  std::string dataset_name = "synthetic";
  TargetMode target = TargetMode::kAgent;
  int plots = 4;        // overlay images written
  bool oracle = false;  // test hook: replace every mode by the ground truth
};

struct EvalReport {
  metrics::EvalResult final;
  std::vector<metrics::EvalResult> per_layer;
  metrics::EvalResult const_vel;
};

inline constexpr const char* kMetricsHeader = "minADE5,minADE10,minFDE1,minFDE10,MissRate";

EvalReport evaluate(const RunConfig& cfg, const std::vector<sim::SceneSample>& data, model::BevTrajModel& model,
                    const EvalOptions& options);

// Constant-velocity extrapolation of the target from its current state.
metrics::EvalResult constant_velocity(const RunConfig& cfg, const std::vector<sim::SceneSample>& data,
                                      TargetMode mode);

}  // namespace bevtraj::train
