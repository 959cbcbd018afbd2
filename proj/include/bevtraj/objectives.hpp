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

#include "bevtraj/batch.hpp"
#include "bevtraj/model.hpp"

namespace bevtraj::loss {

// min_k |goals_k - g|^2, averaged over the batch.
//   goals: [N, K, 2], g: [N, 2]
torch::Tensor goal_loss(const torch::Tensor& goals, const torch::Tensor& g);

// Elementwise SmoothL1 with unit threshold.
torch::Tensor smooth_l1(const torch::Tensor& a, const torch::Tensor& b);

// mean_k SmoothL1(disp_k, |goals_k - g|), averaged over the batch. The
// distance target is not differentiated.
torch::Tensor disp_loss(const torch::Tensor& disp, const torch::Tensor& goals, const torch::Tensor& g);

struct DenseLoss {
  torch::Tensor value;
  bool empty = false;  // no valid entry; value is 0
};
// Mean |pred - y| over valid (agent, step, coord) entries.
//   pred, y: [N, Na, T, 2]; mask: [N, Na, T]
DenseLoss dense_loss(const torch::Tensor& pred, const torch::Tensor& y, const torch::Tensor& mask);

// Per-step bivariate normal log density: gmm [..., 5], y [..., 2] -> [...]
torch::Tensor gmm_log_density(const torch::Tensor& gmm, const torch::Tensor& y);
// -log sum_k q_k prod_t N(y_t | gmm_k,t) per valid step, averaged over the
// batch, for a fixed log-posterior `log_q` [N, K].
torch::Tensor gmm_nll(const torch::Tensor& gmm, const torch::Tensor& y, const torch::Tensor& mask,
                      const torch::Tensor& log_q);
// Per-step differential entropy: gmm [..., 5] -> [...]
torch::Tensor gmm_entropy(const torch::Tensor& gmm);

// Index of the last valid step of each row, -1 if none. mask: [N, T]
torch::Tensor last_valid_index(const torch::Tensor& mask);
// Mode with the smallest final-step error, ties to the lower index. fde: [N, K]
torch::Tensor best_mode(const torch::Tensor& fde);

struct MultiWeights {
  double nll = 1.0;
  double kl = 1.0;
  double ent = 0.01;
  double aux = 1.0;
  double tau = 1.0;
};

// Weighted components, each averaged over layers and samples.
struct MultiLoss {
  torch::Tensor nll, kl, ent, aux;
  torch::Tensor total() const { return nll + kl + ent + aux; }
};

// Components of one decoder layer, unweighted. Throws kNonFinite naming the
// layer and mode when a density is not finite.
MultiLoss layer_loss(const model::Hypotheses& hyp, const torch::Tensor& y, const torch::Tensor& mask,
                     double tau, int layer = 0);
MultiLoss multi_loss(const std::vector<model::Hypotheses>& layers, const torch::Tensor& y,
                     const torch::Tensor& mask, const MultiWeights& w);

struct LossReport {
  torch::Tensor total, goal, disp, dense, multi;
  MultiLoss parts;
  bool dense_empty = false;

  // step-log order: total, goal, disp, dense, nll, kl, ent, aux
  std::vector<double> values() const;
};

// Final valid position of each target future: [N, 2]; samples without any
// valid future step are rejected.
torch::Tensor final_positions(const torch::Tensor& fut, const torch::Tensor& mask);

LossReport total_loss(const model::Prediction& pred, const Batch& batch, const MultiWeights& w);

}  // namespace bevtraj::loss
