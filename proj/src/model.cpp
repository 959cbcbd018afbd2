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

#include "bevtraj/model.hpp"

namespace bevtraj::model {

ModelOptions model_options(const RunConfig& cfg) {
  const auto& m = cfg.model;
  ModelOptions o;
  o.range_m = cfg.sim.grid.range_m;
  o.bev = BevEncoderOptions{sim::kNumRasterChannels, m.d_model, m.encoder_blocks, m.encoder_stride, sim::kNumSegClasses};
  o.scene.dim = m.d_model;
  o.scene.heads = m.n_heads;
  o.scene.points = m.n_points;
  o.scene.n_bev_queries = m.n_bev_queries;
  o.scene.pre_layers = m.pre_encoder_layers;
  o.scene.bda_layers = m.bda_layers;
  o.scene.local_layers = m.local_attn_layers;
  o.scene.local_k = m.local_k;
  o.scene.history = cfg.sim.history_steps;
  o.scene.horizon = cfg.sim.future_steps;
  o.decoder.dim = m.d_model;
  o.decoder.heads = m.n_heads;
  o.decoder.points = m.n_points;
  o.decoder.modes = m.n_modes;
  o.decoder.sgcp_blocks = m.sgcp_blocks;
  o.decoder.itr_blocks = m.itr_blocks;
  o.decoder.history = cfg.sim.history_steps;
  o.decoder.horizon = cfg.sim.future_steps;
  o.decoder.key_temperature = m.key_temperature;
  return o;
}

BevTrajModelImpl::BevTrajModelImpl(const ModelOptions& o) : options_(o) {
  encoder = register_module("encoder", BevEncoder(o.bev));
  scene = register_module("scene", SceneEncoder(o.scene));
  decoder = register_module("decoder", Decoder(o.decoder));
}

Prediction BevTrajModelImpl::forward(const Batch& batch) {
  Prediction p;
  p.bev = encoder->forward(batch.raster);
  auto ctx = scene->forward(p.bev, batch.hist, batch.hist_mask, batch.agent_mask, batch.anchors,
                            batch.target_in_ego, batch.range_m);
  DecoderInputs in{p.bev, batch.s_ego, batch.hist.select(1, 0), batch.target_in_ego, batch.range_m};
  auto dec = decoder->forward(ctx, in);
  p.goals = dec.goals;
  p.layers = std::move(dec.layers);
  p.outside = std::move(dec.outside);
  p.dense = ctx.dense;
  p.bda_refs = ctx.bda.refs_per_layer;
  return p;
}

std::vector<std::pair<std::string, std::vector<torch::Tensor>>> parameter_groups(BevTrajModelImpl& model) {
  std::vector<std::pair<std::string, std::vector<torch::Tensor>>> groups;
  auto params = [](const torch::nn::Module& m) { return m.parameters(); };
  groups.emplace_back("encoder", params(*model.encoder));
  std::vector<torch::Tensor> scene_rest;
  for (auto& p : model.scene->pre->parameters()) scene_rest.push_back(p);
  for (auto& p : model.scene->local->parameters()) scene_rest.push_back(p);
  for (auto& p : model.scene->dense->parameters()) scene_rest.push_back(p);
  groups.emplace_back("scene", scene_rest);
  groups.emplace_back("bda", params(*model.scene->bda));
  groups.emplace_back("sgcp", params(*model.decoder->sgcp));
  groups.emplace_back("itp", params(*model.decoder->itp));
  std::vector<torch::Tensor> itr;
  for (auto& b : model.decoder->itr) {
    for (auto& p : b->parameters()) itr.push_back(p);
  }
  groups.emplace_back("itr", itr);
  return groups;
}

}  // namespace bevtraj::model
