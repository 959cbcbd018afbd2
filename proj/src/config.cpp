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

#include "bevtraj/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "bevtraj/error.hpp"

namespace bevtraj {
namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kInvalidConfig, "bad numeric value for '" + key + "': " + s);
  }
  return v;
}

int64_t parse_int(const std::string& key, const std::string& s) {
  int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kInvalidConfig, "bad integer value for '" + key + "': " + s);
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(ErrorCode::kInvalidConfig, "bad boolean value for '" + key + "': " + s);
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  bool model = false;
};

template <typename M>
Field make_field(const std::string& key, M RunConfig::*section, double M::*member, bool model) {
  return {[=](const RunConfig& c) { return format_double(c.*section.*member); },
          [=](RunConfig& c, const std::string& v) { c.*section.*member = parse_double(key, v); },
          model};
}

template <typename M>
Field make_field(const std::string& key, M RunConfig::*section, int M::*member, bool model) {
  return {[=](const RunConfig& c) { return std::to_string(c.*section.*member); },
          [=](RunConfig& c, const std::string& v) {
            c.*section.*member = static_cast<int>(parse_int(key, v));
          },
          model};
}

template <typename M>
Field make_field(const std::string& key, M RunConfig::*section, bool M::*member, bool model) {
  return {[=](const RunConfig& c) { return std::string(c.*section.*member ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { c.*section.*member = parse_bool(key, v); },
          model};
}

template <typename M>
Field make_field(const std::string&, M RunConfig::*section, std::string M::*member, bool model) {
  return {[=](const RunConfig& c) { return c.*section.*member; },
          [=](RunConfig& c, const std::string& v) { c.*section.*member = v; }, model};
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["seed"] = {[](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) {
                   const auto s = parse_int("seed", v);
                   if (s < 0) throw Error(ErrorCode::kInvalidConfig, "seed must be >= 0");
                   c.seed = static_cast<uint64_t>(s);
                 },
                 false};
    f["n_scenes"] = {[](const RunConfig& c) { return std::to_string(c.n_scenes); },
                     [](RunConfig& c, const std::string& v) {
                       c.n_scenes = static_cast<int>(parse_int("n_scenes", v));
                     },
                     false};
#define SIM(name) f["sim." #name] = make_field("sim." #name, &RunConfig::sim, &SimConfig::name, true)
#define MODEL(name) \
  f["model." #name] = make_field("model." #name, &RunConfig::model, &ModelConfig::name, true)
#define TRAIN(name) \
  f["train." #name] = make_field("train." #name, &RunConfig::train, &TrainConfig::name, false)
    f["sim.range_m"] = {[](const RunConfig& c) { return format_double(c.sim.grid.range_m); },
                        [](RunConfig& c, const std::string& v) {
                          c.sim.grid.range_m = parse_double("sim.range_m", v);
                        },
                        true};
    f["sim.grid_cells"] = {[](const RunConfig& c) { return std::to_string(c.sim.grid.width_cells); },
                           [](RunConfig& c, const std::string& v) {
                             const auto n = static_cast<int>(parse_int("sim.grid_cells", v));
                             c.sim.grid.width_cells = n;
                             c.sim.grid.height_cells = n;
                           },
                           true};
    SIM(hz); SIM(history_seconds); SIM(future_seconds); SIM(history_steps); SIM(future_steps);
    SIM(source_history_hz); SIM(lane_width); SIM(sidewalk_width); SIM(vehicle_width);
    SIM(vehicle_length); SIM(cyclist_width); SIM(pedestrian_width); SIM(speed_limit);
    SIM(max_accel); SIM(max_yaw_rate); SIM(turn_probability); SIM(lateral_noise_m);
    SIM(weight_straight); SIM(weight_curve); SIM(weight_three_way); SIM(weight_four_way);
    SIM(min_agents); SIM(max_agents); SIM(cyclist_fraction); SIM(pedestrian_fraction);
    SIM(max_obstacles); SIM(hard_case_filter); SIM(hard_min_displacement_m);
    SIM(hard_min_heading_change_rad); SIM(hard_min_lateral_m); SIM(noise_rate); SIM(occlusion);
    MODEL(d_model); MODEL(n_heads); MODEL(n_points); MODEL(n_bev_queries); MODEL(n_modes);
    MODEL(encoder_blocks); MODEL(encoder_stride); MODEL(pre_encoder_layers); MODEL(bda_layers);
    MODEL(local_attn_layers); MODEL(local_k); MODEL(sgcp_blocks); MODEL(itr_blocks);
    MODEL(max_agents); MODEL(key_temperature); MODEL(posterior_tau); MODEL(w_nll); MODEL(w_kl);
    MODEL(w_ent); MODEL(w_aux); MODEL(freeze_encoder);
    TRAIN(lr); TRAIN(lr_decay); TRAIN(lr_decay_every_epochs); TRAIN(lr_decay_every_steps);
    TRAIN(weight_decay); TRAIN(grad_clip); TRAIN(batch_size); TRAIN(epochs); TRAIN(max_steps); TRAIN(keep_checkpoints);
    TRAIN(pretrain_steps); TRAIN(pretrain_lr); TRAIN(pretrain_batch); TRAIN(skip_pretrain);
    TRAIN(raster_noise_aug); TRAIN(target);
#undef SIM
#undef MODEL
#undef TRAIN
    return f;
  }();
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void require(bool ok, const std::string& key, const std::string& why) {
  if (!ok) throw Error(ErrorCode::kInvalidConfig, "'" + key + "' " + why);
}

}  // namespace

std::string fnv1a_hex(const std::string& data) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& reg = registry();
  auto it = reg.find(key);
  if (it == reg.end()) throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : registry()) keys.push_back(k);
  return keys;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidConfig,
                  "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : registry()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::hash() const { return fnv1a_hex(to_text()); }

std::map<std::string, std::string> RunConfig::model_fields() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : registry()) {
    if (f.model) out[k] = f.get(*this);
  }
  return out;
}

void RunConfig::validate() const {
  require(n_scenes >= 0, "n_scenes", "must be >= 0");
  require(sim.grid.range_m > 0, "sim.range_m", "must be > 0");
  require(sim.grid.width_cells > 0, "sim.grid_cells", "must be > 0");
  require(sim.hz > 0, "sim.hz", "must be > 0");
  require(sim.history_steps > 0, "sim.history_steps", "must be > 0");
  require(sim.future_steps > 0, "sim.future_steps", "must be > 0");
  require(sim.history_steps == std::lround(sim.history_seconds * sim.hz) + 1,
          "sim.history_steps", "inconsistent with history_seconds * hz + 1");
  require(sim.future_steps == std::lround(sim.future_seconds * sim.hz), "sim.future_steps",
          "inconsistent with future_seconds * hz");
  require(sim.source_history_hz > 0 && sim.source_history_hz <= sim.hz, "sim.source_history_hz",
          "must be in (0, hz]");
  require(sim.lane_width > sim.vehicle_width, "sim.lane_width", "must exceed vehicle_width");
  require(sim.lane_width > sim.cyclist_width, "sim.lane_width", "must exceed cyclist_width");
  require(sim.sidewalk_width > sim.pedestrian_width, "sim.sidewalk_width",
          "must exceed pedestrian_width");
  require(sim.vehicle_width > 0 && sim.vehicle_length > 0, "sim.vehicle_width", "must be > 0");
  require(sim.speed_limit > 0, "sim.speed_limit", "must be > 0");
  require(sim.max_accel > 0, "sim.max_accel", "must be > 0");
  require(sim.max_yaw_rate > 0, "sim.max_yaw_rate", "must be > 0");
  require(sim.turn_probability >= 0 && sim.turn_probability <= 1, "sim.turn_probability",
          "must be in [0, 1]");
  require(sim.lateral_noise_m >= 0 && sim.lateral_noise_m < sim.lane_width / 2,
          "sim.lateral_noise_m", "must be in [0, lane_width / 2)");
  require(sim.weight_straight >= 0 && sim.weight_curve >= 0 && sim.weight_three_way >= 0 &&
              sim.weight_four_way >= 0,
          "sim.weight_straight", "topology weights must be >= 0");
  require(sim.weight_straight + sim.weight_curve + sim.weight_three_way + sim.weight_four_way > 0,
          "sim.weight_straight", "at least one topology weight must be > 0");
  require(sim.min_agents >= 1, "sim.min_agents", "must be >= 1");
  require(sim.max_agents >= sim.min_agents, "sim.max_agents", "must be >= min_agents");
  require(sim.cyclist_fraction >= 0 && sim.pedestrian_fraction >= 0 &&
              sim.cyclist_fraction + sim.pedestrian_fraction <= 1,
          "sim.cyclist_fraction", "kind fractions must be >= 0 and sum to <= 1");
  require(sim.max_obstacles >= 0, "sim.max_obstacles", "must be >= 0");
  require(sim.noise_rate >= 0 && sim.noise_rate <= 1, "sim.noise_rate", "must be in [0, 1]");

  require(model.d_model > 0, "model.d_model", "must be > 0");
  require(model.n_heads > 0 && model.d_model % model.n_heads == 0, "model.n_heads",
          "must be > 0 and divide d_model");
  require(model.d_model % 4 == 0, "model.d_model", "must be divisible by 4");
  require(model.n_points > 0, "model.n_points", "must be > 0");
  require(model.n_bev_queries > 0, "model.n_bev_queries", "must be > 0");
  require(model.n_modes > 0, "model.n_modes", "must be > 0");
  require(model.encoder_blocks > 0, "model.encoder_blocks", "must be > 0");
  require(model.encoder_stride == 1 || model.encoder_stride == 2, "model.encoder_stride",
          "must be 1 or 2");
  require(model.pre_encoder_layers > 0, "model.pre_encoder_layers", "must be > 0");
  require(model.bda_layers > 0, "model.bda_layers", "must be > 0");
  require(model.local_attn_layers > 0, "model.local_attn_layers", "must be > 0");
  require(model.local_k > 0, "model.local_k", "must be > 0");
  require(model.sgcp_blocks > 0, "model.sgcp_blocks", "must be > 0");
  require(model.itr_blocks > 0, "model.itr_blocks", "must be > 0");
  require(model.max_agents >= sim.max_agents, "model.max_agents", "must be >= sim.max_agents");
  require(model.key_temperature > 0, "model.key_temperature", "must be > 0");
  require(model.posterior_tau > 0, "model.posterior_tau", "must be > 0");
  const int cells_out = sim.grid.width_cells / model.encoder_stride;
  require(model.n_modes * model.n_points <= cells_out * cells_out, "model.n_modes",
          "n_modes * n_points must not exceed the BEV cell count");

  require(train.lr >= 0, "train.lr", "must be >= 0");
  require(train.lr_decay > 0, "train.lr_decay", "must be > 0");
  require(train.lr_decay_every_epochs > 0, "train.lr_decay_every_epochs", "must be > 0");
  require(train.lr_decay_every_steps >= 0, "train.lr_decay_every_steps", "must be >= 0");
  require(train.weight_decay >= 0, "train.weight_decay", "must be >= 0");
  require(train.grad_clip > 0, "train.grad_clip", "must be > 0");
  require(train.batch_size > 0, "train.batch_size", "must be > 0");
  require(train.epochs > 0, "train.epochs", "must be > 0");
  require(train.max_steps >= 0, "train.max_steps", "must be >= 0");
  require(train.keep_checkpoints >= 0, "train.keep_checkpoints", "must be >= 0");
  require(train.pretrain_steps >= 0, "train.pretrain_steps", "must be >= 0");
  require(train.pretrain_batch > 0, "train.pretrain_batch", "must be > 0");
  require(train.raster_noise_aug >= 0 && train.raster_noise_aug <= 1, "train.raster_noise_aug",
          "must be in [0, 1]");
  require(train.target == "agent" || train.target == "ego", "train.target",
          "must be 'agent' or 'ego'");
}

double scheduled_lr(const TrainConfig& cfg, int epoch, int64_t step) {
  const int64_t drops = cfg.lr_decay_every_steps > 0 ? step / cfg.lr_decay_every_steps
                                                     : epoch / cfg.lr_decay_every_epochs;
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(drops));
}

}  // namespace bevtraj
