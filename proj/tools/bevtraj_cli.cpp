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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "bevtraj/checkpoint.hpp"
#include "bevtraj/config.hpp"
#include "bevtraj/dataset.hpp"
#include "bevtraj/error.hpp"
#include "bevtraj/gradcheck.hpp"
#include "bevtraj/sampling.hpp"
#include "bevtraj/train.hpp"

namespace fs = std::filesystem;
using namespace bevtraj;

namespace {

struct Common {
  std::string config;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string dataset;
  std::string checkpoint;
  std::string target;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (key = value lines)");
  cmd->add_option_function<uint64_t>(
      "--seed", [&c](const uint64_t& s) { c.seed = s; c.seed_set = true; }, "Run seed");
  cmd->add_option("--set", c.overrides, "Config override key=value (repeatable)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kInvalidConfig, "override '" + kv + "' is not key=value");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed_set) cfg.seed = c.seed;
  if (!c.target.empty()) cfg.train.target = c.target;
  cfg.validate();
  return cfg;
}

void write_config(const RunConfig& cfg, const std::string& out) {
  fs::create_directories(out);
  std::ofstream f(fs::path(out) / "config.cfg", std::ios::trunc);
  f << "# config_hash " << cfg.hash() << "\n" << cfg.to_text();
}

int gen_data(const Common& c) {
  const auto cfg = resolve(c);
  const auto data = data::generate_dataset(cfg.seed, cfg.n_scenes, cfg.sim);
  data::write_dataset(data, c.out);
  write_config(cfg, c.out);
  std::cout << "scenes " << data.size() << "\nseed " << cfg.seed << "\nconfig_hash " << cfg.hash() << "\nout "
            << c.out << "\n";
  return 0;
}

int pretrain(const Common& c) {
  const auto cfg = resolve(c);
  const auto data = data::read_dataset(c.dataset);
  write_config(cfg, c.out);
  auto m = train::make_model(cfg);
  const auto r = train::pretrain(cfg, data, m->encoder, c.out);
  std::cout << "steps " << r.steps << "\naccuracy " << r.accuracy << "\nclean_accuracy " << r.clean_accuracy
            << "\ncheckpoint " << r.checkpoint << "\nconfig_hash " << cfg.hash() << "\n";
  return 0;
}

int train_cmd(const Common& c) {
  const auto cfg = resolve(c);
  const auto data = data::read_dataset(c.dataset);
  write_config(cfg, c.out);
  auto m = train::make_model(cfg);
  train::TrainOptions o;
  o.out_dir = c.out;
  o.target = parse_target_mode(cfg.train.target);
  if (!c.checkpoint.empty()) {
    if (ckpt::read_meta(c.checkpoint).kind == ckpt::Kind::kEncoder) {
      o.encoder_checkpoint = c.checkpoint;
    } else {
      o.resume = c.checkpoint;
    }
  } else if (!cfg.train.skip_pretrain) {
    const auto pre_dir = (fs::path(c.out) / "pretrain").string();
    auto r = train::pretrain(cfg, data, m->encoder, pre_dir);
    std::cout << "pretrain_accuracy " << r.accuracy << "\npretrain_clean_accuracy " << r.clean_accuracy << "\n";
    o.encoder_checkpoint = r.checkpoint;
  }
  const auto r = train::train(cfg, data, m, o);
  std::cout << "epochs " << r.epochs << "\nsteps " << r.steps << "\ncheckpoint " << r.checkpoint << "\nconfig_hash "
            << cfg.hash() << "\n";
  return 0;
}

int eval_cmd(const Common& c, bool oracle, int plots) {
  const auto cfg = resolve(c);
  const auto data = data::read_dataset(c.dataset);
  auto m = train::make_model(cfg);
  if (!c.checkpoint.empty()) {
    const auto expected = train::model_meta(cfg, 0, 0);
    ckpt::load(c.checkpoint, *m, nullptr, &expected);
  } else if (!oracle) {
    throw Error(ErrorCode::kInvalidArgument, "eval needs --checkpoint");
  }
  if (!c.out.empty()) write_config(cfg, c.out);
  train::EvalOptions o;
  o.out_dir = c.out;
  o.target = parse_target_mode(cfg.train.target);
  o.oracle = oracle;
  o.plots = plots;
  o.dataset_name = fs::path(c.dataset).filename().string();
  const auto r = train::evaluate(cfg, data, m, o);
  std::printf("%s\n%.6f,%.6f,%.6f,%.6f,%.6f\n", train::kMetricsHeader, r.final.min_ade5, r.final.min_ade10,
              r.final.min_fde1, r.final.min_fde10, r.final.miss_rate);
  std::printf("samples %lld skipped %lld\n", static_cast<long long>(r.final.n_samples),
              static_cast<long long>(r.final.n_skipped));
  std::printf("const_vel minADE10 %.6f\n", r.const_vel.min_ade10);
  return 0;
}

int gradcheck_cmd(const Common& c, const std::string& corrupt) {
  const auto cfg = resolve(c);
  testing::set_corrupted_gradient(corrupt);
  const auto results = gradcheck::run_all(cfg.seed);
  testing::set_corrupted_gradient("");
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-20s max_rel_error %.3e %s\n", r.name.c_str(), r.max_rel_error, r.pass ? "PASS" : "FAIL");
    ok = ok && r.pass;
  }
  std::printf("%zu checks, %s\n", results.size(), ok ? "all passed" : "FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BEVTraj trajectory prediction on synthetic BEV scenes"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen-data", "Generate and serialize synthetic scenes");
  add_common(gen, c);
  gen->add_option("--out", c.out, "Dataset directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Segmentation pretraining of the sensor encoder");
  add_common(pre, c);
  pre->add_option("--dataset", c.dataset, "Dataset directory")->required();
  pre->add_option("--out", c.out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "End-to-end training");
  add_common(tr, c);
  tr->add_option("--dataset", c.dataset, "Dataset directory")->required();
  tr->add_option("--out", c.out, "Output directory")->required();
  tr->add_option("--checkpoint", c.checkpoint, "Encoder checkpoint to start from, or model checkpoint to resume");
  tr->add_option("--target", c.target, "Prediction target")->check(CLI::IsMember({"agent", "ego"}));

  bool oracle = false;
  int plots = 4;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, c);
  ev->add_option("--dataset", c.dataset, "Dataset directory")->required();
  ev->add_option("--checkpoint", c.checkpoint, "Model checkpoint");
  ev->add_option("--out", c.out, "Report directory");
  ev->add_option("--target", c.target, "Prediction target")->check(CLI::IsMember({"agent", "ego"}));
  ev->add_option("--plots", plots, "Number of overlay images");
  ev->add_flag("--oracle", oracle, "Replace predictions by the ground truth")->group("");

  std::string corrupt;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  add_common(gc, c);
  gc->add_option("--corrupt", corrupt, "Corrupt the backward of an op")->group("");

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return gen_data(c);
    if (pre->parsed()) return pretrain(c);
    if (tr->parsed()) return train_cmd(c);
    if (ev->parsed()) return eval_cmd(c, oracle, plots);
    if (gc->parsed()) return gradcheck_cmd(c, corrupt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
