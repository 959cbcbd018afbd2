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

#include "bevtraj/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "bevtraj/dataset.hpp"
#include "bevtraj/error.hpp"
#include "bevtraj/sampling.hpp"

namespace bevtraj::train {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::ofstream open_csv(const fs::path& path, const std::string& header, bool append) {
  const bool fresh = !append || !fs::exists(path);
  std::ofstream out(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  if (fresh) out << header << "\n";
  return out;
}

void set_lr(torch::optim::AdamW& opt, double lr) {
  for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
}

torch::optim::AdamWOptions adamw(double lr, double weight_decay) {
  return torch::optim::AdamWOptions(lr).betas({0.9, 0.999}).eps(1e-8).weight_decay(weight_decay);
}

// Speckle noise on the occupancy-style channels.
void augment(torch::Tensor& raster, double rate, uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  auto flip = torch::rand(raster.sizes(), gen) < rate;
  raster = torch::where(flip, 1.0 - raster, raster);
}

torch::Tensor seg_targets(const torch::Tensor& labels, int64_t stride) {
  if (stride == 1) return labels;
  const auto off = stride / 2;
  return labels.slice(1, off, labels.size(1), stride).slice(2, off, labels.size(2), stride);
}

std::pair<torch::Tensor, torch::Tensor> raster_batch(const std::vector<sim::SceneSample>& data,
                                                     const std::vector<int>& idx) {
  std::vector<torch::Tensor> r, s;
  for (int i : idx) {
    const auto& sample = data[static_cast<std::size_t>(i)];
    const auto& spec = sample.raster.spec;
    auto x = torch::from_blob(const_cast<float*>(sample.raster.data.data()),
                              {sim::kNumRasterChannels, spec.height_cells, spec.width_cells}, torch::kFloat);
    auto y = torch::from_blob(const_cast<uint8_t*>(sample.seg_labels.data()), {spec.height_cells, spec.width_cells},
                              torch::kUInt8);
    r.push_back(x.clone());
    s.push_back(y.to(torch::kLong));
  }
  return {torch::stack(r), torch::stack(s)};
}

std::vector<int> range_chunk(int begin, int end) {
  std::vector<int> v;
  for (int i = begin; i < end; ++i) v.push_back(i);
  return v;
}

struct SampleTruth {
  std::vector<double> y;
  std::vector<uint8_t> mask;
};

SampleTruth truth_of(const Batch& b, int64_t i) {
  auto y = b.target_fut[i].to(torch::kDouble).contiguous();
  auto m = b.target_fut_mask[i].to(torch::kUInt8).contiguous();
  SampleTruth t;
  t.y.assign(y.data_ptr<double>(), y.data_ptr<double>() + y.numel());
  t.mask.assign(m.data_ptr<uint8_t>(), m.data_ptr<uint8_t>() + m.numel());
  return t;
}

bool add_sample(metrics::Accumulator& acc, const torch::Tensor& means, const torch::Tensor& probs,
                const SampleTruth& gt) {
  auto mu = means.to(torch::kDouble).contiguous();
  auto p = probs.to(torch::kDouble).contiguous();
  metrics::ModeView view{{mu.data_ptr<double>(), static_cast<std::size_t>(mu.numel())},
                         {p.data_ptr<double>(), static_cast<std::size_t>(p.numel())},
                         static_cast<int>(mu.size(0)),
                         static_cast<int>(mu.size(1))};
  return acc.add(view, {gt.y, gt.mask});
}

// ---- overlay images -------------------------------------------------------

struct Image {
  int w, h;
  std::vector<uint8_t> px;
  Image(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_ * 3, 0) {}
  void set(int x, int y, std::array<uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    auto* p = &px[(static_cast<std::size_t>(y) * w + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  void line(double x0, double y0, double x1, double y1, std::array<uint8_t, 3> c) {
    const int n = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= n; ++i) {
      const double t = static_cast<double>(i) / n;
      set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  }
  void box(double x, double y, int r, std::array<uint8_t, 3> c) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) set(static_cast<int>(x) + dx, static_cast<int>(y) + dy, c);
  }
  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
    out << "P6\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  }
};

constexpr int kPixelsPerCell = 4;

void write_overlay(const fs::path& path, const Batch& b, int64_t i, const torch::Tensor& means,
                   const torch::Tensor& goals) {
  const auto H = b.raster.size(2), W = b.raster.size(3);
  Image img(static_cast<int>(W) * kPixelsPerCell, static_cast<int>(H) * kPixelsPerCell);
  auto r = b.raster[i].contiguous();
  auto at = [&](int c, int64_t row, int64_t col) { return r[c][row][col].item<float>() > 0.5f; };
  for (int64_t row = 0; row < H; ++row) {
    for (int64_t col = 0; col < W; ++col) {
      std::array<uint8_t, 3> c{20, 20, 20};
      if (at(sim::kDrivable, row, col)) c = {70, 70, 70};
      if (at(sim::kLaneMarking, row, col)) c = {200, 200, 200};
      if (at(sim::kRoadBoundary, row, col)) c = {150, 100, 50};
      if (at(sim::kStaticObstacle, row, col)) c = {130, 20, 20};
      if (at(sim::kAgentOccupancy, row, col)) c = {30, 90, 170};
      if (at(sim::kOcclusionMask, row, col)) c = {uint8_t(c[0] / 2), uint8_t(c[1] / 2), uint8_t(c[2] / 2)};
      for (int dy = 0; dy < kPixelsPerCell; ++dy)
        for (int dx = 0; dx < kPixelsPerCell; ++dx)
          img.set(static_cast<int>(col) * kPixelsPerCell + dx,
                  static_cast<int>(H - 1 - row) * kPixelsPerCell + dy, c);
    }
  }
  auto to_px = [&](const torch::Tensor& pts) {
    auto uv = geom::target_to_grid(pts.unsqueeze(0), b.target_in_ego[i].unsqueeze(0), b.range_m).squeeze(0);
    auto x = uv.select(-1, 0) * double(W * kPixelsPerCell);
    auto y = (1.0 - uv.select(-1, 1)) * double(H * kPixelsPerCell);
    return torch::stack({x, y}, -1).to(torch::kDouble).contiguous();
  };
  auto poly = [&](const torch::Tensor& pts, const torch::Tensor& mask, std::array<uint8_t, 3> c) {
    auto p = to_px(pts);
    for (int64_t t = 1; t < p.size(0); ++t) {
      if (mask.defined() && !(mask[t].item<bool>() && mask[t - 1].item<bool>())) continue;
      img.line(p[t - 1][0].item<double>(), p[t - 1][1].item<double>(), p[t][0].item<double>(),
               p[t][1].item<double>(), c);
    }
  };
  static const std::array<std::array<uint8_t, 3>, 5> palette{
      {{255, 200, 0}, {255, 120, 0}, {240, 60, 160}, {160, 90, 255}, {0, 220, 220}}};
  for (int64_t k = 0; k < means.size(0); ++k) {
    poly(means[k], {}, palette[static_cast<std::size_t>(k) % palette.size()]);
  }
  poly(b.target_fut[i], b.target_fut_mask[i], {40, 230, 60});
  auto g = to_px(goals);
  for (int64_t k = 0; k < g.size(0); ++k) img.box(g[k][0].item<double>(), g[k][1].item<double>(), 2, {255, 0, 255});
  auto origin = to_px(torch::zeros({1, 2}));
  img.box(origin[0][0].item<double>(), origin[0][1].item<double>(), 3, {255, 255, 255});
  img.save(path);
}

void write_report_rows(std::ofstream& out, const std::string& model, const std::string& dataset,
                       const metrics::EvalResult& r) {
  const std::pair<const char*, double> rows[] = {{"minADE5", r.min_ade5},   {"minADE10", r.min_ade10},
                                                 {"minFDE1", r.min_fde1},   {"minFDE10", r.min_fde10},
                                                 {"MissRate", r.miss_rate}, {"n_samples", double(r.n_samples)}};
  for (const auto& [name, v] : rows) out << model << "," << dataset << "," << name << "," << fmt(v) << "\n";
}

}  // namespace

model::BevTrajModel make_model(const RunConfig& cfg) {
  torch::manual_seed(cfg.seed);
  return model::BevTrajModel(model::model_options(cfg));
}

ckpt::Meta model_meta(const RunConfig& cfg, int epoch, int64_t step) {
  return {ckpt::Kind::kModel, cfg.model_fields(), cfg.hash(), epoch, step};
}

ckpt::Meta encoder_meta(const RunConfig& cfg, int64_t step) {
  return {ckpt::Kind::kEncoder, cfg.model_fields(), cfg.hash(), 0, step};
}

loss::MultiWeights loss_weights(const RunConfig& cfg) {
  const auto& m = cfg.model;
  return {m.w_nll, m.w_kl, m.w_ent, m.w_aux, m.posterior_tau};
}

Batch make_batch(const std::vector<sim::SceneSample>& data, const std::vector<int>& idx, const RunConfig& cfg,
                 TargetMode mode) {
  std::vector<const sim::SceneSample*> ptrs;
  for (int i : idx) ptrs.push_back(&data.at(static_cast<std::size_t>(i)));
  return collate(ptrs, cfg.model.max_agents, mode);
}

std::vector<int> epoch_order(uint64_t seed, int epoch, int n) {
  std::vector<int> order = range_chunk(0, n);
  std::mt19937_64 rng(data::scene_seed(seed ^ 0x9e3779b97f4a7c15ULL, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainResult train(const RunConfig& cfg, const std::vector<sim::SceneSample>& data, model::BevTrajModel& model,
                  const TrainOptions& options) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "train: empty dataset");
  if (options.out_dir.empty()) throw Error(ErrorCode::kInvalidArgument, "train: out_dir is required");
  const fs::path out(options.out_dir);
  fs::create_directories(out);

  if (!options.encoder_checkpoint.empty()) {
    const auto expected = encoder_meta(cfg, 0);
    ckpt::load(options.encoder_checkpoint, *model->encoder, nullptr, &expected);
  }
  std::vector<torch::Tensor> params;
  if (cfg.model.freeze_encoder) {
    for (auto& p : model->encoder->parameters()) p.set_requires_grad(false);
  }
  for (auto& p : model->parameters()) {
    if (p.requires_grad()) params.push_back(p);
  }
  torch::optim::AdamW opt(params, adamw(cfg.train.lr, cfg.train.weight_decay));

  int epoch0 = 0;
  int64_t step = 0;
  if (!options.resume.empty()) {
    const auto expected = model_meta(cfg, 0, 0);
    const auto meta = ckpt::load(options.resume, *model, &opt, &expected);
    epoch0 = meta.epoch;
    step = meta.step;
  }

  auto log = open_csv(out / "train_log.csv", kTrainLogHeader, !options.resume.empty());
  const int n = static_cast<int>(data.size());
  const int bs = cfg.train.batch_size;
  const int per_epoch = (n + bs - 1) / bs;
  const auto weights = loss_weights(cfg);
  const auto mode = options.target;
  const auto limit = cfg.train.max_steps;

  TrainResult result;
  result.epochs = epoch0;
  model->train();
  for (int epoch = epoch0; epoch < cfg.train.epochs; ++epoch) {
    if (limit > 0 && step >= limit) break;
    const auto order = epoch_order(cfg.seed, epoch, n);
    const int first = static_cast<int>(std::max<int64_t>(0, step - int64_t(epoch) * per_epoch));
    int b = first;
    for (; b < per_epoch; ++b) {
      if (limit > 0 && step >= limit) break;
      std::vector<int> idx(order.begin() + b * bs, order.begin() + std::min(n, (b + 1) * bs));
      auto batch = make_batch(data, idx, cfg, mode);
      if (cfg.train.raster_noise_aug > 0) {
        augment(batch.raster, cfg.train.raster_noise_aug, data::scene_seed(cfg.seed, static_cast<int>(step)));
      }
      const double lr = scheduled_lr(cfg.train, epoch, step);
      set_lr(opt, lr);
      auto pred = model->forward(batch);
      loss::LossReport rep;
      try {
        rep = loss::total_loss(pred, batch, weights);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kNonFinite) {
          std::ofstream dump(out / "nonfinite_batch.txt");
          dump << "step " << step << "\n";
          for (const auto& id : batch.scene_ids) dump << id << "\n";
        }
        throw;
      }
      opt.zero_grad();
      rep.total.backward();
      torch::nn::utils::clip_grad_norm_(params, cfg.train.grad_clip);
      opt.step();
      ++step;
      result.last = rep.values();
      log << step;
      for (double v : result.last) log << "," << fmt(v);
      log << "," << fmt(lr) << "," << epoch << "\n";
      if (!options.quiet && step % 50 == 0) {
        std::cerr << "step " << step << " epoch " << epoch << " loss " << fmt(result.last[0]) << " lr " << fmt(lr)
                  << "\n";
      }
    }
    log.flush();
    if (b < per_epoch) break;
    result.epochs = epoch + 1;
    ckpt::save((out / ("epoch_" + std::to_string(epoch + 1) + ".ckpt")).string(),
               model_meta(cfg, epoch + 1, step), *model, &opt);
    if (const int keep = cfg.train.keep_checkpoints; keep > 0 && epoch + 1 > keep) {
      fs::remove(out / ("epoch_" + std::to_string(epoch + 1 - keep) + ".ckpt"));
    }
    if (options.stop_after_epochs > 0 && result.epochs >= options.stop_after_epochs) break;
  }
  result.steps = step;
  result.checkpoint = (out / "model.ckpt").string();
  ckpt::save(result.checkpoint, model_meta(cfg, result.epochs, step), *model, &opt);
  return result;
}

sim::SceneSample clean_sample(const sim::SceneSample& s) {
  sim::SceneSample c = s;
  auto r = sim::rasterize(s.geometry, s.agents, s.current_index(), s.ego_pose, s.raster.spec,
                          sim::RasterOptions{0.0, false, 0});
  c.raster = std::move(r.raster);
  c.seg_labels = std::move(r.seg_labels);
  return c;
}

double segmentation_accuracy(const RunConfig& cfg, const std::vector<sim::SceneSample>& data,
                             model::BevEncoder& encoder) {
  torch::NoGradGuard guard;
  double correct = 0, total = 0;
  constexpr int kChunk = 16;
  for (int i = 0; i < static_cast<int>(data.size()); i += kChunk) {
    auto [x, y] = raster_batch(data, range_chunk(i, std::min<int>(i + kChunk, static_cast<int>(data.size()))));
    auto logits = encoder->segment(encoder->forward(x));
    auto labels = seg_targets(y, cfg.model.encoder_stride);
    const double cells = static_cast<double>(labels.numel());
    correct += model::segmentation_accuracy(logits, labels) * cells;
    total += cells;
  }
  return total > 0 ? correct / total : 0.0;
}

PretrainResult pretrain(const RunConfig& cfg, const std::vector<sim::SceneSample>& data, model::BevEncoder& encoder,
                        const std::string& out_dir, bool quiet) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "pretrain: empty dataset");
  const fs::path out(out_dir);
  fs::create_directories(out);
  auto log = open_csv(out / "pretrain_log.csv", "step,loss,lr", false);
  torch::optim::AdamW opt(encoder->parameters(), adamw(cfg.train.pretrain_lr, cfg.train.weight_decay));
  const int n = static_cast<int>(data.size());
  const int bs = std::min(cfg.train.pretrain_batch, n);
  int epoch = 0;
  auto order = epoch_order(cfg.seed, epoch, n);
  int cursor = 0;
  encoder->train();
  PretrainResult res;
  for (int64_t step = 0; step < cfg.train.pretrain_steps; ++step) {
    std::vector<int> idx;
    while (static_cast<int>(idx.size()) < bs) {
      if (cursor == n) {
        order = epoch_order(cfg.seed, ++epoch, n);
        cursor = 0;
      }
      idx.push_back(order[static_cast<std::size_t>(cursor++)]);
    }
    auto [x, y] = raster_batch(data, idx);
    auto loss = model::segmentation_loss(encoder->segment(encoder->forward(x)), seg_targets(y, cfg.model.encoder_stride));
    opt.zero_grad();
    loss.backward();
    torch::nn::utils::clip_grad_norm_(encoder->parameters(), cfg.train.grad_clip);
    opt.step();
    const double v = loss.item<double>();
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "pretrain: loss is not finite");
    log << step + 1 << "," << fmt(v) << "," << fmt(cfg.train.pretrain_lr) << "\n";
    if (!quiet && (step + 1) % 50 == 0) std::cerr << "pretrain step " << step + 1 << " loss " << fmt(v) << "\n";
    res.steps = step + 1;
  }
  res.accuracy = segmentation_accuracy(cfg, data, encoder);
  std::vector<sim::SceneSample> clean;
  clean.reserve(data.size());
  for (const auto& s : data) clean.push_back(clean_sample(s));
  res.clean_accuracy = segmentation_accuracy(cfg, clean, encoder);
  res.checkpoint = (out / "encoder.ckpt").string();
  ckpt::save(res.checkpoint, encoder_meta(cfg, res.steps), *encoder);
  return res;
}

metrics::EvalResult constant_velocity(const RunConfig& cfg, const std::vector<sim::SceneSample>& data,
                                      TargetMode mode) {
  metrics::Accumulator acc;
  const int T = cfg.sim.future_steps;
  const int cur = cfg.sim.history_steps - 1;
  auto steps = torch::arange(1, T + 1, torch::kDouble).div(cfg.sim.hz).unsqueeze(-1);
  for (int i = 0; i < static_cast<int>(data.size()); i += cfg.train.batch_size) {
    auto b = make_batch(data, range_chunk(i, std::min<int>(i + cfg.train.batch_size, static_cast<int>(data.size()))),
                        cfg, mode);
    for (int64_t s = 0; s < b.size(); ++s) {
      auto st = b.hist[s][0][cur].to(torch::kDouble);
      auto xy = st.narrow(0, 0, 2) + steps * st.narrow(0, 3, 2);
      add_sample(acc, xy.unsqueeze(0), torch::ones({1}, torch::kDouble), truth_of(b, s));
    }
  }
  return acc.result();
}

EvalReport evaluate(const RunConfig& cfg, const std::vector<sim::SceneSample>& data, model::BevTrajModel& model,
                    const EvalOptions& options) {
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "eval: empty dataset");
  torch::NoGradGuard guard;
  model->eval();
  metrics::Accumulator final_acc;
  std::vector<metrics::Accumulator> layer_acc;
  fs::path out;
  if (!options.out_dir.empty()) {
    out = options.out_dir;
    fs::create_directories(out / "plots");
  }
  int plotted = 0;
  const int n = static_cast<int>(data.size());
  for (int i = 0; i < n; i += cfg.train.batch_size) {
    auto b = make_batch(data, range_chunk(i, std::min(n, i + cfg.train.batch_size)), cfg, options.target);
    auto pred = model->forward(b);
    if (layer_acc.empty()) layer_acc.resize(pred.layers.size());
    for (int64_t s = 0; s < b.size(); ++s) {
      const auto gt = truth_of(b, s);
      for (std::size_t l = 0; l < pred.layers.size(); ++l) {
        const auto& h = pred.layers[l];
        auto means = h.means()[s];
        if (options.oracle) means = b.target_fut[s].unsqueeze(0).expand_as(means);
        const auto probs = h.probs()[s];
        add_sample(layer_acc[l], means, probs, gt);
        if (l + 1 == pred.layers.size()) {
          add_sample(final_acc, means, probs, gt);
          if (!out.empty() && plotted < options.plots) {
            write_overlay(out / "plots" / (b.scene_ids[static_cast<std::size_t>(s)] + ".ppm"), b, s, means,
                          pred.goals.goals[s]);
            ++plotted;
          }
        }
      }
    }
  }
  EvalReport rep;
  rep.final = final_acc.result();
  for (const auto& a : layer_acc) rep.per_layer.push_back(a.result());
  rep.const_vel = constant_velocity(cfg, data, options.target);

  if (!out.empty()) {
    std::ofstream m(out / "metrics.csv", std::ios::trunc);
    if (!m) throw Error(ErrorCode::kIo, "cannot write metrics.csv");
    m << kMetricsHeader << "\n";
    const auto& r = rep.final;
    m << fmt(r.min_ade5) << "," << fmt(r.min_ade10) << "," << fmt(r.min_fde1) << "," << fmt(r.min_fde10) << ","
      << fmt(r.miss_rate) << "\n";
    std::ofstream rr(out / "report.csv", std::ios::trunc);
    rr << "model,dataset,metric,value\n";
    write_report_rows(rr, options.model_name, options.dataset_name, rep.final);
    for (std::size_t l = 0; l < rep.per_layer.size(); ++l) {
      const auto name = l == 0 ? std::string("itp") : "itr" + std::to_string(l);
      write_report_rows(rr, options.model_name + "/" + name, options.dataset_name, rep.per_layer[l]);
    }
    write_report_rows(rr, "const_vel", options.dataset_name, rep.const_vel);
  }
  return rep;
}

}  // namespace bevtraj::train
