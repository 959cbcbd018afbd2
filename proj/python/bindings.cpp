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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <torch/torch.h>

#include "bevtraj/checkpoint.hpp"
#include "bevtraj/config.hpp"
#include "bevtraj/dataset.hpp"
#include "bevtraj/error.hpp"
#include "bevtraj/gradcheck.hpp"
#include "bevtraj/metrics.hpp"
#include "bevtraj/sampling.hpp"
#include "bevtraj/train.hpp"

namespace py = pybind11;
using namespace bevtraj;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

RunConfig config_from(const std::string& text) {
  auto cfg = parse_config(text);
  cfg.validate();
  return cfg;
}

torch::Tensor to_tensor(const Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kDouble).clone();
}

Array to_array(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  Array out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * static_cast<std::size_t>(c.numel()));
  return out;
}

py::dict scene_dict(const sim::SceneSample& s) {
  py::dict d;
  d["scene_id"] = s.scene_id;
  d["seed"] = s.seed;
  d["ego_id"] = s.ego_id;
  d["target_id"] = s.target_id;
  const auto& g = s.raster.spec;
  py::array_t<float> raster({static_cast<py::ssize_t>(s.raster.data.size() / (g.height_cells * g.width_cells)),
                             static_cast<py::ssize_t>(g.height_cells), static_cast<py::ssize_t>(g.width_cells)});
  std::memcpy(raster.mutable_data(), s.raster.data.data(), sizeof(float) * s.raster.data.size());
  d["raster"] = raster;
  py::array_t<uint8_t> seg({static_cast<py::ssize_t>(g.height_cells), static_cast<py::ssize_t>(g.width_cells)});
  std::memcpy(seg.mutable_data(), s.seg_labels.data(), s.seg_labels.size());
  d["seg"] = seg;
  py::dict agents;
  for (const auto& a : s.agents) {
    Array st({static_cast<py::ssize_t>(a.states.size()), py::ssize_t{7}});
    auto* p = st.mutable_data();
    for (const auto& x : a.states) {
      *p++ = x.t;
      *p++ = x.x;
      *p++ = x.y;
      *p++ = x.yaw;
      *p++ = x.vx;
      *p++ = x.vy;
      *p++ = x.valid ? 1.0 : 0.0;
    }
    agents[py::int_(a.agent_id)] = st;
  }
  d["agents"] = agents;
  return d;
}

struct PredictionView {
  metrics::ModeView pred;
  metrics::TruthView truth;
  std::vector<uint8_t> mask;
};

PredictionView views(const Array& traj, const Array& probs, const Array& y,
                     const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& mask) {
  if (traj.ndim() != 3 || traj.shape(2) != 2) throw Error(ErrorCode::kInvalidArgument, "traj must be [K, T, 2]");
  const auto k = static_cast<int>(traj.shape(0)), t = static_cast<int>(traj.shape(1));
  if (probs.size() != k || y.size() != 2 * t || mask.size() != t) {
    throw Error(ErrorCode::kInvalidArgument, "probs [K], y [T, 2] and mask [T] must match traj");
  }
  PredictionView v;
  v.mask.assign(mask.data(), mask.data() + t);
  v.pred = {{traj.data(), static_cast<std::size_t>(traj.size())}, {probs.data(), static_cast<std::size_t>(k)}, k, t};
  v.truth = {{y.data(), static_cast<std::size_t>(y.size())}, v.mask};
  return v;
}

py::dict result_dict(const metrics::EvalResult& r) {
  py::dict d;
  d["minADE5"] = r.min_ade5;
  d["minADE10"] = r.min_ade10;
  d["minFDE1"] = r.min_fde1;
  d["minFDE10"] = r.min_fde10;
  d["MissRate"] = r.miss_rate;
  d["samples"] = r.n_samples;
  d["skipped"] = r.n_skipped;
  return d;
}

}  // namespace

PYBIND11_MODULE(_bevtraj, m) {
  m.doc() = "BEVTraj: deformable BEV aggregation and iterative GMM trajectory decoding";

  py::register_exception<Error>(m, "BevTrajError", PyExc_RuntimeError);

  m.def("default_config", [] { return RunConfig{}.to_text(); }, "Canonical text of the default configuration.");
  m.def(
      "config_hash", [](const std::string& text) { return config_from(text).hash(); }, py::arg("text"));
  m.def(
      "load_config", [](const std::string& path) { return load_config(path).to_text(); }, py::arg("path"));

  m.def(
      "generate_scene",
      [](uint64_t seed, const std::string& text) { return scene_dict(sim::generate_scene(seed, config_from(text).sim)); },
      py::arg("seed"), py::arg("config") = "");
  m.def(
      "generate_dataset",
      [](uint64_t seed, int n, const std::string& out, const std::string& text) {
        const auto data = data::generate_dataset(seed, n, config_from(text).sim);
        data::write_dataset(data, out);
        return static_cast<int>(data.size());
      },
      py::arg("seed"), py::arg("n"), py::arg("out"), py::arg("config") = "");
  m.def(
      "read_dataset",
      [](const std::string& dir) {
        py::list out;
        for (const auto& s : data::read_dataset(dir)) out.append(scene_dict(s));
        return out;
      },
      py::arg("dir"));

  m.def(
      "bilinear_sample",
      [](const Array& grid, const Array& points) { return to_array(geom::bilinear_sample(to_tensor(grid), to_tensor(points))); },
      py::arg("grid"), py::arg("points"), "grid [N, C, H, W], points [N, M, 2] in [0, 1]^2 -> [N, M, C]");

  m.def(
      "min_ade",
      [](const Array& traj, const Array& probs, const Array& y,
         const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& mask, int k) {
        auto v = views(traj, probs, y, mask);
        return metrics::min_ade(v.pred, v.truth, k);
      },
      py::arg("traj"), py::arg("probs"), py::arg("y"), py::arg("mask"), py::arg("k"));
  m.def(
      "min_fde",
      [](const Array& traj, const Array& probs, const Array& y,
         const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& mask, int k) {
        auto v = views(traj, probs, y, mask);
        return metrics::min_fde(v.pred, v.truth, k);
      },
      py::arg("traj"), py::arg("probs"), py::arg("y"), py::arg("mask"), py::arg("k"));
  m.def(
      "miss_rate", [](const std::vector<double>& fdes, double thr) { return metrics::miss_rate(fdes, thr); },
      py::arg("fdes"), py::arg("threshold") = 2.0);

  m.def(
      "gradcheck",
      [](uint64_t seed, const std::string& corrupt) {
        std::vector<gradcheck::CheckResult> r;
        {
          py::gil_scoped_release release;
          testing::set_corrupted_gradient(corrupt);
          r = gradcheck::run_all(seed);
          testing::set_corrupted_gradient("");
        }
        py::list out;
        for (const auto& c : r) out.append(py::make_tuple(c.name, c.max_rel_error, c.pass));
        return out;
      },
      py::arg("seed") = 0, py::arg("corrupt") = "");

  m.def(
      "pretrain",
      [](const std::string& text, const std::string& dataset, const std::string& out) {
        const auto cfg = config_from(text);
        const auto data = data::read_dataset(dataset);
        auto model = train::make_model(cfg);
        train::PretrainResult r;
        {
          py::gil_scoped_release release;
          r = train::pretrain(cfg, data, model->encoder, out, true);
        }
        py::dict d;
        d["steps"] = r.steps;
        d["accuracy"] = r.accuracy;
        d["clean_accuracy"] = r.clean_accuracy;
        d["checkpoint"] = r.checkpoint;
        return d;
      },
      py::arg("config"), py::arg("dataset"), py::arg("out"));
  m.def(
      "train",
      [](const std::string& text, const std::string& dataset, const std::string& out, const std::string& resume) {
        const auto cfg = config_from(text);
        const auto data = data::read_dataset(dataset);
        auto model = train::make_model(cfg);
        train::TrainOptions o;
        o.out_dir = out;
        o.resume = resume;
        o.quiet = true;
        o.target = parse_target_mode(cfg.train.target);
        train::TrainResult r;
        {
          py::gil_scoped_release release;
          r = train::train(cfg, data, model, o);
        }
        py::dict d;
        d["epochs"] = r.epochs;
        d["steps"] = r.steps;
        d["checkpoint"] = r.checkpoint;
        d["last"] = r.last;
        return d;
      },
      py::arg("config"), py::arg("dataset"), py::arg("out"), py::arg("resume") = "");
  m.def(
      "evaluate",
      [](const std::string& text, const std::string& checkpoint, const std::string& dataset, const std::string& out) {
        const auto cfg = config_from(text);
        const auto data = data::read_dataset(dataset);
        auto model = train::make_model(cfg);
        const auto expected = train::model_meta(cfg, 0, 0);
        ckpt::load(checkpoint, *model, nullptr, &expected);
        train::EvalOptions o;
        o.out_dir = out;
        o.target = parse_target_mode(cfg.train.target);
        train::EvalReport r;
        {
          py::gil_scoped_release release;
          r = train::evaluate(cfg, data, model, o);
        }
        py::dict d = result_dict(r.final);
        py::list layers;
        for (const auto& l : r.per_layer) layers.append(result_dict(l));
        d["per_layer"] = layers;
        d["const_vel"] = result_dict(r.const_vel);
        return d;
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("dataset"), py::arg("out") = "");
  m.def(
      "predict",
      [](const std::string& text, const std::string& checkpoint, const std::string& dataset, int index) {
        const auto cfg = config_from(text);
        const auto data = data::read_dataset(dataset);
        if (index < 0 || index >= static_cast<int>(data.size())) throw py::index_error("scene index out of range");
        auto model = train::make_model(cfg);
        if (!checkpoint.empty()) {
          const auto expected = train::model_meta(cfg, 0, 0);
          ckpt::load(checkpoint, *model, nullptr, &expected);
        }
        model->eval();
        torch::NoGradGuard ng;
        auto b = train::make_batch(data, {index}, cfg, parse_target_mode(cfg.train.target));
        auto p = model->forward(b);
        const auto& h = p.final_layer();
        py::dict d;
        d["means"] = to_array(h.means()[0]);
        d["probs"] = to_array(h.probs()[0]);
        d["goals"] = to_array(p.goals.goals[0]);
        d["truth"] = to_array(b.target_fut[0]);
        d["truth_mask"] = to_array(b.target_fut_mask[0].to(torch::kDouble));
        return d;
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("dataset"), py::arg("index") = 0);
}
