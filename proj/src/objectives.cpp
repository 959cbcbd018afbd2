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

#include "bevtraj/objectives.hpp"

#include <cmath>

#include "bevtraj/error.hpp"

namespace bevtraj::loss {

namespace {

torch::Tensor masked_mean(const torch::Tensor& v, const torch::Tensor& mask) {
  auto m = mask.to(v.dtype());
  return (v * m).sum(-1) / m.sum(-1).clamp_min(1.0);
}

torch::Tensor gather_mode(const torch::Tensor& x, const torch::Tensor& mode) {
  // x: [N, K, ...] -> [N, ...]
  auto idx = mode.view({-1, 1});
  for (int64_t d = 2; d < x.dim(); ++d) idx = idx.unsqueeze(-1);
  std::vector<int64_t> shape(x.sizes().begin(), x.sizes().end());
  shape[1] = 1;
  return x.gather(1, idx.expand(shape)).squeeze(1);
}

}  // namespace

torch::Tensor goal_loss(const torch::Tensor& goals, const torch::Tensor& g) {
  auto d2 = (goals - g.unsqueeze(1)).pow(2).sum(-1);
  return std::get<0>(d2.min(-1)).mean();
}

torch::Tensor smooth_l1(const torch::Tensor& a, const torch::Tensor& b) {
  auto diff = (a - b).abs();
  return torch::where(diff < 1.0, 0.5 * diff.pow(2), diff - 0.5);
}

torch::Tensor disp_loss(const torch::Tensor& disp, const torch::Tensor& goals, const torch::Tensor& g) {
  auto dist = (goals.detach() - g.unsqueeze(1)).norm(2, -1);
  return smooth_l1(disp, dist).mean();
}

DenseLoss dense_loss(const torch::Tensor& pred, const torch::Tensor& y, const torch::Tensor& mask) {
  auto m = mask.unsqueeze(-1).expand_as(pred).to(pred.dtype());
  const double count = m.sum().item<double>();
  if (count == 0.0) return {(pred * 0.0).sum(), true};
  return {((pred - y).abs() * m).sum() / count, false};
}

torch::Tensor gmm_log_density(const torch::Tensor& gmm, const torch::Tensor& y) {
  auto sx = gmm.select(-1, 2), sy = gmm.select(-1, 3), rho = gmm.select(-1, 4);
  auto dx = (y.select(-1, 0) - gmm.select(-1, 0)) / sx;
  auto dy = (y.select(-1, 1) - gmm.select(-1, 1)) / sy;
  auto one_m = 1.0 - rho.pow(2);
  auto z = dx.pow(2) - 2.0 * rho * dx * dy + dy.pow(2);
  return -std::log(2.0 * M_PI) - torch::log(sx) - torch::log(sy) - 0.5 * torch::log(one_m) - z / (2.0 * one_m);
}

torch::Tensor gmm_nll(const torch::Tensor& gmm, const torch::Tensor& y, const torch::Tensor& mask,
                      const torch::Tensor& log_q) {
  auto logn = gmm_log_density(gmm, y.unsqueeze(1));
  auto valid = mask.unsqueeze(1).expand_as(logn).to(gmm.dtype());
  auto steps = mask.sum(-1).to(gmm.dtype());
  return (-torch::logsumexp(log_q + (logn * valid).sum(-1), -1) / steps).mean();
}

torch::Tensor gmm_entropy(const torch::Tensor& gmm) {
  auto rho = gmm.select(-1, 4);
  return std::log(2.0 * M_PI * M_E) + torch::log(gmm.select(-1, 2)) + torch::log(gmm.select(-1, 3)) +
         0.5 * torch::log(1.0 - rho.pow(2));
}

torch::Tensor last_valid_index(const torch::Tensor& mask) {
  const auto T = mask.size(-1);
  auto idx = torch::arange(T, torch::kLong).expand_as(mask);
  auto last = std::get<0>(torch::where(mask, idx, torch::full_like(idx, -1)).max(-1));
  return last;
}

torch::Tensor best_mode(const torch::Tensor& fde) {
  const auto k = fde.size(-1);
  auto lo = std::get<0>(fde.min(-1, true));
  auto idx = torch::arange(k, torch::kLong).expand(fde.sizes());
  return std::get<0>(torch::where(fde == lo, idx, torch::full_like(idx, k)).min(-1));
}

torch::Tensor final_positions(const torch::Tensor& fut, const torch::Tensor& mask) {
  auto last = last_valid_index(mask);
  if ((last < 0).any().item<bool>()) {
    throw Error(ErrorCode::kInvalidArgument, "target future has no valid step");
  }
  return fut.gather(1, last.view({-1, 1, 1}).expand({fut.size(0), 1, 2})).squeeze(1);
}

MultiLoss layer_loss(const model::Hypotheses& hyp, const torch::Tensor& y, const torch::Tensor& mask,
                     double tau, int layer) {
  const auto& gmm = hyp.gmm;
  const auto n = gmm.size(0), k = gmm.size(1);
  auto mu = gmm.narrow(-1, 0, 2);
  auto last = last_valid_index(mask);
  if ((last < 0).any().item<bool>()) {
    throw Error(ErrorCode::kInvalidArgument, "multi_loss: sample without valid future step");
  }
  auto mu_last = mu.gather(2, last.view({n, 1, 1, 1}).expand({n, k, 1, 2})).squeeze(2);
  auto y_last = y.gather(1, last.view({n, 1, 1}).expand({n, 1, 2}));
  auto fde = (mu_last.detach() - y_last).norm(2, -1);
  auto log_q = torch::log_softmax(-fde / tau, -1);
  auto q = log_q.exp();

  auto logn = gmm_log_density(gmm, y.unsqueeze(1));
  auto valid = mask.unsqueeze(1).expand_as(logn);
  auto finite = torch::isfinite(logn) | ~valid;
  if (!finite.all().item<bool>()) {
    auto bad = (~finite).any(-1).any(0).nonzero();
    const auto mode = bad.numel() > 0 ? bad[0][0].item<int64_t>() : -1;
    throw Error(ErrorCode::kNonFinite,
                "GMM density not finite at layer " + std::to_string(layer) + ", mode " + std::to_string(mode));
  }
  MultiLoss out;
  out.nll = gmm_nll(gmm, y, mask, log_q);
  out.kl = (q * (log_q - torch::log_softmax(hyp.logits, -1))).sum(-1).mean();
  auto best = best_mode(fde);
  out.ent = masked_mean(gather_mode(gmm_entropy(gmm), best), mask).mean();
  auto err = (gather_mode(mu, best) - y).norm(2, -1);
  out.aux = masked_mean(err, mask).mean();
  return out;
}

MultiLoss multi_loss(const std::vector<model::Hypotheses>& layers, const torch::Tensor& y,
                     const torch::Tensor& mask, const MultiWeights& w) {
  if (layers.empty()) throw Error(ErrorCode::kInvalidArgument, "multi_loss: no decoder layer");
  MultiLoss acc;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto c = layer_loss(layers[l], y, mask, w.tau, static_cast<int>(l));
    if (l == 0) {
      acc = c;
    } else {
      acc.nll = acc.nll + c.nll;
      acc.kl = acc.kl + c.kl;
      acc.ent = acc.ent + c.ent;
      acc.aux = acc.aux + c.aux;
    }
  }
  const double inv = 1.0 / static_cast<double>(layers.size());
  acc.nll = acc.nll * (w.nll * inv);
  acc.kl = acc.kl * (w.kl * inv);
  acc.ent = acc.ent * (w.ent * inv);
  acc.aux = acc.aux * (w.aux * inv);
  return acc;
}

std::vector<double> LossReport::values() const {
  return {total.item<double>(),     goal.item<double>(),     disp.item<double>(),     dense.item<double>(),
          parts.nll.item<double>(), parts.kl.item<double>(), parts.ent.item<double>(), parts.aux.item<double>()};
}

LossReport total_loss(const model::Prediction& pred, const Batch& batch, const MultiWeights& w) {
  LossReport r;
  auto g = final_positions(batch.target_fut, batch.target_fut_mask);
  r.goal = goal_loss(pred.goals.goals, g);
  r.disp = disp_loss(pred.goals.disp, pred.goals.goals, g);
  auto dense = dense_loss(pred.dense, batch.fut, batch.fut_mask);
  r.dense = dense.value;
  r.dense_empty = dense.empty;
  r.parts = multi_loss(pred.layers, batch.target_fut, batch.target_fut_mask, w);
  r.multi = r.parts.total();
  r.total = r.goal + r.disp + r.dense + r.multi;
  if (!std::isfinite(r.total.item<double>())) {
    throw Error(ErrorCode::kNonFinite, "total loss is not finite");
  }
  return r;
}

}  // namespace bevtraj::loss
