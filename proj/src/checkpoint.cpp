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

#include "bevtraj/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <zlib.h>

#include "bevtraj/error.hpp"

namespace bevtraj::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

enum class DType : uint8_t { kF32 = 0, kI64 = 1 };

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void str(const std::string& s) {
    put<uint32_t>(static_cast<uint32_t>(s.size()));
    buf_ += s;
  }
  void tensor(const std::string& name, const torch::Tensor& t) {
    str(name);
    auto c = t.detach().contiguous();
    const bool is_int = c.scalar_type() == torch::kLong;
    if (!is_int) c = c.to(torch::kFloat);
    put<uint8_t>(static_cast<uint8_t>(is_int ? DType::kI64 : DType::kF32));
    put<uint32_t>(static_cast<uint32_t>(c.dim()));
    for (auto d : c.sizes()) put<int64_t>(d);
    bytes(c.data_ptr(), static_cast<std::size_t>(c.numel()) * c.element_size());
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::size_t end, std::string path) : d_(data), end_(end), path_(std::move(path)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, d_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<uint32_t>();
    need(n);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  torch::Tensor tensor(std::string* name) {
    *name = str();
    const auto dtype = static_cast<DType>(get<uint8_t>());
    const auto ndim = get<uint32_t>();
    if (ndim > 8) throw Error(ErrorCode::kParse, path_ + ": bad tensor rank for " + *name);
    std::vector<int64_t> shape(ndim);
    int64_t numel = 1;
    for (auto& s : shape) {
      s = get<int64_t>();
      if (s < 0) throw Error(ErrorCode::kParse, path_ + ": negative dimension for " + *name);
      numel *= s;
    }
    const auto kind = dtype == DType::kI64 ? torch::kLong : torch::kFloat;
    auto t = torch::empty(shape, torch::TensorOptions().dtype(kind));
    const auto nbytes = static_cast<std::size_t>(numel) * t.element_size();
    need(nbytes);
    std::memcpy(t.data_ptr(), d_.data() + pos_, nbytes);
    pos_ += nbytes;
    return t;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error(ErrorCode::kTruncated, path_ + ": truncated checkpoint");
  }
  const std::string& d_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

uint32_t crc_of(const std::string& s, std::size_t n) {
  return static_cast<uint32_t>(crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(n)));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<torch::Tensor> optimizer_params(torch::optim::AdamW& opt) {
  std::vector<torch::Tensor> out;
  for (auto& g : opt.param_groups()) {
    for (auto& p : g.params()) out.push_back(p);
  }
  return out;
}

void put_meta(Writer& w, const Meta& m) {
  w.put<uint32_t>(static_cast<uint32_t>(m.kind));
  w.str(m.config_hash);
  w.put<int32_t>(m.epoch);
  w.put<int64_t>(m.step);
  w.put<uint32_t>(static_cast<uint32_t>(m.fields.size()));
  for (const auto& [k, v] : m.fields) {
    w.str(k);
    w.str(v);
  }
}

// Validates magic, version and CRC; returns a reader positioned after the
// version field.
Meta open(const std::string& data, const std::string& path, std::unique_ptr<Reader>* out) {
  if (data.size() < 8 || std::memcmp(data.data(), kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::kBadMagic, path + ": not a checkpoint");
  }
  if (data.size() < 12) throw Error(ErrorCode::kTruncated, path + ": truncated checkpoint");
  uint32_t version;
  std::memcpy(&version, data.data() + 8, 4);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch, path + ": checkpoint version " + std::to_string(version));
  }
  uint64_t total = 0;
  if (data.size() >= 20) std::memcpy(&total, data.data() + 12, 8);
  if (data.size() < 24 || data.size() < total) throw Error(ErrorCode::kTruncated, path + ": truncated checkpoint");
  const auto body = data.size() - 4;
  uint32_t stored;
  std::memcpy(&stored, data.data() + body, 4);
  if (stored != crc_of(data, body)) throw Error(ErrorCode::kChecksumMismatch, path + ": checksum mismatch");
  auto r = std::make_unique<Reader>(data, body, path);
  r->get<uint64_t>();
  r->get<uint32_t>();
  r->get<uint64_t>();
  Meta m;
  m.kind = static_cast<Kind>(r->get<uint32_t>());
  m.config_hash = r->str();
  m.epoch = r->get<int32_t>();
  m.step = r->get<int64_t>();
  const auto nf = r->get<uint32_t>();
  for (uint32_t i = 0; i < nf; ++i) {
    auto k = r->str();
    m.fields[k] = r->str();
  }
  *out = std::move(r);
  return m;
}

}  // namespace

std::map<std::string, std::string> compatibility_fields(Kind kind, const std::map<std::string, std::string>& all) {
  static const char* encoder_keys[] = {"model.d_model", "model.encoder_blocks", "model.encoder_stride"};
  static const char* sim_keys[] = {"sim.grid_cells", "sim.history_steps", "sim.future_steps", "sim.range_m"};
  std::map<std::string, std::string> out;
  auto take = [&](const std::string& k) {
    if (auto it = all.find(k); it != all.end()) out[k] = it->second;
  };
  if (kind == Kind::kEncoder) {
    for (auto* k : encoder_keys) take(k);
    take("sim.grid_cells");
    return out;
  }
  for (const auto& [k, v] : all) {
    if (k.rfind("model.", 0) == 0 && k.rfind("model.w_", 0) != 0 && k != "model.posterior_tau" &&
        k != "model.freeze_encoder") {
      out[k] = v;
    }
  }
  for (auto* k : sim_keys) take(k);
  return out;
}

void save(const std::string& path, const Meta& meta, const torch::nn::Module& module, torch::optim::AdamW* optimizer) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.put<uint32_t>(kCheckpointVersion);
  w.put<uint64_t>(0);  // total file size, patched below
  put_meta(w, meta);

  const auto params = module.named_parameters(true);
  const auto buffers = module.named_buffers(true);
  uint32_t count = static_cast<uint32_t>(params.size() + buffers.size());
  std::vector<std::pair<std::string, torch::Tensor>> opt_blobs;
  if (optimizer) {
    const auto& state = optimizer->state();
    const auto ps = optimizer_params(*optimizer);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto it = state.find(ps[i].unsafeGetTensorImpl());
      if (it == state.end()) continue;
      const auto& s = static_cast<const torch::optim::AdamWParamState&>(*it->second);
      const auto prefix = "optim/" + std::to_string(i) + "/";
      opt_blobs.emplace_back(prefix + "step", torch::tensor({s.step()}, torch::kLong));
      opt_blobs.emplace_back(prefix + "exp_avg", s.exp_avg());
      opt_blobs.emplace_back(prefix + "exp_avg_sq", s.exp_avg_sq());
    }
  }
  count += static_cast<uint32_t>(opt_blobs.size());
  w.put<uint32_t>(count);
  for (const auto& p : params) w.tensor("param/" + p.key(), p.value());
  for (const auto& b : buffers) w.tensor("buffer/" + b.key(), b.value());
  for (const auto& [name, t] : opt_blobs) w.tensor(name, t);
  auto& buf = w.buffer();
  const uint64_t total = buf.size() + 4;
  std::memcpy(buf.data() + 12, &total, 8);
  const auto crc = crc_of(buf, buf.size());
  buf.append(reinterpret_cast<const char*>(&crc), 4);

  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error(ErrorCode::kIo, "cannot rename " + tmp);
}

Meta read_meta(const std::string& path) {
  const auto data = read_file(path);
  std::unique_ptr<Reader> r;
  return open(data, path, &r);
}

Meta load(const std::string& path, torch::nn::Module& module, torch::optim::AdamW* optimizer, const Meta* expected) {
  const auto data = read_file(path);
  std::unique_ptr<Reader> r;
  auto meta = open(data, path, &r);
  if (expected) {
    if (expected->kind != meta.kind) {
      throw Error(ErrorCode::kCheckpointMismatch, path + ": field 'kind' differs");
    }
    const auto want = compatibility_fields(meta.kind, expected->fields);
    const auto have = compatibility_fields(meta.kind, meta.fields);
    for (const auto& [k, v] : want) {
      auto it = have.find(k);
      if (it == have.end() || it->second != v) {
        throw Error(ErrorCode::kCheckpointMismatch, path + ": field '" + k + "' is " +
                                                        (it == have.end() ? std::string("missing") : it->second) +
                                                        ", config has " + v);
      }
    }
  }

  std::map<std::string, torch::Tensor> blobs;
  const auto count = r->get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name;
    auto t = r->tensor(&name);
    blobs[name] = t;
  }
  if (!r->done()) throw Error(ErrorCode::kParse, path + ": trailing bytes before checksum");

  torch::NoGradGuard guard;
  auto assign = [&](const std::string& name, torch::Tensor& dst) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw Error(ErrorCode::kCheckpointMismatch, path + ": missing tensor " + name);
    if (it->second.sizes() != dst.sizes()) {
      throw Error(ErrorCode::kCheckpointMismatch, path + ": shape mismatch for " + name);
    }
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters(true)) assign("param/" + p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign("buffer/" + b.key(), b.value());

  if (optimizer) {
    auto& state = optimizer->state();
    const auto ps = optimizer_params(*optimizer);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto prefix = "optim/" + std::to_string(i) + "/";
      auto st = blobs.find(prefix + "step");
      if (st == blobs.end()) continue;
      auto s = std::make_unique<torch::optim::AdamWParamState>();
      s->step(st->second.item<int64_t>());
      s->exp_avg(blobs.at(prefix + "exp_avg").clone());
      s->exp_avg_sq(blobs.at(prefix + "exp_avg_sq").clone());
      state[ps[i].unsafeGetTensorImpl()] = std::move(s);
    }
  }
  return meta;
}

}  // namespace bevtraj::ckpt
