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

#include "bevtraj/dataset.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "bevtraj/error.hpp"

namespace bevtraj::data {

using sim::AgentKind;
using sim::AgentTrack;
using sim::SceneSample;

namespace {

static_assert(std::endian::native == std::endian::little, "record encoding assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const char* raw(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw Error(ErrorCode::kTruncated, "record ends at byte " + std::to_string(bytes_.size()) +
                                             ", need " + std::to_string(pos_ + n));
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParse, "bad number '" + s + "'");
  }
  return v;
}

long long parse_int(const std::string& s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParse, "bad integer '" + s + "'");
  }
  return v;
}

uint64_t parse_u64(const std::string& s) {
  uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParse, "bad integer '" + s + "'");
  }
  return v;
}

AgentKind parse_kind(const std::string& s) {
  if (s == "vehicle") return AgentKind::kVehicle;
  if (s == "pedestrian") return AgentKind::kPedestrian;
  if (s == "cyclist") return AgentKind::kCyclist;
  throw Error(ErrorCode::kParse, "unknown agent kind '" + s + "'");
}

sim::Topology parse_topology(const std::string& s) {
  for (auto t : {sim::Topology::kStraight, sim::Topology::kCurve, sim::Topology::kThreeWay,
                 sim::Topology::kFourWay}) {
    if (s == sim::topology_name(t)) return t;
  }
  throw Error(ErrorCode::kParse, "unknown topology '" + s + "'");
}

void write_polyline(std::ostringstream& os, const char* tag, const sim::Polyline& line) {
  os << "polyline " << tag << ' ' << line.points.size();
  for (const auto& p : line.points) os << ' ' << num(p.x) << ' ' << num(p.y);
  os << '\n';
}

std::string encode_text(const SceneSample& s) {
  std::ostringstream os;
  os << "scene_id " << s.scene_id << '\n';
  os << "seed " << s.seed << '\n';
  os << "hz " << num(s.hz) << '\n';
  os << "ego_pose " << num(s.ego_pose.x) << ' ' << num(s.ego_pose.y) << ' ' << num(s.ego_pose.yaw) << '\n';
  os << "ego_id " << s.ego_id << '\n';
  os << "target_id " << s.target_id << '\n';
  os << "topology " << sim::topology_name(s.geometry.topology) << '\n';
  os << "lane_width " << num(s.geometry.lane_width) << '\n';
  for (const auto& l : s.geometry.lanes) write_polyline(os, "lane", l);
  for (const auto& l : s.geometry.sidewalks) write_polyline(os, "sidewalk", l);
  for (const auto& l : s.geometry.medians) write_polyline(os, "median", l);
  for (const auto& q : s.geometry.obstacles) {
    os << "obstacle";
    for (const auto& p : q) os << ' ' << num(p.x) << ' ' << num(p.y);
    os << '\n';
  }
  for (const auto& a : s.agents) {
    os << "agent " << a.agent_id << ' ' << sim::kind_name(a.kind) << ' ' << num(a.length) << ' '
       << num(a.width) << ' ' << a.states.size() << '\n';
    for (const auto& st : a.states) {
      os << "state " << num(st.t) << ' ' << num(st.x) << ' ' << num(st.y) << ' ' << num(st.yaw) << ' '
         << num(st.vx) << ' ' << num(st.vy) << ' ' << (st.valid ? 1 : 0) << '\n';
    }
  }
  os << "end\n";
  return os.str();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

void decode_text(const std::string& text, SceneSample& s) {
  std::istringstream is(text);
  std::string line;
  AgentTrack* agent = nullptr;
  std::size_t expected_states = 0;
  bool ended = false;
  int line_no = 0;
  auto need = [&](const std::vector<std::string>& f, std::size_t n) {
    if (f.size() != n) {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": expected " +
                                         std::to_string(n) + " fields, got " + std::to_string(f.size()));
    }
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto f = split(line);
    if (f.empty()) continue;
    const std::string& key = f[0];
    if (key == "scene_id") {
      need(f, 2);
      s.scene_id = f[1];
    } else if (key == "seed") {
      need(f, 2);
      s.seed = parse_u64(f[1]);
    } else if (key == "hz") {
      need(f, 2);
      s.hz = parse_double(f[1]);
    } else if (key == "ego_pose") {
      need(f, 4);
      s.ego_pose = geom::Pose2(parse_double(f[1]), parse_double(f[2]), parse_double(f[3]));
    } else if (key == "ego_id") {
      need(f, 2);
      s.ego_id = static_cast<int>(parse_int(f[1]));
    } else if (key == "target_id") {
      need(f, 2);
      s.target_id = static_cast<int>(parse_int(f[1]));
    } else if (key == "topology") {
      need(f, 2);
      s.geometry.topology = parse_topology(f[1]);
    } else if (key == "lane_width") {
      need(f, 2);
      s.geometry.lane_width = parse_double(f[1]);
    } else if (key == "polyline") {
      if (f.size() < 3) need(f, 3);
      const auto n = static_cast<std::size_t>(parse_int(f[2]));
      need(f, 3 + 2 * n);
      sim::Polyline pl;
      for (std::size_t k = 0; k < n; ++k) pl.points.push_back({parse_double(f[3 + 2 * k]), parse_double(f[4 + 2 * k])});
      if (f[1] == "lane") s.geometry.lanes.push_back(std::move(pl));
      else if (f[1] == "sidewalk") s.geometry.sidewalks.push_back(std::move(pl));
      else if (f[1] == "median") s.geometry.medians.push_back(std::move(pl));
      else throw Error(ErrorCode::kParse, "unknown polyline tag '" + f[1] + "'");
    } else if (key == "obstacle") {
      need(f, 9);
      std::array<geom::Vec2, 4> q{};
      for (int k = 0; k < 4; ++k) q[k] = {parse_double(f[1 + 2 * k]), parse_double(f[2 + 2 * k])};
      s.geometry.obstacles.push_back(q);
    } else if (key == "agent") {
      need(f, 6);
      if (agent && agent->states.size() != expected_states) throw Error(ErrorCode::kParse, "agent state count mismatch");
      AgentTrack a;
      a.agent_id = static_cast<int>(parse_int(f[1]));
      a.kind = parse_kind(f[2]);
      a.length = parse_double(f[3]);
      a.width = parse_double(f[4]);
      expected_states = static_cast<std::size_t>(parse_int(f[5]));
      s.agents.push_back(std::move(a));
      agent = &s.agents.back();
    } else if (key == "state") {
      need(f, 8);
      if (!agent) throw Error(ErrorCode::kParse, "state before agent");
      sim::AgentState st;
      st.t = parse_double(f[1]);
      st.x = parse_double(f[2]);
      st.y = parse_double(f[3]);
      st.yaw = parse_double(f[4]);
      st.vx = parse_double(f[5]);
      st.vy = parse_double(f[6]);
      st.valid = parse_int(f[7]) != 0;
      agent->states.push_back(st);
    } else if (key == "end") {
      ended = true;
      break;
    } else {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (!ended) throw Error(ErrorCode::kParse, "missing end marker");
  if (agent && agent->states.size() != expected_states) throw Error(ErrorCode::kParse, "agent state count mismatch");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace

std::string encode_sample(const SceneSample& s) {
  const auto& spec = s.raster.spec;
  const uint32_t H = static_cast<uint32_t>(spec.height_cells);
  const uint32_t W = static_cast<uint32_t>(spec.width_cells);
  const std::size_t cells = static_cast<std::size_t>(H) * W;
  if (s.raster.data.size() != cells * sim::kNumRasterChannels || s.seg_labels.size() != cells) {
    throw Error(ErrorCode::kInvalidArgument, "encode_sample: raster/label size does not match the grid spec");
  }
  std::string out(kRecordMagic, sizeof(kRecordMagic));
  put<uint32_t>(out, kRecordVersion);
  put<uint32_t>(out, H);
  put<uint32_t>(out, W);
  put<uint32_t>(out, sim::kNumRasterChannels);
  put<double>(out, spec.range_m);
  put<uint32_t>(out, static_cast<uint32_t>(s.history_steps));
  put<uint32_t>(out, static_cast<uint32_t>(s.future_steps));
  for (const auto& name : sim::raster_channel_names()) {
    put<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out += name;
  }
  out.append(reinterpret_cast<const char*>(s.raster.data.data()), s.raster.data.size() * sizeof(float));
  for (uint8_t l : s.seg_labels) put<float>(out, static_cast<float>(l));
  const std::string text = encode_text(s);
  put<uint64_t>(out, text.size());
  out += text;
  put<uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

SceneSample decode_sample(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.raw(sizeof(kRecordMagic)), kRecordMagic, sizeof(kRecordMagic)) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a bevtraj scene record");
  }
  const auto version = r.get<uint32_t>();
  if (version != kRecordVersion) {
    throw Error(ErrorCode::kVersionMismatch, "record version " + std::to_string(version) + ", reader supports " +
                                                 std::to_string(kRecordVersion));
  }
  if (bytes.size() < sizeof(uint32_t)) throw Error(ErrorCode::kTruncated, "record too short");
  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - sizeof(uint32_t), sizeof(uint32_t));
  const auto H = r.get<uint32_t>();
  const auto W = r.get<uint32_t>();
  const auto C = r.get<uint32_t>();
  const auto range = r.get<double>();
  const auto t = r.get<uint32_t>();
  const auto T = r.get<uint32_t>();
  const std::size_t cells = static_cast<std::size_t>(H) * W;
  // Declared payload size lets a short file be reported as truncated rather
  // than as a checksum failure.
  std::vector<std::string> channel_names;
  for (uint32_t c = 0; c < C; ++c) {
    const auto len = r.get<uint16_t>();
    channel_names.push_back(r.take(len));
  }
  const std::size_t grids = (cells * C + cells) * sizeof(float);
  const std::size_t grid_start = r.pos();
  if (grid_start + grids + sizeof(uint64_t) > bytes.size()) {
    throw Error(ErrorCode::kTruncated, "record shorter than its declared grids");
  }
  uint64_t text_len;
  std::memcpy(&text_len, bytes.data() + grid_start + grids, sizeof(uint64_t));
  const std::size_t total = grid_start + grids + sizeof(uint64_t) + text_len + sizeof(uint32_t);
  if (bytes.size() < total) throw Error(ErrorCode::kTruncated, "record shorter than its declared payload");
  if (bytes.size() > total) throw Error(ErrorCode::kParse, "trailing bytes after record");
  if (crc_of(bytes.data(), bytes.size() - sizeof(uint32_t)) != stored_crc) {
    throw Error(ErrorCode::kChecksumMismatch, "record checksum mismatch");
  }
  if (C != sim::kNumRasterChannels) throw Error(ErrorCode::kParse, "unexpected channel count " + std::to_string(C));
  for (uint32_t c = 0; c < C; ++c) {
    if (channel_names[c] != sim::raster_channel_names()[c]) {
      throw Error(ErrorCode::kParse, "unexpected channel name '" + channel_names[c] + "'");
    }
  }

  SceneSample s;
  s.history_steps = static_cast<int>(t);
  s.future_steps = static_cast<int>(T);
  s.raster.spec = geom::GridSpec{range, static_cast<int>(H), static_cast<int>(W)};
  s.raster.data.resize(cells * C);
  std::memcpy(s.raster.data.data(), r.raw(cells * C * sizeof(float)), cells * C * sizeof(float));
  s.seg_labels.resize(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    const float v = r.get<float>();
    if (!(v >= 0.0f && v < static_cast<float>(sim::kNumSegClasses)) || v != static_cast<float>(static_cast<int>(v))) {
      throw Error(ErrorCode::kParse, "bad segmentation label");
    }
    s.seg_labels[i] = static_cast<uint8_t>(v);
  }
  r.get<uint64_t>();
  decode_text(r.take(text_len), s);
  return s;
}

void write_record(const SceneSample& sample, const std::string& path) {
  write_file(path, encode_sample(sample));
}

SceneSample read_record(const std::string& path) {
  try {
    return decode_sample(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) throw;
    throw Error(e.code(), path + ": " + std::string(e.what()));
  }
}

void write_dataset(std::span<const SceneSample> samples, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
  std::ostringstream index;
  index << kIndexHeader << ' ' << kRecordVersion << '\n';
  index << "count " << samples.size() << '\n';
  for (const auto& s : samples) {
    if (s.scene_id.empty() || s.scene_id.find_first_of(" /\n") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "scene_id '" + s.scene_id + "' is not a valid file name");
    }
    write_record(s, (std::filesystem::path(dir) / (s.scene_id + ".rec")).string());
    index << s.scene_id << '\n';
  }
  write_file((std::filesystem::path(dir) / "index").string(), index.str());
}

std::vector<std::string> read_index(const std::string& dir) {
  std::istringstream is(read_file((std::filesystem::path(dir) / "index").string()));
  std::string header;
  uint32_t version = 0;
  if (!(is >> header) || header != kIndexHeader) throw Error(ErrorCode::kBadMagic, dir + ": not a dataset index");
  if (!(is >> version)) throw Error(ErrorCode::kParse, dir + ": index version missing");
  if (version != kRecordVersion) {
    throw Error(ErrorCode::kVersionMismatch, dir + ": index version " + std::to_string(version));
  }
  std::string key;
  std::size_t count = 0;
  if (!(is >> key >> count) || key != "count") throw Error(ErrorCode::kParse, dir + ": index count missing");
  std::vector<std::string> ids;
  std::string id;
  while (is >> id) ids.push_back(id);
  if (ids.size() != count) {
    throw Error(ErrorCode::kTruncated, dir + ": index lists " + std::to_string(ids.size()) + " of " +
                                           std::to_string(count) + " scenes");
  }
  return ids;
}

std::vector<SceneSample> read_dataset(const std::string& dir) {
  std::vector<SceneSample> out;
  for (const auto& id : read_index(dir)) {
    out.push_back(read_record((std::filesystem::path(dir) / (id + ".rec")).string()));
    if (out.back().scene_id != id) {
      throw Error(ErrorCode::kParse, "record " + id + " carries scene_id " + out.back().scene_id);
    }
  }
  return out;
}

uint64_t scene_seed(uint64_t seed, int i) {
  uint64_t z = seed * 0x100000001B3ULL + static_cast<uint64_t>(i) + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDULL;
  z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ULL;
  return (z ^ (z >> 33)) & 0x7FFFFFFFFFFFFFFFULL;
}

std::vector<SceneSample> generate_dataset(uint64_t seed, int n_scenes, const SimConfig& cfg) {
  std::vector<SceneSample> out;
  out.reserve(static_cast<std::size_t>(std::max(0, n_scenes)));
  for (int i = 0; i < n_scenes; ++i) {
    auto s = sim::generate_scene(scene_seed(seed, i), cfg);
    s.scene_id = "scene_" + std::to_string(seed) + "_" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bevtraj::data
