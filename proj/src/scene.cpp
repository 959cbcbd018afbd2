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

#include "bevtraj/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "bevtraj/error.hpp"

namespace bevtraj::sim {

using geom::Pose2;
using geom::Vec2;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kArmLength = 150.0;
constexpr double kSampleSpacing = 0.5;

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }
Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Resample a polyline to uniform spacing.
Polyline densify(const std::vector<Vec2>& pts, double spacing = kSampleSpacing) {
  Polyline out;
  if (pts.empty()) return out;
  out.points.push_back(pts.front());
  double carry = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const Vec2 a = pts[i - 1];
    const Vec2 b = pts[i];
    const double len = norm(b - a);
    if (len <= 0.0) continue;
    double s = spacing - carry;
    while (s <= len) {
      out.points.push_back(a + (s / len) * (b - a));
      s += spacing;
    }
    carry = len - (s - spacing);
  }
  if (norm(out.points.back() - pts.back()) > 1e-9) out.points.push_back(pts.back());
  return out;
}

std::vector<Vec2> offset_left(const std::vector<Vec2>& pts, double offset) {
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2 a = pts[i == 0 ? 0 : i - 1];
    const Vec2 b = pts[i + 1 < pts.size() ? i + 1 : i];
    const Vec2 d = b - a;
    const double len = norm(d);
    const Vec2 n{-d.y / len, d.x / len};
    out.push_back(pts[i] + offset * n);
  }
  return out;
}

std::vector<Vec2> reversed(std::vector<Vec2> pts) {
  std::reverse(pts.begin(), pts.end());
  return pts;
}

// Arc-length parameterised polyline.
class Path {
 public:
  explicit Path(Polyline line) : line_(std::move(line)) {
    cum_.resize(line_.points.size(), 0.0);
    for (std::size_t i = 1; i < line_.points.size(); ++i) {
      cum_[i] = cum_[i - 1] + norm(line_.points[i] - line_.points[i - 1]);
    }
  }

  double length() const { return cum_.back(); }
  const Polyline& line() const { return line_; }

  Vec2 at(double s) const {
    if (s <= 0.0) return extrapolate(0, s);
    if (s >= length()) return extrapolate(cum_.size() - 2, s);
    auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - cum_.begin()) - 1;
    const double seg = cum_[i + 1] - cum_[i];
    const double a = seg > 0 ? (s - cum_[i]) / seg : 0.0;
    return line_.points[i] + a * (line_.points[i + 1] - line_.points[i]);
  }

  double heading(double s) const {
    const Vec2 d = at(s + 0.75) - at(s - 0.75);
    return std::atan2(d.y, d.x);
  }

  double curvature(double s) const {
    const double h0 = heading(s - 1.0);
    const double h1 = heading(s + 1.0);
    return std::abs(geom::normalize_angle(h1 - h0)) / 2.0;
  }

  double closest_s(Vec2 p) const {
    double best = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    for (std::size_t i = 0; i < line_.points.size(); ++i) {
      const double d = norm(line_.points[i] - p);
      if (d < best) {
        best = d;
        best_s = cum_[i];
      }
    }
    return best_s;
  }

 private:
  Vec2 extrapolate(std::size_t i, double s) const {
    const Vec2 a = line_.points[i];
    const Vec2 b = line_.points[i + 1];
    const double seg = cum_[i + 1] - cum_[i];
    return a + ((s - cum_[i]) / seg) * (b - a);
  }

  Polyline line_;
  std::vector<double> cum_;
};

struct Route {
  Path path;
  bool vehicle = true;
  int entry_arm = -1;
  bool straight = true;
};

struct Layout {
  SceneGeometry geometry;
  std::vector<Route> routes;
};

Vec2 bezier(Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3, double t) {
  const double u = 1.0 - t;
  return (u * u * u) * p0 + (3 * u * u * t) * p1 + (3 * u * t * t) * p2 + (t * t * t) * p3;
}

void add_road(Layout& layout, const std::vector<Vec2>& median, const SimConfig& cfg) {
  const double w = cfg.lane_width;
  const auto fwd = offset_left(median, -w / 2);
  const auto bwd = reversed(offset_left(median, w / 2));
  for (const auto& lane : {fwd, bwd}) {
    auto line = densify(lane);
    layout.geometry.lanes.push_back(line);
    layout.routes.push_back(Route{Path(line), true, -1, true});
  }
  for (double side : {-1.0, 1.0}) {
    const auto walk = offset_left(median, side * (w + cfg.sidewalk_width / 2));
    for (const auto& dir : {walk, reversed(walk)}) {
      auto line = densify(dir);
      layout.routes.push_back(Route{Path(line), false, -1, true});
    }
    layout.geometry.sidewalks.push_back(densify(walk));
  }
  layout.geometry.medians.push_back(densify(median));
}

Layout build_straight(const SimConfig& cfg) {
  Layout layout;
  layout.geometry.topology = Topology::kStraight;
  add_road(layout, {{-kArmLength, 0.0}, {kArmLength, 0.0}}, cfg);
  return layout;
}

Layout build_curve(const SimConfig& cfg, std::mt19937_64& rng) {
  Layout layout;
  layout.geometry.topology = Topology::kCurve;
  const double radius = uniform(rng, 25.0, 80.0);
  const double sweep = uniform(rng, kPi / 6, kPi / 2) * (uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0);
  std::vector<Vec2> median;
  for (double x = -kArmLength; x < 0.0; x += kSampleSpacing) median.push_back({x, 0.0});
  // Arc tangent to +x at the origin; centre on the turning side.
  const double sign = sweep > 0 ? 1.0 : -1.0;
  const Vec2 centre{0.0, sign * radius};
  const int n_arc = std::max(8, static_cast<int>(std::abs(sweep) * radius / kSampleSpacing));
  for (int i = 0; i <= n_arc; ++i) {
    const double a = sweep * double(i) / n_arc;
    median.push_back(centre + radius * unit(-sign * kPi / 2 + a));
  }
  const Vec2 end = median.back();
  const Vec2 dir = unit(sweep);
  median.push_back(end + kArmLength * dir);
  add_road(layout, median, cfg);
  return layout;
}

Layout build_intersection(const SimConfig& cfg, bool four_way, std::mt19937_64& rng) {
  Layout layout;
  layout.geometry.topology = four_way ? Topology::kFourWay : Topology::kThreeWay;
  const double w = cfg.lane_width;
  const double s0 = w + cfg.sidewalk_width + 1.0;
  const double base = uniform(rng, -0.2, 0.2);
  std::vector<double> arms = four_way
                                 ? std::vector<double>{0.0, kPi / 2, kPi, 3 * kPi / 2}
                                 : std::vector<double>{0.0, kPi / 2, kPi};
  for (double& a : arms) a += base;
  const int n = static_cast<int>(arms.size());

  auto in_lane = [&](int a) {
    const Vec2 d = unit(arms[a]);
    const Vec2 nrm{-d.y, d.x};
    std::vector<Vec2> pts;
    for (double s = kArmLength; s >= s0 - 1e-9; s -= kSampleSpacing) pts.push_back(s * d + (w / 2) * nrm);
    return pts;
  };
  auto out_lane = [&](int b) {
    const Vec2 d = unit(arms[b]);
    const Vec2 nrm{-d.y, d.x};
    std::vector<Vec2> pts;
    for (double s = s0; s <= kArmLength + 1e-9; s += kSampleSpacing) pts.push_back(s * d - (w / 2) * nrm);
    return pts;
  };

  for (int a = 0; a < n; ++a) {
    const Vec2 d = unit(arms[a]);
    std::vector<Vec2> median{s0 * d, kArmLength * d};
    layout.geometry.medians.push_back(densify(median));
    for (double side : {-1.0, 1.0}) {
      const auto walk = offset_left(median, side * (w + cfg.sidewalk_width / 2));
      layout.geometry.sidewalks.push_back(densify(walk));
      for (const auto& dir : {walk, reversed(walk)}) {
        layout.routes.push_back(Route{Path(densify(dir)), false, a, true});
      }
    }
  }

  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (a == b) continue;
      auto pts = in_lane(a);
      const auto out = out_lane(b);
      const Vec2 p0 = pts.back();
      const Vec2 p3 = out.front();
      const Vec2 da = unit(arms[a]);
      const Vec2 db = unit(arms[b]);
      const double c = 0.55 * norm(p3 - p0);
      const Vec2 p1 = p0 - c * da;
      const Vec2 p2 = p3 - c * db;
      for (int i = 1; i < 40; ++i) pts.push_back(bezier(p0, p1, p2, p3, i / 40.0));
      pts.insert(pts.end(), out.begin(), out.end());
      auto line = densify(pts);
      const bool straight = std::abs(geom::normalize_angle(arms[b] - arms[a] - kPi)) < 1e-6;
      layout.geometry.lanes.push_back(line);
      layout.routes.push_back(Route{Path(line), true, a, straight});
    }
  }
  return layout;
}

Layout build_layout(const SimConfig& cfg, std::mt19937_64& rng) {
  std::discrete_distribution<int> pick(
      {cfg.weight_straight, cfg.weight_curve, cfg.weight_three_way, cfg.weight_four_way});
  switch (pick(rng)) {
    case 0: return build_straight(cfg);
    case 1: return build_curve(cfg, rng);
    case 2: return build_intersection(cfg, false, rng);
    default: return build_intersection(cfg, true, rng);
  }
}

double min_distance_to_lanes(const SceneGeometry& g, Vec2 p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& lane : g.lanes) best = std::min(best, distance_to_polyline(lane, p));
  return best;
}

void place_obstacles(Layout& layout, const SimConfig& cfg, std::mt19937_64& rng) {
  if (cfg.max_obstacles == 0) return;
  const int count = uniform_int(rng, 0, cfg.max_obstacles);
  const double clearance = cfg.lane_width / 2 + cfg.sidewalk_width + 0.5;
  const auto& medians = layout.geometry.medians;
  int attempts = 0;
  while (static_cast<int>(layout.geometry.obstacles.size()) < count && attempts < 50 * (count + 1)) {
    ++attempts;
    const auto& median = medians[static_cast<std::size_t>(uniform_int(rng, 0, int(medians.size()) - 1))];
    Path path(median);
    const double s = uniform(rng, 0.0, std::min(path.length(), 60.0));
    const double heading = path.heading(s);
    const Vec2 base = path.at(s);
    const double side = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
    const bool wall = uniform(rng, 0, 1) < 0.3;
    const double len = wall ? uniform(rng, 4.0, 15.0) : uniform(rng, 2.0, 10.0);
    const double wid = wall ? 0.4 : uniform(rng, 2.0, 8.0);
    const double lateral = cfg.lane_width + cfg.sidewalk_width + uniform(rng, 0.5, 10.0) + wid / 2;
    const Vec2 t = unit(heading);
    const Vec2 n{-t.y, t.x};
    const Vec2 c = base + (side * lateral) * n;
    std::array<Vec2, 4> quad{c - (len / 2) * t - (wid / 2) * n, c + (len / 2) * t - (wid / 2) * n,
                             c + (len / 2) * t + (wid / 2) * n, c - (len / 2) * t + (wid / 2) * n};
    bool ok = true;
    for (int e = 0; e < 4 && ok; ++e) {
      const Vec2 a = quad[e];
      const Vec2 b = quad[(e + 1) % 4];
      const int steps = std::max(1, static_cast<int>(norm(b - a) / 0.5));
      for (int k = 0; k <= steps && ok; ++k) {
        const Vec2 p = a + (double(k) / steps) * (b - a);
        if (min_distance_to_lanes(layout.geometry, p) < clearance) ok = false;
      }
    }
    if (ok && min_distance_to_lanes(layout.geometry, c) < clearance) ok = false;
    if (ok) layout.geometry.obstacles.push_back(quad);
  }
}

struct Motion {
  std::vector<double> s;  // per recorded step
  std::vector<double> v;
};

// Longitudinal speed profile along a route: curvature-limited speed with a
// backward braking pass, tracked by a first-order controller.
Motion simulate_motion(const Route& route, double s_init, double v_desired, int n_steps, double hz,
                       const SimConfig& cfg) {
  const double length = route.path.length();
  const int n_prof = static_cast<int>(length / kSampleSpacing) + 2;
  const double yaw_rate_cap = 0.75 * cfg.max_yaw_rate;
  const double brake = std::min(2.0, 0.5 * cfg.max_accel);
  std::vector<double> allow(static_cast<std::size_t>(n_prof));
  for (int i = 0; i < n_prof; ++i) {
    const double s = std::min(i * kSampleSpacing, length);
    double kappa = 0.0;
    for (double ds = -2.0; ds <= 2.0; ds += 1.0) kappa = std::max(kappa, route.path.curvature(s + ds));
    double v = v_desired;
    if (kappa > 1e-6) v = std::min({v, yaw_rate_cap / kappa, std::sqrt(2.0 / kappa)});
    allow[static_cast<std::size_t>(i)] = v;
  }
  allow.back() = 0.0;
  for (int i = n_prof - 2; i >= 0; --i) {
    auto& a = allow[static_cast<std::size_t>(i)];
    a = std::min(a, std::sqrt(allow[static_cast<std::size_t>(i) + 1] * allow[static_cast<std::size_t>(i) + 1] +
                              2.0 * brake * kSampleSpacing));
  }
  auto allowed = [&](double s) {
    if (s >= length) return 0.0;
    const double f = std::clamp(s / kSampleSpacing, 0.0, double(n_prof - 1));
    const auto i = static_cast<std::size_t>(f);
    const auto j = std::min(i + 1, allow.size() - 1);
    const double a = f - double(i);
    return (1 - a) * allow[i] + a * allow[j];
  };

  const int sub = 10;
  const double dt = 1.0 / (hz * sub);
  const double accel_cap = 0.7 * cfg.max_accel;
  // Never spawn inside the stopping distance of the route end.
  const double stop_margin = v_desired * v_desired / (2.0 * brake) + v_desired + 2.0;
  double s = std::clamp(s_init, 0.0, std::max(0.0, length - stop_margin));
  double v = std::min({v_desired, allowed(s), allowed(s + v_desired)});
  Motion m;
  for (int step = 0; step < n_steps; ++step) {
    m.s.push_back(s);
    m.v.push_back(v);
    for (int k = 0; k < sub; ++k) {
      const double target = std::min(v_desired, allowed(s + v));
      const double a = std::clamp((target - v) / 0.6, -accel_cap, accel_cap);
      const double v_next = std::max(0.0, v + a * dt);
      s = std::min(s + 0.5 * (v + v_next) * dt, length);
      v = s >= length ? 0.0 : v_next;
    }
  }
  return m;
}

struct LateralWave {
  double amplitude = 0.0;
  double wavelength = 50.0;
  double phase = 0.0;
  double at(double s) const { return amplitude * std::sin(2 * kPi * s / wavelength + phase); }
};

Vec2 route_point(const Route& route, const LateralWave& wave, double s) {
  const double h = route.path.heading(s);
  const Vec2 n{-std::sin(h), std::cos(h)};
  return route.path.at(s) + wave.at(s) * n;
}

AgentTrack realize_track(int id, AgentKind kind, const Route& route, const LateralWave& wave,
                         const Motion& motion, int history_steps, double hz, const SimConfig& cfg) {
  AgentTrack track;
  track.agent_id = id;
  track.kind = kind;
  switch (kind) {
    case AgentKind::kVehicle: track.length = cfg.vehicle_length; track.width = cfg.vehicle_width; break;
    case AgentKind::kCyclist: track.length = 1.8; track.width = cfg.cyclist_width; break;
    case AgentKind::kPedestrian: track.length = cfg.pedestrian_width; track.width = cfg.pedestrian_width; break;
  }
  for (std::size_t i = 0; i < motion.s.size(); ++i) {
    const double s = motion.s[i];
    const Vec2 p = route_point(route, wave, s);
    const Vec2 d = route_point(route, wave, s + 0.25) - route_point(route, wave, s - 0.25);
    const double ds_geom = norm(d) / 0.5;  // metres of travelled path per metre of arc
    const double yaw = std::atan2(d.y, d.x);
    const double speed = motion.v[i] * ds_geom;
    AgentState st;
    st.t = (static_cast<double>(i) - (history_steps - 1)) / hz;
    st.x = p.x;
    st.y = p.y;
    st.yaw = geom::normalize_angle(yaw);
    st.vx = speed * std::cos(yaw);
    st.vy = speed * std::sin(yaw);
    st.valid = true;
    track.states.push_back(st);
  }
  return track;
}

bool in_sensing_range(const Pose2& ego, double range, const AgentState& s) {
  const Vec2 local = geom::se2_apply(geom::se2_invert(ego), Vec2{s.x, s.y});
  return std::abs(local.x) <= range && std::abs(local.y) <= range;
}

void resample_histories(SceneSample& sample, const SimConfig& cfg) {
  const int ratio = static_cast<int>(std::lround(cfg.hz / cfg.source_history_hz));
  const int cur = sample.current_index();
  for (auto& track : sample.agents) {
    std::vector<geom::TimedState> src;
    for (int i = cur % ratio; i <= cur; i += ratio) {
      const auto& s = track.states[static_cast<std::size_t>(i)];
      src.push_back({s.t, s.x, s.y, s.yaw, s.valid});
    }
    const auto res = geom::resample_history(src, cfg.hz);
    const int first = cur % ratio;
    for (int i = 0; i < first; ++i) track.states[static_cast<std::size_t>(i)].valid = false;
    for (std::size_t k = 0; k < res.states.size(); ++k) {
      auto& st = track.states[static_cast<std::size_t>(first) + k];
      const auto& r = res.states[k];
      st.x = r.x;
      st.y = r.y;
      st.yaw = r.yaw;
      st.valid = r.valid;
    }
    for (int i = first; i <= cur; ++i) {
      auto& st = track.states[static_cast<std::size_t>(i)];
      if (!st.valid) continue;
      const int j = i < cur ? i + 1 : i - 1;
      const auto& o = track.states[static_cast<std::size_t>(j)];
      if (!o.valid) continue;
      const double sign = j > i ? 1.0 : -1.0;
      st.vx = sign * (o.x - st.x) * cfg.hz;
      st.vy = sign * (o.y - st.y) * cfg.hz;
    }
  }
}

void rasterize_sample(SceneSample& sample, const SimConfig& cfg) {
  RasterOptions opts;
  opts.noise_rate = cfg.noise_rate;
  opts.occlusion = cfg.occlusion;
  opts.noise_seed = mix_seed(sample.seed, 0xB1);
  auto res = rasterize(sample.geometry, sample.agents, sample.current_index(), sample.ego_pose,
                       cfg.grid, opts);
  sample.raster = std::move(res.raster);
  sample.seg_labels = std::move(res.seg_labels);
}

}  // namespace

const char* kind_name(AgentKind kind) {
  switch (kind) {
    case AgentKind::kVehicle: return "vehicle";
    case AgentKind::kPedestrian: return "pedestrian";
    case AgentKind::kCyclist: return "cyclist";
  }
  return "unknown";
}

const char* topology_name(Topology t) {
  switch (t) {
    case Topology::kStraight: return "straight";
    case Topology::kCurve: return "curve";
    case Topology::kThreeWay: return "three_way";
    case Topology::kFourWay: return "four_way";
  }
  return "unknown";
}

const std::array<std::string, kNumRasterChannels>& raster_channel_names() {
  static const std::array<std::string, kNumRasterChannels> names{
      "drivable_area",           "lane_marking",     "road_boundary",
      "static_obstacle_occupancy", "agent_occupancy", "occlusion_mask"};
  return names;
}

const AgentTrack& SceneSample::agent(int id) const {
  for (const auto& a : agents) {
    if (a.agent_id == id) return a;
  }
  throw Error(ErrorCode::kInvalidArgument, "scene " + scene_id + " has no agent " + std::to_string(id));
}

double distance_to_polyline(const Polyline& line, Vec2 p) {
  double best = std::numeric_limits<double>::infinity();
  const auto& pts = line.points;
  if (pts.size() == 1) return norm(p - pts[0]);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const Vec2 a = pts[i - 1];
    const Vec2 ab = pts[i] - a;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, norm(p - (a + t * ab)));
  }
  return best;
}

bool point_in_quad(const std::array<Vec2, 4>& quad, Vec2 p) {
  bool pos = false, neg = false;
  for (int i = 0; i < 4; ++i) {
    const double c = cross(quad[(i + 1) % 4] - quad[i], p - quad[i]);
    pos = pos || c > 0;
    neg = neg || c < 0;
  }
  return !(pos && neg);
}

namespace {
bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  const double d1 = cross(q2 - q1, p1 - q1);
  const double d2 = cross(q2 - q1, p2 - q1);
  const double d3 = cross(p2 - p1, q1 - p1);
  const double d4 = cross(p2 - p1, q2 - p1);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  auto on_segment = [](Vec2 a, Vec2 b, Vec2 c) {
    return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= c.y &&
           c.y <= std::max(a.y, b.y);
  };
  if (d1 == 0 && on_segment(q1, q2, p1)) return true;
  if (d2 == 0 && on_segment(q1, q2, p2)) return true;
  if (d3 == 0 && on_segment(p1, p2, q1)) return true;
  if (d4 == 0 && on_segment(p1, p2, q2)) return true;
  return false;
}
}  // namespace

bool segment_intersects_quad(const std::array<Vec2, 4>& quad, Vec2 a, Vec2 b) {
  if (point_in_quad(quad, a) || point_in_quad(quad, b)) return true;
  for (int i = 0; i < 4; ++i) {
    if (segments_intersect(a, b, quad[i], quad[(i + 1) % 4])) return true;
  }
  return false;
}

RasterResult rasterize(const SceneGeometry& geometry, std::span<const AgentTrack> agents,
                       int current_index, const Pose2& ego_pose, const geom::GridSpec& spec,
                       const RasterOptions& options) {
  spec.validate();
  const int height = spec.height_cells;
  const int width = spec.width_cells;
  const std::size_t cells = static_cast<std::size_t>(height) * width;
  const Pose2 world_to_ego = geom::se2_invert(ego_pose);
  const double cw = spec.cell_width_m();
  const double ch = spec.cell_height_m();

  auto to_ego = [&](Vec2 p) { return geom::se2_apply(world_to_ego, p); };
  auto col_of = [&](double x) { return static_cast<int>(std::floor((x + spec.range_m) / cw)); };
  auto row_of = [&](double y) { return static_cast<int>(std::floor((y + spec.range_m) / ch)); };

  // Minimum distance from each cell centre to a family of polylines, only
  // evaluated within `radius` of each segment.
  auto distance_field = [&](const std::vector<Polyline>& lines, double radius) {
    std::vector<double> field(cells, std::numeric_limits<double>::infinity());
    for (const auto& line : lines) {
      for (std::size_t i = 1; i < line.points.size(); ++i) {
        const Vec2 a = to_ego(line.points[i - 1]);
        const Vec2 b = to_ego(line.points[i]);
        const int c0 = std::max(0, col_of(std::min(a.x, b.x) - radius));
        const int c1 = std::min(width - 1, col_of(std::max(a.x, b.x) + radius));
        const int r0 = std::max(0, row_of(std::min(a.y, b.y) - radius));
        const int r1 = std::min(height - 1, row_of(std::max(a.y, b.y) + radius));
        if (c0 > c1 || r0 > r1) continue;
        const Vec2 ab = b - a;
        const double len2 = dot(ab, ab);
        for (int r = r0; r <= r1; ++r) {
          for (int c = c0; c <= c1; ++c) {
            const Vec2 p = geom::cell_center_ego(spec, r, c);
            const double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
            auto& f = field[static_cast<std::size_t>(r) * width + c];
            f = std::min(f, norm(p - (a + t * ab)));
          }
        }
      }
    }
    return field;
  };

  auto fill_quad = [&](const std::array<Vec2, 4>& quad_ego, auto&& fn) {
    double xmin = quad_ego[0].x, xmax = xmin, ymin = quad_ego[0].y, ymax = ymin;
    for (const auto& q : quad_ego) {
      xmin = std::min(xmin, q.x); xmax = std::max(xmax, q.x);
      ymin = std::min(ymin, q.y); ymax = std::max(ymax, q.y);
    }
    const int c0 = std::max(0, col_of(xmin)), c1 = std::min(width - 1, col_of(xmax));
    const int r0 = std::max(0, row_of(ymin)), r1 = std::min(height - 1, row_of(ymax));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (point_in_quad(quad_ego, geom::cell_center_ego(spec, r, c))) fn(static_cast<std::size_t>(r) * width + c);
      }
    }
  };

  const double half_lane = geometry.lane_width / 2;
  const double marking_radius = std::max(std::max(cw, ch) / 2, 0.2);
  const auto lane_dist = distance_field(geometry.lanes, half_lane + 1.0);
  const auto median_dist = distance_field(geometry.medians, marking_radius + 1.0);

  std::vector<uint8_t> labels(cells, kBackground);
  for (std::size_t i = 0; i < cells; ++i) {
    if (lane_dist[i] <= half_lane) {
      labels[i] = median_dist[i] <= marking_radius ? kClassMarking : kClassDrivable;
    }
  }
  std::vector<std::array<Vec2, 4>> obstacles_ego;
  for (const auto& quad : geometry.obstacles) {
    std::array<Vec2, 4> q{};
    for (int k = 0; k < 4; ++k) q[k] = to_ego(quad[k]);
    obstacles_ego.push_back(q);
    fill_quad(q, [&](std::size_t i) { labels[i] = kClassObstacle; });
  }
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      auto& l = labels[static_cast<std::size_t>(r) * width + c];
      if (l != kBackground) continue;
      bool near_road = false;
      for (int dr = -1; dr <= 1 && !near_road; ++dr) {
        for (int dc = -1; dc <= 1 && !near_road; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= height || cc < 0 || cc >= width) continue;
          const auto n = labels[static_cast<std::size_t>(rr) * width + cc];
          near_road = n == kClassDrivable || n == kClassMarking;
        }
      }
      if (near_road) l = kClassBoundary;
    }
  }

  RasterResult out;
  out.raster.spec = spec;
  out.raster.data.assign(cells * kNumRasterChannels, 0.0f);
  for (std::size_t i = 0; i < cells; ++i) {
    if (labels[i] != kBackground) out.raster.data[(labels[i] - 1) * cells + i] = 1.0f;
  }
  for (const auto& agent : agents) {
    if (current_index < 0 || current_index >= static_cast<int>(agent.states.size())) continue;
    const auto& s = agent.states[static_cast<std::size_t>(current_index)];
    if (!s.valid) continue;
    const Vec2 c = to_ego({s.x, s.y});
    const double yaw = s.yaw - ego_pose.yaw;
    const Vec2 t = unit(yaw);
    const Vec2 n{-t.y, t.x};
    const double hl = agent.length / 2, hw = agent.width / 2;
    std::array<Vec2, 4> quad{c - hl * t - hw * n, c + hl * t - hw * n, c + hl * t + hw * n,
                             c - hl * t + hw * n};
    fill_quad(quad, [&](std::size_t i) { out.raster.data[kAgentOccupancy * cells + i] = 1.0f; });
  }

  if (options.noise_rate > 0.0) {
    std::mt19937_64 rng(options.noise_seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int ch_idx = 0; ch_idx < kOcclusionMask; ++ch_idx) {
      for (std::size_t i = 0; i < cells; ++i) {
        const double r = u01(rng);
        const double mode = u01(rng);
        const double delta = u01(rng) - 0.5;
        if (r >= options.noise_rate) continue;
        float& v = out.raster.data[ch_idx * cells + i];
        v = mode < 0.5 ? 1.0f - v : std::clamp(v + static_cast<float>(delta), 0.0f, 1.0f);
      }
    }
  }

  if (options.occlusion && !obstacles_ego.empty()) {
    const Vec2 origin{0.0, 0.0};
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const Vec2 p = geom::cell_center_ego(spec, r, c);
        bool occluded = false;
        for (const auto& q : obstacles_ego) {
          if (point_in_quad(q, p)) continue;
          if (segment_intersects_quad(q, origin, p)) {
            occluded = true;
            break;
          }
        }
        if (!occluded) continue;
        const std::size_t i = static_cast<std::size_t>(r) * width + c;
        for (int k = 0; k < kOcclusionMask; ++k) out.raster.data[k * cells + i] = 0.0f;
        out.raster.data[kOcclusionMask * cells + i] = 1.0f;
      }
    }
  }
  out.seg_labels = std::move(labels);
  return out;
}

bool is_hard_case(const AgentTrack& track, int current_index, const SimConfig& cfg) {
  const auto& cur = track.states[static_cast<std::size_t>(current_index)];
  const auto& last = track.states.back();
  const Pose2 frame(cur.x, cur.y, cur.yaw);
  const Vec2 end = geom::se2_apply(geom::se2_invert(frame), Vec2{last.x, last.y});
  const double displacement = norm(end);
  if (displacement < cfg.hard_min_displacement_m) return false;
  const double heading_change = std::abs(geom::normalize_angle(last.yaw - cur.yaw));
  return heading_change >= cfg.hard_min_heading_change_rad ||
         std::abs(end.y) >= cfg.hard_min_lateral_m;
}

PhysicsReport check_track_physics(const AgentTrack& track, double hz, double max_accel,
                                  double max_yaw_rate) {
  PhysicsReport rep;
  for (std::size_t i = 1; i < track.states.size(); ++i) {
    const auto& a = track.states[i - 1];
    const auto& b = track.states[i];
    if (!a.valid || !b.valid) continue;
    const double va = std::hypot(a.vx, a.vy);
    const double vb = std::hypot(b.vx, b.vy);
    const double accel = std::abs(vb - va) * hz;
    const double yaw_rate = std::abs(geom::normalize_angle(b.yaw - a.yaw)) * hz;
    rep.max_accel = std::max(rep.max_accel, accel);
    rep.max_yaw_rate = std::max(rep.max_yaw_rate, yaw_rate);
    const double moved = std::hypot(b.x - a.x, b.y - a.y) * hz;
    const double ref = 0.5 * (va + vb);
    if (ref > 1.0) {
      rep.worst_speed_mismatch = std::max(rep.worst_speed_mismatch, std::abs(moved - ref) / ref);
      if (std::abs(moved - ref) > 0.1 * ref) {
        rep.ok = false;
        rep.detail = "speed/position mismatch at step " + std::to_string(i);
      }
    } else if (std::abs(moved - ref) > 0.1) {
      rep.ok = false;
      rep.detail = "low-speed position mismatch at step " + std::to_string(i);
    }
    if (accel > max_accel) {
      rep.ok = false;
      rep.detail = "acceleration bound exceeded at step " + std::to_string(i);
    }
    if (yaw_rate > max_yaw_rate) {
      rep.ok = false;
      rep.detail = "yaw-rate bound exceeded at step " + std::to_string(i);
    }
  }
  return rep;
}

SceneSample generate_scene(uint64_t seed, const SimConfig& cfg) {
  RunConfig check;
  check.sim = cfg;
  check.model.max_agents = std::max(check.model.max_agents, cfg.max_agents);
  check.model.n_modes = 1;
  check.model.n_points = 1;
  check.validate();

  const int n_steps = cfg.history_steps + cfg.future_steps;
  const int cur = cfg.history_steps - 1;

  for (int attempt = 0; attempt < 500; ++attempt) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(attempt)));
    Layout layout = build_layout(cfg, rng);
    layout.geometry.lane_width = cfg.lane_width;
    place_obstacles(layout, cfg, rng);

    std::vector<int> vehicle_routes, walk_routes;
    for (std::size_t i = 0; i < layout.routes.size(); ++i) {
      (layout.routes[i].vehicle ? vehicle_routes : walk_routes).push_back(static_cast<int>(i));
    }
    // Turn choice: group vehicle routes by entry arm, then straight vs turn.
    auto pick_vehicle_route = [&]() -> int {
      const int any = vehicle_routes[static_cast<std::size_t>(uniform_int(rng, 0, int(vehicle_routes.size()) - 1))];
      const int arm = layout.routes[static_cast<std::size_t>(any)].entry_arm;
      if (arm < 0) return any;
      std::vector<int> straight, turn;
      for (int r : vehicle_routes) {
        const auto& route = layout.routes[static_cast<std::size_t>(r)];
        if (route.entry_arm != arm) continue;
        (route.straight ? straight : turn).push_back(r);
      }
      const bool take_turn = straight.empty() || (!turn.empty() && uniform(rng, 0, 1) < cfg.turn_probability);
      const auto& pool = take_turn ? turn : straight;
      return pool[static_cast<std::size_t>(uniform_int(rng, 0, int(pool.size()) - 1))];
    };

    const int n_agents = uniform_int(rng, cfg.min_agents, cfg.max_agents);
    SceneSample sample;
    sample.seed = seed;
    sample.scene_id = "scene_" + std::to_string(seed);
    sample.hz = cfg.hz;
    sample.history_steps = cfg.history_steps;
    sample.future_steps = cfg.future_steps;
    sample.geometry = layout.geometry;
    sample.ego_id = 0;

    for (int id = 0; id < n_agents; ++id) {
      AgentKind kind = AgentKind::kVehicle;
      if (id > 0) {
        const double r = uniform(rng, 0, 1);
        if (r < cfg.pedestrian_fraction) kind = AgentKind::kPedestrian;
        else if (r < cfg.pedestrian_fraction + cfg.cyclist_fraction) kind = AgentKind::kCyclist;
      }
      const bool walker = kind == AgentKind::kPedestrian && !walk_routes.empty();
      const int route_id = walker ? walk_routes[static_cast<std::size_t>(uniform_int(rng, 0, int(walk_routes.size()) - 1))]
                                  : pick_vehicle_route();
      const Route& route = layout.routes[static_cast<std::size_t>(route_id)];
      const double s_center = route.path.closest_s({0.0, 0.0});
      double v_des = 0.0;
      switch (kind) {
        case AgentKind::kVehicle: v_des = cfg.speed_limit * uniform(rng, 0.5, 1.0); break;
        case AgentKind::kCyclist: v_des = uniform(rng, 3.0, 6.0); break;
        case AgentKind::kPedestrian: v_des = uniform(rng, 1.0, 1.8); break;
      }
      if (id > 0 && uniform(rng, 0, 1) < 0.1) v_des = 0.0;
      const double s_init = id == 0 ? s_center - uniform(rng, 5.0, 40.0)
                                    : s_center + uniform(rng, -60.0, 30.0);
      LateralWave wave;
      wave.amplitude = uniform(rng, 0.0, cfg.lateral_noise_m) * (walker ? 0.5 : 1.0);
      wave.wavelength = uniform(rng, 40.0, 80.0);
      wave.phase = uniform(rng, 0.0, 2 * kPi);
      const Motion motion = simulate_motion(route, s_init, v_des, n_steps, cfg.hz, cfg);
      sample.agents.push_back(realize_track(id, kind, route, wave, motion, cfg.history_steps, cfg.hz, cfg));
    }

    const auto& ego_now = sample.agents[0].states[static_cast<std::size_t>(cur)];
    sample.ego_pose = Pose2(ego_now.x, ego_now.y, ego_now.yaw);

    // Drop agents outside the sensing range at the current timestamp.
    std::vector<AgentTrack> sensed;
    for (auto& a : sample.agents) {
      if (a.agent_id == 0 || in_sensing_range(sample.ego_pose, cfg.grid.range_m, a.states[static_cast<std::size_t>(cur)])) {
        sensed.push_back(std::move(a));
      }
    }
    sample.agents = std::move(sensed);

    std::vector<int> candidates;
    for (const auto& a : sample.agents) {
      if (a.agent_id == sample.ego_id) continue;
      if (cfg.hard_case_filter && !is_hard_case(a, cur, cfg)) continue;
      candidates.push_back(a.agent_id);
    }
    if (candidates.empty()) continue;
    sample.target_id = candidates[static_cast<std::size_t>(uniform_int(rng, 0, int(candidates.size()) - 1))];

    // Detection dropouts on bystanders; the ego and target keep full futures.
    for (auto& a : sample.agents) {
      if (a.agent_id == sample.ego_id) continue;
      if (uniform(rng, 0, 1) < 0.2) {
        const int cut = uniform_int(rng, 1, std::max(1, cur / 2));
        for (int i = 0; i < cut; ++i) a.states[static_cast<std::size_t>(i)].valid = false;
      }
      if (a.agent_id != sample.target_id && uniform(rng, 0, 1) < 0.2) {
        const int cut = uniform_int(rng, cur + 1, n_steps - 1);
        for (int i = cut; i < n_steps; ++i) a.states[static_cast<std::size_t>(i)].valid = false;
      }
    }

    if (cfg.source_history_hz < cfg.hz) resample_histories(sample, cfg);
    rasterize_sample(sample, cfg);
    return sample;
  }
  throw Error(ErrorCode::kInvalidConfig,
              "generate_scene: no admissible target after 500 attempts (seed " + std::to_string(seed) + ")");
}

SceneSample with_ego_target(const SceneSample& sample) {
  SceneSample out = sample;
  out.target_id = out.ego_id;
  return out;
}

}  // namespace bevtraj::sim
