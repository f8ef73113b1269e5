#ifndef TSDIT_SCENE_GEN_HPP_
#define TSDIT_SCENE_GEN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "tsdit/common.hpp"
#include "tsdit/scene.hpp"

namespace tsdit {

enum class LaneFamily { Straight, LTurn, FourWay };

inline const char* to_string(LaneFamily f) {
  switch (f) {
    case LaneFamily::Straight: return "straight";
    case LaneFamily::LTurn: return "l_turn";
    default: return "four_way";
  }
}

inline LaneFamily parse_lane_family(const std::string& s) {
  if (s == "straight") return LaneFamily::Straight;
  if (s == "l_turn") return LaneFamily::LTurn;
  if (s == "four_way") return LaneFamily::FourWay;
  if (s.empty()) throw ConfigError("lane_family must not be empty");
  throw ConfigError("unknown lane_family \"" + s + "\"");
}

struct SceneGenConfig {
  int agent_count_min = 3;
  int agent_count_max = 6;
  LaneFamily lane_family = LaneFamily::Straight;
  double jitter = 0.05;  // per-step positional noise, meters
  int t_history = 11;
  int t_future = 80;
  double dt = 0.1;
  double speed_min = 4.0;
  double speed_max = 9.0;
  double predicted_fraction = 0.5;
  int lane_count = 3;  // parallel lanes for straight / l_turn families
  double lane_spacing = 3.5;

  void validate() const {
    if (agent_count_min < 1) throw ConfigError("agent_count_min must be >= 1");
    if (agent_count_max < agent_count_min) {
      throw ConfigError("agent_count_max must be >= agent_count_min");
    }
    if (t_history < 2) throw ConfigError("t_history must be >= 2");
    if (t_future < 1) throw ConfigError("t_future must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
    if (jitter < 0.0) throw ConfigError("jitter must be >= 0");
    if (!(speed_min > 0.0) || speed_max < speed_min) {
      throw ConfigError("speed range must satisfy 0 < speed_min <= speed_max");
    }
    if (!(predicted_fraction > 0.0) || predicted_fraction > 1.0) {
      throw ConfigError("predicted_fraction must lie in (0, 1]");
    }
    if (lane_count < 1) throw ConfigError("lane_count must be >= 1");
  }
};

namespace detail {

// Arc-length parameterized polyline used to drive agents along lanes.
struct PolylinePath {
  std::vector<Vec2> pts;
  std::vector<double> cum;  // cumulative arc length per vertex

  explicit PolylinePath(std::vector<Vec2> points) : pts(std::move(points)) {
    cum.resize(pts.size(), 0.0);
    for (size_t i = 1; i < pts.size(); ++i) {
      cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
    }
  }

  double length() const { return cum.empty() ? 0.0 : cum.back(); }

  Vec2 point_at(double s) const {
    if (s <= 0.0) return pts.front();
    if (s >= length()) return pts.back();
    const auto it = std::upper_bound(cum.begin(), cum.end(), s);
    const size_t i = static_cast<size_t>(it - cum.begin());
    const double seg = cum[i] - cum[i - 1];
    const double u = (s - cum[i - 1]) / seg;
    return pts[i - 1] + (pts[i] - pts[i - 1]) * u;
  }

  Vec2 tangent_at(double s) const {
    size_t i = 1;
    if (s > 0.0) {
      const auto it = std::upper_bound(cum.begin(), cum.end(), std::min(s, length()));
      i = std::min(static_cast<size_t>(it - cum.begin()), pts.size() - 1);
      if (i == 0) i = 1;
    }
    Vec2 d = pts[i] - pts[i - 1];
    const double n = d.norm();
    return {d.x / n, d.y / n};
  }
};

inline Vec2 rotate(const Vec2& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

inline std::vector<Vec2> sample_arc(Vec2 center, double radius, double phi0, double phi1,
                                    double step) {
  const double arc_len = std::fabs(phi1 - phi0) * radius;
  const int n = std::max(2, static_cast<int>(std::ceil(arc_len / step)) + 1);
  std::vector<Vec2> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double phi = phi0 + (phi1 - phi0) * i / (n - 1);
    out.push_back({center.x + radius * std::cos(phi), center.y + radius * std::sin(phi)});
  }
  return out;
}

inline std::vector<Vec2> sample_segment(Vec2 a, Vec2 b, double step) {
  const double len = (b - a).norm();
  const int n = std::max(2, static_cast<int>(std::ceil(len / step)) + 1);
  std::vector<Vec2> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(i) / (n - 1);
    out.push_back(a + (b - a) * u);
  }
  return out;
}

inline std::vector<Vec2> join(std::vector<std::vector<Vec2>> pieces) {
  std::vector<Vec2> out;
  for (auto& piece : pieces) {
    for (const Vec2& p : piece) {
      if (!out.empty() && (p - out.back()).norm() < 1e-9) continue;
      out.push_back(p);
    }
  }
  return out;
}

struct GeneratedLanes {
  std::vector<LanePolyline> lanes;
  std::vector<int> drivable;        // indices into lanes usable by agents
  std::vector<Vec2> light_anchors;  // intersection entry points (four_way only)
  double intersection_entry_s = -1.0;  // arc length of the entry point, if any
};

// The four-way family draws its rotation, center and extent from the scene
// rng, so the lane tokens carry scene-specific geometry.
inline GeneratedLanes build_lanes(const SceneGenConfig& cfg, Rng& rng) {
  constexpr double kPointStep = 2.0;
  GeneratedLanes out;
  if (cfg.lane_family == LaneFamily::Straight) {
    const double len =
        (cfg.t_history + cfg.t_future) * cfg.dt * cfg.speed_max + 40.0;
    for (int k = 0; k < cfg.lane_count; ++k) {
      const double y = k * cfg.lane_spacing;
      LanePolyline l;
      l.lane_id = "lane_straight_" + std::to_string(k);
      l.points = sample_segment({-len / 2.0, y}, {len / 2.0, y}, kPointStep);
      l.lane_type = LaneType::Driving;
      out.drivable.push_back(static_cast<int>(out.lanes.size()));
      out.lanes.push_back(std::move(l));
    }
    LanePolyline bike;
    bike.lane_id = "lane_bike";
    bike.points = sample_segment({-len / 2.0, -cfg.lane_spacing},
                                 {len / 2.0, -cfg.lane_spacing}, kPointStep);
    bike.lane_type = LaneType::Bike;
    out.lanes.push_back(std::move(bike));
    LanePolyline edge;
    edge.lane_id = "lane_boundary";
    edge.points = sample_segment({-len / 2.0, cfg.lane_count * cfg.lane_spacing},
                                 {len / 2.0, cfg.lane_count * cfg.lane_spacing}, kPointStep);
    edge.lane_type = LaneType::Boundary;
    out.lanes.push_back(std::move(edge));
    return out;
  }

  if (cfg.lane_family == LaneFamily::LTurn) {
    // East-heading entry, quarter turn to north, for each parallel lane.
    const double horizon_m = (cfg.t_history + cfg.t_future) * cfg.dt * cfg.speed_max;
    const double leg = horizon_m / 2.0 + 25.0;
    for (int k = 0; k < cfg.lane_count; ++k) {
      const double off = k * cfg.lane_spacing;
      const double radius = 10.0 + off;
      // Entry along y = -off towards x = -radius, then CCW arc centered at
      // (-radius, -off + radius)... anchored so the turn starts at x = 0.
      LanePolyline l;
      l.lane_id = "lane_lturn_" + std::to_string(k);
      l.points = join({sample_segment({-leg, -off}, {0.0, -off}, kPointStep),
                       sample_arc({0.0, radius - off}, radius, -std::numbers::pi / 2.0, 0.0,
                                  kPointStep),
                       sample_segment({radius, radius - off}, {radius, radius - off + leg},
                                      kPointStep)});
      l.lane_type = LaneType::Driving;
      out.drivable.push_back(static_cast<int>(out.lanes.size()));
      out.lanes.push_back(std::move(l));
    }
    return out;
  }

  // Four-way intersection. Canonical eastbound routes (right-hand traffic,
  // lane offset `off` south of the center line), rotated to four approaches.
  // Rotation, center and extent vary per scene.
  const double e = rng.uniform(5.0, 9.0);  // intersection half-extent
  const double off = 1.75;
  const double spin = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Vec2 center{rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0)};
  const double reach = (cfg.t_history + cfg.t_future) * cfg.dt * cfg.speed_max + 30.0;
  const char* route_names[3] = {"through", "right", "left"};
  const char* approach_names[4] = {"a0", "a1", "a2", "a3"};
  for (int k = 0; k < 4; ++k) {
    const double angle = spin + k * std::numbers::pi / 2.0;
    for (int r = 0; r < 3; ++r) {
      std::vector<Vec2> canonical;
      if (r == 0) {
        canonical = sample_segment({-reach, -off}, {reach, -off}, kPointStep);
      } else if (r == 1) {
        // Right turn: exit heading -y on the lane x = -off.
        const double radius = e - off;
        canonical = join({sample_segment({-reach, -off}, {-e, -off}, kPointStep),
                          sample_arc({-e, -e}, radius, std::numbers::pi / 2.0, 0.0, kPointStep),
                          sample_segment({-off, -e}, {-off, -reach}, kPointStep)});
      } else {
        // Left turn: exit heading +y on the lane x = +off.
        const double radius = e + off;
        canonical = join({sample_segment({-reach, -off}, {-e, -off}, kPointStep),
                          sample_arc({-e, e}, radius, -std::numbers::pi / 2.0, 0.0, kPointStep),
                          sample_segment({off, e}, {off, reach}, kPointStep)});
      }
      LanePolyline l;
      l.lane_id = std::string("lane_") + approach_names[k] + "_" + route_names[r];
      for (Vec2& p : canonical) p = rotate(p, angle) + center;
      l.points = std::move(canonical);
      l.lane_type = LaneType::Driving;
      out.drivable.push_back(static_cast<int>(out.lanes.size()));
      out.lanes.push_back(std::move(l));
    }
    out.light_anchors.push_back(rotate({-e, -off}, angle) + center);
  }
  out.intersection_entry_s = reach - e;
  return out;
}

}  // namespace detail

// Deterministic synthetic scene: lane-following kinematic agents with seeded
// jitter; traffic lights at intersection lane endpoints for the four-way
// family. A pure function of (seed, cfg).
inline Scene generate_synthetic_scene(uint64_t seed, const SceneGenConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0xabcdef));

  detail::GeneratedLanes gen = detail::build_lanes(cfg, rng);

  Scene scene;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%016llx", static_cast<unsigned long long>(seed));
    scene.scene_id = buf;
  }
  scene.dt = cfg.dt;
  scene.horizon_history = cfg.t_history;
  scene.horizon_future = cfg.t_future;
  scene.lanes = gen.lanes;

  const int total = cfg.t_history + cfg.t_future;
  const int agent_count =
      static_cast<int>(rng.int_range(cfg.agent_count_min, cfg.agent_count_max));

  for (int a = 0; a < agent_count; ++a) {
    AgentTrack track;
    track.agent_id = "agent_" + std::to_string(a);
    const double type_draw = rng.uniform();
    if (type_draw < 0.8) {
      track.agent_type = AgentType::Vehicle;
      track.length = 4.5;
      track.width = 2.0;
    } else if (type_draw < 0.9) {
      track.agent_type = AgentType::Cyclist;
      track.length = 1.8;
      track.width = 0.6;
    } else {
      track.agent_type = AgentType::Pedestrian;
      track.length = 0.8;
      track.width = 0.8;
    }

    const int lane_idx = gen.drivable[static_cast<size_t>(
        rng.next_below(static_cast<int64_t>(gen.drivable.size())))];
    detail::PolylinePath path(scene.lanes[static_cast<size_t>(lane_idx)].points);

    // Place the current step so history fits behind and the future fits
    // ahead. At the intersection the current step stays before the entry
    // (the upcoming turn is visible only through the lane geometry) but
    // close enough that the future engages the junction.
    double v = rng.uniform(cfg.speed_min, cfg.speed_max);
    double s_cur_min = 0.0, s_cur_max = 0.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      s_cur_min = v * (cfg.t_history - 1) * cfg.dt;
      s_cur_max = path.length() - v * cfg.t_future * cfg.dt;
      if (gen.intersection_entry_s > 0.0) {
        s_cur_max = std::min(s_cur_max, gen.intersection_entry_s - 1.0);
        s_cur_min = std::max(s_cur_min,
                             gen.intersection_entry_s - 0.7 * v * cfg.t_future * cfg.dt);
      }
      if (s_cur_max >= s_cur_min) break;
      v *= 0.75;
    }
    if (s_cur_max < s_cur_min) {
      s_cur_min = s_cur_max = path.length() / 2.0;  // degenerate short lane
    }
    const double s_cur = rng.uniform(s_cur_min, s_cur_max);
    const double s0 = s_cur - v * (cfg.t_history - 1) * cfg.dt;

    track.positions.resize(static_cast<size_t>(total));
    for (int t = 0; t < total; ++t) {
      Vec2 p = path.point_at(s0 + v * t * cfg.dt);
      if (cfg.jitter > 0.0) {
        p.x += rng.gaussian() * cfg.jitter;
        p.y += rng.gaussian() * cfg.jitter;
      }
      track.positions[static_cast<size_t>(t)] = p;
    }
    // Headings and speeds from forward differences of the stored positions,
    // so the track is internally consistent; stationary steps carry forward.
    track.headings.resize(static_cast<size_t>(total));
    track.speeds.resize(static_cast<size_t>(total));
    Vec2 tan0 = path.tangent_at(s0);
    double prev_heading = wrap_angle(std::atan2(tan0.y, tan0.x));
    for (int t = 0; t < total; ++t) {
      if (t + 1 < total) {
        const Vec2 d = track.positions[static_cast<size_t>(t + 1)] -
                       track.positions[static_cast<size_t>(t)];
        track.speeds[static_cast<size_t>(t)] = d.norm() / cfg.dt;
        if (d.norm() > 1e-9) prev_heading = wrap_angle(std::atan2(d.y, d.x));
        track.headings[static_cast<size_t>(t)] = prev_heading;
      } else {
        track.speeds[static_cast<size_t>(t)] = track.speeds[static_cast<size_t>(t - 1)];
        track.headings[static_cast<size_t>(t)] = prev_heading;
      }
    }
    scene.agents.push_back(std::move(track));
  }

  // Role partition: a seeded subset of at least one agent is predicted.
  const int predicted =
      std::max(1, static_cast<int>(std::lround(cfg.predicted_fraction * agent_count)));
  std::vector<int> order(static_cast<size_t>(agent_count));
  for (int i = 0; i < agent_count; ++i) order[static_cast<size_t>(i)] = i;
  for (int i = agent_count - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(i + 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  for (int i = 0; i < predicted && i < agent_count; ++i) {
    scene.agents[static_cast<size_t>(order[static_cast<size_t>(i)])].role = AgentRole::Predicted;
  }

  // Lights with a seeded constant phase; phase simulation is out of scope.
  if (!gen.light_anchors.empty()) {
    const bool ew_green = rng.uniform() < 0.5;
    for (size_t k = 0; k < gen.light_anchors.size(); ++k) {
      TrafficLightTrack tl;
      tl.light_id = "light_" + std::to_string(k);
      tl.position = gen.light_anchors[k];
      const bool east_west = k % 2 == 0;
      const LightState st = (east_west == ew_green) ? LightState::Green : LightState::Red;
      tl.states.assign(static_cast<size_t>(cfg.t_history), st);
      scene.traffic_lights.push_back(std::move(tl));
    }
  }

  scene.validate();
  return scene;
}

}  // namespace tsdit

#endif  // TSDIT_SCENE_GEN_HPP_
