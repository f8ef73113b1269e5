#ifndef TSDIT_SCENE_HPP_
#define TSDIT_SCENE_HPP_

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsdit/common.hpp"

namespace tsdit {

enum class AgentRole { Predicted, Other };
enum class AgentType { Vehicle, Pedestrian, Cyclist };
enum class LightState { Red, Yellow, Green, Unknown };
enum class LaneType { Driving, Bike, Boundary };

inline const char* to_string(AgentRole r) { return r == AgentRole::Predicted ? "predicted" : "other"; }
inline const char* to_string(AgentType t) {
  switch (t) {
    case AgentType::Vehicle: return "vehicle";
    case AgentType::Pedestrian: return "pedestrian";
    default: return "cyclist";
  }
}
inline const char* to_string(LightState s) {
  switch (s) {
    case LightState::Red: return "red";
    case LightState::Yellow: return "yellow";
    case LightState::Green: return "green";
    default: return "unknown";
  }
}
inline const char* to_string(LaneType t) {
  switch (t) {
    case LaneType::Driving: return "driving";
    case LaneType::Bike: return "bike";
    default: return "boundary";
  }
}

namespace detail {

template <typename E>
E parse_enum(const std::string& s, const std::vector<std::pair<const char*, E>>& table,
             const char* field) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw ParseError(std::string("unknown value \"") + s + "\" for field \"" + field + "\"");
}

}  // namespace detail

inline AgentRole parse_agent_role(const std::string& s) {
  return detail::parse_enum<AgentRole>(
      s, {{"predicted", AgentRole::Predicted}, {"other", AgentRole::Other}}, "role");
}
inline AgentType parse_agent_type(const std::string& s) {
  return detail::parse_enum<AgentType>(s,
                                       {{"vehicle", AgentType::Vehicle},
                                        {"pedestrian", AgentType::Pedestrian},
                                        {"cyclist", AgentType::Cyclist}},
                                       "agent_type");
}
inline LightState parse_light_state(const std::string& s) {
  return detail::parse_enum<LightState>(s,
                                        {{"red", LightState::Red},
                                         {"yellow", LightState::Yellow},
                                         {"green", LightState::Green},
                                         {"unknown", LightState::Unknown}},
                                        "states");
}
inline LaneType parse_lane_type(const std::string& s) {
  return detail::parse_enum<LaneType>(
      s, {{"driving", LaneType::Driving}, {"bike", LaneType::Bike}, {"boundary", LaneType::Boundary}},
      "lane_type");
}

// ---------------------------------------------------------------------------
// Ground-truth traffic scenario in absolute world coordinates. Every agent
// track spans the full horizon (history includes the current step).
// ---------------------------------------------------------------------------

struct AgentTrack {
  std::string agent_id;
  AgentRole role = AgentRole::Other;
  std::vector<Vec2> positions;   // T_h + T_f entries
  std::vector<double> headings;  // radians in (-pi, pi]
  std::vector<double> speeds;    // m/s
  double width = 0.0;
  double length = 0.0;
  AgentType agent_type = AgentType::Vehicle;

  bool operator==(const AgentTrack&) const = default;
};

struct TrafficLightTrack {
  std::string light_id;
  Vec2 position;
  std::vector<LightState> states;  // T_h entries

  bool operator==(const TrafficLightTrack&) const = default;
};

struct LanePolyline {
  std::string lane_id;
  std::vector<Vec2> points;  // at least 2, consecutive points distinct
  LaneType lane_type = LaneType::Driving;

  bool operator==(const LanePolyline&) const = default;
};

struct Scene {
  std::string scene_id;
  double dt = 0.1;
  int horizon_history = 11;  // T_h, includes the current step
  int horizon_future = 80;   // T_f
  std::vector<AgentTrack> agents;
  std::vector<TrafficLightTrack> traffic_lights;
  std::vector<LanePolyline> lanes;

  bool operator==(const Scene&) const = default;

  int total_steps() const { return horizon_history + horizon_future; }

  void validate() const {
    if (!(dt > 0.0)) throw ValidationError("scene " + scene_id + ": dt must be > 0");
    if (horizon_history < 2) {
      throw ValidationError("scene " + scene_id + ": horizon_history must be >= 2");
    }
    if (horizon_future < 1) {
      throw ValidationError("scene " + scene_id + ": horizon_future must be >= 1");
    }
    const size_t steps = static_cast<size_t>(total_steps());
    for (const AgentTrack& a : agents) {
      if (a.positions.size() != steps || a.headings.size() != steps || a.speeds.size() != steps) {
        throw ValidationError("agent " + a.agent_id + ": track length must be " +
                              std::to_string(steps));
      }
      if (!(a.width > 0.0) || !(a.length > 0.0)) {
        throw ValidationError("agent " + a.agent_id + ": width and length must be > 0");
      }
      for (const Vec2& p : a.positions) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
          throw ValidationError("agent " + a.agent_id + ": non-finite position");
        }
      }
      for (double h : a.headings) {
        if (!std::isfinite(h) || h <= -std::numbers::pi || h > std::numbers::pi) {
          throw ValidationError("agent " + a.agent_id + ": headings must lie in (-pi, pi]");
        }
      }
      for (double s : a.speeds) {
        if (!std::isfinite(s)) throw ValidationError("agent " + a.agent_id + ": non-finite speed");
      }
    }
    for (const TrafficLightTrack& tl : traffic_lights) {
      if (tl.states.size() != static_cast<size_t>(horizon_history)) {
        throw ValidationError("traffic light " + tl.light_id + ": states length must be " +
                              std::to_string(horizon_history));
      }
      if (!std::isfinite(tl.position.x) || !std::isfinite(tl.position.y)) {
        throw ValidationError("traffic light " + tl.light_id + ": non-finite position");
      }
    }
    for (const LanePolyline& l : lanes) {
      if (l.points.size() < 2) {
        throw ValidationError("lane " + l.lane_id + ": needs at least 2 points");
      }
      for (size_t i = 0; i < l.points.size(); ++i) {
        if (!std::isfinite(l.points[i].x) || !std::isfinite(l.points[i].y)) {
          throw ValidationError("lane " + l.lane_id + ": non-finite point");
        }
        if (i > 0 && l.points[i] == l.points[i - 1]) {
          throw ValidationError("lane " + l.lane_id + ": consecutive points must be distinct");
        }
      }
    }
  }
};

// ------------------------------ JSON format --------------------------------

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key,
                                           const std::string& where) {
  if (!j.contains(key)) {
    throw ParseError("missing field \"" + std::string(key) + "\" in " + where);
  }
  return j.at(key);
}

inline nlohmann::json points_json(const std::vector<Vec2>& pts) {
  nlohmann::json out = nlohmann::json::array();
  for (const Vec2& p : pts) out.push_back({p.x, p.y});
  return out;
}

inline std::vector<Vec2> parse_points(const nlohmann::json& j, const std::string& where) {
  std::vector<Vec2> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2) {
      throw ParseError("expected [x, y] pair in " + where);
    }
    out.push_back({e[0].get<double>(), e[1].get<double>()});
  }
  return out;
}

}  // namespace detail

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["scene_id"] = s.scene_id;
  j["dt"] = s.dt;
  j["horizon_history"] = s.horizon_history;
  j["horizon_future"] = s.horizon_future;
  j["agents"] = nlohmann::json::array();
  for (const AgentTrack& a : s.agents) {
    nlohmann::json ja;
    ja["agent_id"] = a.agent_id;
    ja["role"] = to_string(a.role);
    ja["positions"] = detail::points_json(a.positions);
    ja["headings"] = a.headings;
    ja["speeds"] = a.speeds;
    ja["width"] = a.width;
    ja["length"] = a.length;
    ja["agent_type"] = to_string(a.agent_type);
    j["agents"].push_back(ja);
  }
  j["traffic_lights"] = nlohmann::json::array();
  for (const TrafficLightTrack& tl : s.traffic_lights) {
    nlohmann::json jt;
    jt["light_id"] = tl.light_id;
    jt["position"] = {tl.position.x, tl.position.y};
    nlohmann::json states = nlohmann::json::array();
    for (LightState st : tl.states) states.push_back(to_string(st));
    jt["states"] = states;
    j["traffic_lights"].push_back(jt);
  }
  j["lanes"] = nlohmann::json::array();
  for (const LanePolyline& l : s.lanes) {
    nlohmann::json jl;
    jl["lane_id"] = l.lane_id;
    jl["points"] = detail::points_json(l.points);
    jl["lane_type"] = to_string(l.lane_type);
    j["lanes"].push_back(jl);
  }
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j) {
  const auto& version = detail::require_field(j, "schema_version", "scene");
  if (version.get<int>() != 1) {
    throw VersionError("unsupported schema_version " + std::to_string(version.get<int>()));
  }
  Scene s;
  try {
    s.scene_id = detail::require_field(j, "scene_id", "scene").get<std::string>();
    s.dt = detail::require_field(j, "dt", "scene").get<double>();
    s.horizon_history = detail::require_field(j, "horizon_history", "scene").get<int>();
    s.horizon_future = detail::require_field(j, "horizon_future", "scene").get<int>();
    for (const auto& ja : detail::require_field(j, "agents", "scene")) {
      AgentTrack a;
      a.agent_id = detail::require_field(ja, "agent_id", "agent").get<std::string>();
      a.role = parse_agent_role(detail::require_field(ja, "role", "agent").get<std::string>());
      a.positions = detail::parse_points(detail::require_field(ja, "positions", "agent"),
                                         "agent " + a.agent_id + " positions");
      a.headings = detail::require_field(ja, "headings", "agent").get<std::vector<double>>();
      a.speeds = detail::require_field(ja, "speeds", "agent").get<std::vector<double>>();
      a.width = detail::require_field(ja, "width", "agent").get<double>();
      a.length = detail::require_field(ja, "length", "agent").get<double>();
      a.agent_type =
          parse_agent_type(detail::require_field(ja, "agent_type", "agent").get<std::string>());
      s.agents.push_back(std::move(a));
    }
    for (const auto& jt : detail::require_field(j, "traffic_lights", "scene")) {
      TrafficLightTrack tl;
      tl.light_id = detail::require_field(jt, "light_id", "traffic_light").get<std::string>();
      const auto& pos = detail::require_field(jt, "position", "traffic_light");
      tl.position = {pos.at(0).get<double>(), pos.at(1).get<double>()};
      for (const auto& st : detail::require_field(jt, "states", "traffic_light")) {
        tl.states.push_back(parse_light_state(st.get<std::string>()));
      }
      s.traffic_lights.push_back(std::move(tl));
    }
    for (const auto& jl : detail::require_field(j, "lanes", "scene")) {
      LanePolyline l;
      l.lane_id = detail::require_field(jl, "lane_id", "lane").get<std::string>();
      l.points = detail::parse_points(detail::require_field(jl, "points", "lane"),
                                      "lane " + l.lane_id + " points");
      l.lane_type =
          parse_lane_type(detail::require_field(jl, "lane_type", "lane").get<std::string>());
      s.lanes.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed scene JSON: ") + e.what());
  }
  s.validate();
  return s;
}

inline std::string scene_to_string(const Scene& s) { return scene_to_json(s).dump(1) + "\n"; }

inline void save_scene(const Scene& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene file: " + path);
  out << scene_to_string(s);
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read scene file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scene parse failure in " + path + ": " + e.what());
  }
  return scene_from_json(j);
}

}  // namespace tsdit

#endif  // TSDIT_SCENE_HPP_
