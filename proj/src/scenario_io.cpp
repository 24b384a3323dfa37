// JSON serialization of scenarios. The layout is documented in
// docs/scenario_schema.md; doubles are written with round-trip precision.

#include <fstream>

#include <nlohmann/json.hpp>

#include "navrobust/random.hpp"
#include "navrobust/scenario.hpp"

namespace navrobust::scenario {

using nlohmann::json;

namespace {

json to_json(const geom::Vec2d& p) { return json::array({p.x(), p.y()}); }

json to_json(const geom::Trajectoryd& t) {
  json poses = json::array();
  for (const auto& w : t.waypoints) poses.push_back(json::array({w.x, w.y, w.heading}));
  return {{"dt", t.dt}, {"poses", poses}};
}

json to_json(const geom::Polylined& line) {
  json out = json::array();
  for (const auto& v : line.vertices) out.push_back(to_json(v));
  return out;
}

geom::Vec2d point_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::kValidationError, "point must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

geom::Polylined polyline_from(const json& j) {
  geom::Polylined line;
  for (const auto& p : j) line.vertices.push_back(point_from(p));
  return line;
}

geom::Trajectoryd trajectory_from(const json& j) {
  geom::Trajectoryd t{j.at("dt").get<double>(), {}};
  for (const auto& p : j.at("poses")) {
    if (!p.is_array() || p.size() != 3) throw Error(ErrorCode::kValidationError, "pose must be [x, y, heading]");
    t.waypoints.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
  }
  return t;
}

template <typename Enum>
Enum enum_from(const std::string& text, std::initializer_list<Enum> values) {
  for (Enum v : values)
    if (to_string(v) == text) return v;
  throw Error(ErrorCode::kValidationError, "unknown enum value '" + text + "'");
}

}  // namespace

namespace {

json scenario_json(const Scenario& s) {
  json map;
  map["family"] = to_string(s.family);
  map["route_lane"] = s.route_lane;
  map["drivable"] = json::array();
  for (const auto& poly : s.drivable) {
    json ring = json::array();
    for (const auto& v : poly.ring) ring.push_back(to_json(v));
    map["drivable"].push_back(ring);
  }
  map["lanes"] = json::array();
  for (const auto& lane : s.lanes) map["lanes"].push_back(to_json(lane.centerline));

  json lights = json::array();
  for (const auto& l : s.lights) {
    json phases = json::array();
    for (auto p : l.phase) phases.push_back(to_string(p));
    lights.push_back({{"stop_line", to_json(l.stop_line)}, {"phase", phases}});
  }

  json agents = json::array();
  for (const auto& a : s.agents)
    agents.push_back({{"kind", to_string(a.kind)},
                      {"half_length", a.half_length},
                      {"half_width", a.half_width},
                      {"logged", to_json(a.logged)}});

  json out;
  out["schema_version"] = kScenarioSchemaVersion;
  out["geometry_seed"] = s.geometry_seed;
  out["style"] = {{"id", s.style.id}, {"name", s.style.name}};
  out["map"] = map;
  out["agents"] = agents;
  out["lights"] = lights;
  out["ego"] = {{"history", to_json(s.ego_history)},
                {"half_length", s.ego_half_length},
                {"half_width", s.ego_half_width},
                {"goal_command", to_string(s.goal_command)}};
  out["expert"] = to_json(s.expert);
  return out;
}

Scenario scenario_from_json(const json& j, const StyleRegistry& registry, const std::string& where) {
  if (!j.is_object() || !j.contains("schema_version") || j["schema_version"] != kScenarioSchemaVersion)
    throw Error(ErrorCode::kSchemaVersionMismatch, where + ": unsupported schema_version");

  Scenario s;
  try {
    s.geometry_seed = j.at("geometry_seed").get<std::uint64_t>();
    s.style = {j.at("style").at("id").get<int>(), j.at("style").at("name").get<std::string>()};
    const json& map = j.at("map");
    s.family = enum_from(map.at("family").get<std::string>(),
                         {MapFamily::kStraight, MapFamily::kCurve, MapFamily::kIntersection});
    s.route_lane = map.at("route_lane").get<int>();
    for (const auto& ring : map.at("drivable")) {
      geom::Polygond poly;
      for (const auto& p : ring) poly.ring.push_back(point_from(p));
      s.drivable.push_back(std::move(poly));
    }
    for (const auto& lane : map.at("lanes")) s.lanes.push_back({polyline_from(lane)});
    for (const auto& l : j.at("lights")) {
      TrafficLight light{polyline_from(l.at("stop_line")), {}};
      for (const auto& p : l.at("phase"))
        light.phase.push_back(enum_from(p.get<std::string>(), {LightPhase::kRed, LightPhase::kGreen}));
      s.lights.push_back(std::move(light));
    }
    for (const auto& a : j.at("agents"))
      s.agents.push_back({enum_from(a.at("kind").get<std::string>(), {AgentKind::kVehicle, AgentKind::kPedestrian}),
                          a.at("half_length").get<double>(), a.at("half_width").get<double>(),
                          trajectory_from(a.at("logged"))});
    const json& ego = j.at("ego");
    s.ego_history = trajectory_from(ego.at("history"));
    s.ego_half_length = ego.at("half_length").get<double>();
    s.ego_half_width = ego.at("half_width").get<double>();
    s.goal_command = enum_from(ego.at("goal_command").get<std::string>(),
                               {Command::kLeft, Command::kStraight, Command::kRight});
    s.expert = trajectory_from(j.at("expert"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidationError, where + ": " + e.what());
  }
  validate(s, registry);
  return s;
}

}  // namespace

std::string scenario_to_string(const Scenario& s) { return scenario_json(s).dump(); }

Scenario scenario_from_string(const std::string& text, const StyleRegistry& registry) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidationError, std::string("scenario text: ") + e.what());
  }
  return scenario_from_json(j, registry, "scenario text");
}

std::uint64_t scenario_hash(const Scenario& s) {
  const std::string text = scenario_to_string(s);
  return fnv1a(text.data(), text.size());
}

void write_scenario(const Scenario& s, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  f << scenario_json(s).dump(1) << '\n';
  if (!f) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

Scenario read_scenario(const std::filesystem::path& path, const StyleRegistry& registry) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidationError, path.string() + ": " + e.what());
  }
  return scenario_from_json(j, registry, path.string());
}

}  // namespace navrobust::scenario
