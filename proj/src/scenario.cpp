#include "navrobust/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "navrobust/metrics.hpp"
#include "navrobust/random.hpp"
#include "navrobust/sim.hpp"

namespace navrobust::scenario {

using geom::Polygond;
using geom::Polylined;
using geom::Pose2d;
using geom::Trajectoryd;
using geom::Vec2d;

// ---------------------------------------------------------------------------
// Styles

StyleRegistry::StyleRegistry()
    : names_{"origin",      "heavy_rain",    "heavy_snow",    "dawn_sunrise", "dusk_sunset", "light_dust",
             "vintage_photo", "digital_noise", "motion_blur", "carla_toy",    "dappled_light"} {}

StyleRegistry::StyleRegistry(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty() || names_.front() != "origin")
    throw Error(ErrorCode::kConfigError, "style registry must start with \"origin\"");
  for (std::size_t i = 0; i < names_.size(); ++i)
    for (std::size_t j = i + 1; j < names_.size(); ++j)
      if (names_[i] == names_[j]) throw Error(ErrorCode::kConfigError, "duplicate style name " + names_[i]);
}

const std::string& StyleRegistry::name(int id) const {
  if (!contains(id)) throw Error(ErrorCode::kValidationError, "unknown style id " + std::to_string(id));
  return names_[static_cast<std::size_t>(id)];
}

int StyleRegistry::id_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw Error(ErrorCode::kValidationError, "unknown style name " + name);
  return static_cast<int>(it - names_.begin());
}

std::string to_string(AgentKind k) { return k == AgentKind::kVehicle ? "vehicle" : "pedestrian"; }
std::string to_string(LightPhase p) { return p == LightPhase::kRed ? "red" : "green"; }
std::string to_string(Command c) {
  switch (c) {
    case Command::kLeft: return "left";
    case Command::kStraight: return "straight";
    case Command::kRight: return "right";
  }
  return "straight";
}
std::string to_string(MapFamily f) {
  switch (f) {
    case MapFamily::kStraight: return "straight";
    case MapFamily::kCurve: return "curve";
    case MapFamily::kIntersection: return "intersection";
  }
  return "straight";
}

bool Scenario::same_geometry(const Scenario& other) const {
  Scenario a = *this;
  a.style = other.style;
  return a == other;
}

void validate(const Scenario& s, const StyleRegistry& registry) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kValidationError, what); };
  if (!registry.contains(s.style.id)) fail("style id " + std::to_string(s.style.id) + " outside registry");
  if (registry.name(s.style.id) != s.style.name) fail("style name does not match registry");
  geom::require_valid(s.ego_history, "ego history");
  geom::require_valid(s.expert, "expert");
  const Pose2d& a = s.ego_history.back();
  const Pose2d& b = s.expert.front();
  if (std::abs(a.x - b.x) > 1e-9 || std::abs(a.y - b.y) > 1e-9 ||
      std::abs(geom::normalize_angle(a.heading - b.heading)) > 1e-9)
    fail("expert does not start at the end of the ego history");
  if (s.drivable.empty()) fail("no drivable area");
  for (const auto& p : s.drivable)
    if (p.ring.size() < 3 || !(geom::signed_area(p) > 0)) fail("drivable polygon must be counterclockwise");
  if (s.lanes.empty() || s.route_lane < 0 || static_cast<std::size_t>(s.route_lane) >= s.lanes.size())
    fail("route lane out of range");
  for (const auto& l : s.lanes)
    if (!geom::is_valid(l.centerline)) fail("degenerate lane centerline");
  for (const auto& light : s.lights) {
    if (light.phase.size() != s.expert.size()) fail("light phase length differs from step count");
    if (!geom::is_valid(light.stop_line)) fail("degenerate stop line");
  }
  for (const auto& agent : s.agents) {
    geom::require_valid(agent.logged, "agent log");
    if (agent.logged.duration() + 1e-9 < s.expert.duration()) fail("agent log shorter than horizon");
    if (!(agent.half_length > 0) || !(agent.half_width > 0)) fail("agent extents must be positive");
  }
  if (!(s.ego_half_length > 0) || !(s.ego_half_width > 0)) fail("ego extents must be positive");
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfigError, what); };
  if (!(dt > 0) || !(horizon > 0) || !(history_duration >= 3 * dt)) fail("non-positive time parameters");
  if (!(lane_width > 2 * ego_half_width)) fail("lane must be wider than the ego vehicle");
  if (!(min_speed > 0) || !(max_speed >= min_speed)) fail("invalid speed range");
  if (!(min_radius > 1.5 * lane_width + shoulder + 1) || !(max_radius >= min_radius)) fail("invalid radius range");
  if (weight_straight < 0 || weight_curve < 0 || weight_intersection < 0 ||
      weight_straight + weight_curve + weight_intersection <= 0)
    fail("invalid map family weights");
  if (max_attempts < 1) fail("max_attempts must be positive");
}

// ---------------------------------------------------------------------------
// Map construction helpers

namespace {

Polylined line_between(const Vec2d& a, const Vec2d& b, double spacing) {
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(len / spacing)));
  Polylined out;
  for (int i = 0; i <= n; ++i) out.vertices.push_back(a + (b - a) * (static_cast<double>(i) / n));
  return out;
}

/// Arc starting at `start` with `heading`, signed curvature (left positive).
Polylined arc(const Vec2d& start, double heading, double curvature, double length, double spacing) {
  const int n = std::max(1, static_cast<int>(std::ceil(length / spacing)));
  Polylined out;
  for (int i = 0; i <= n; ++i) {
    const double s = length * i / n;
    const double th = heading + curvature * s;
    const Vec2d p = start + Vec2d(std::sin(th) - std::sin(heading), std::cos(heading) - std::cos(th)) / curvature;
    out.vertices.push_back(p);
  }
  return out;
}

void append(Polylined& dst, const Polylined& src) {
  for (const auto& v : src.vertices)
    if (dst.vertices.empty() || (v - dst.vertices.back()).norm() > 1e-9) dst.vertices.push_back(v);
}

/// Offsets every vertex along the averaged left normal of its adjacent segments.
Polylined offset(const Polylined& line, double lateral) {
  Polylined out;
  const std::size_t n = line.vertices.size();
  for (std::size_t i = 0; i < n; ++i) {
    Vec2d t = Vec2d::Zero();
    if (i > 0) t += (line.vertices[i] - line.vertices[i - 1]).normalized();
    if (i + 1 < n) t += (line.vertices[i + 1] - line.vertices[i]).normalized();
    t.normalize();
    out.vertices.push_back(line.vertices[i] + lateral * Vec2d(-t.y(), t.x()));
  }
  return out;
}

Polylined reversed(Polylined line) {
  std::reverse(line.vertices.begin(), line.vertices.end());
  return line;
}

/// Road band around `center`: right edge forward then left edge backward (CCW).
Polygond corridor(const Polylined& center, double left, double right) {
  Polygond poly;
  const Polylined r = offset(center, -right);
  const Polylined l = offset(center, left);
  poly.ring = r.vertices;
  for (auto it = l.vertices.rbegin(); it != l.vertices.rend(); ++it) poly.ring.push_back(*it);
  return poly;
}

struct Route {
  Polylined line;
  std::vector<double> cum;        // arclength at each vertex
  std::vector<double> curvature;  // unsigned, per vertex

  explicit Route(Polylined l) : line(std::move(l)) {
    const std::size_t n = line.vertices.size();
    cum.assign(n, 0.0);
    curvature.assign(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) cum[i] = cum[i - 1] + (line.vertices[i] - line.vertices[i - 1]).norm();
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const Vec2d a = line.vertices[i] - line.vertices[i - 1];
      const Vec2d b = line.vertices[i + 1] - line.vertices[i];
      const double turn = std::abs(geom::normalize_angle(std::atan2(b.y(), b.x()) - std::atan2(a.y(), a.x())));
      curvature[i] = turn / (0.5 * (a.norm() + b.norm()));
    }
  }

  double max_curvature(double s_from, double s_to) const {
    double k = 0.0;
    for (std::size_t i = 0; i < cum.size(); ++i)
      if (cum[i] >= s_from && cum[i] <= s_to) k = std::max(k, curvature[i]);
    return k;
  }
};

Trajectoryd path_trajectory(const Polylined& path, double s0, const std::vector<double>& speeds, double dt) {
  Trajectoryd t{dt, {}};
  double s = s0;
  for (std::size_t i = 0; i < speeds.size(); ++i) {
    t.waypoints.push_back(geom::point_at_arclength(path, s, true));
    if (i + 1 < speeds.size()) s += 0.5 * (speeds[i] + speeds[i + 1]) * dt;
  }
  return t;
}

/// Speed samples for an agent starting at `v` and braking at `decel` after `t_brake`.
std::vector<double> speed_profile(double v, double decel, double t_brake, std::size_t steps, double dt) {
  std::vector<double> out(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = dt * static_cast<double>(i);
    out[i] = t <= t_brake ? v : std::max(0.0, v - decel * (t - t_brake));
  }
  return out;
}

struct Layout {
  Scenario scene;
  double desired_speed = 10.0;
  double initial_accel = 0.0;
  std::vector<bool> agent_predictable;  // expert anticipates future incursions
};

Layout build_layout(Rng& rng, const GeneratorConfig& cfg) {
  Layout out;
  Scenario& s = out.scene;
  const double w = cfg.lane_width;
  const double edge_right = w / 2 + cfg.shoulder;
  const double edge_left = 1.5 * w + cfg.shoulder;
  const auto steps = static_cast<std::size_t>(std::llround(cfg.horizon / cfg.dt)) + 1;

  const double total = cfg.weight_straight + cfg.weight_curve + cfg.weight_intersection;
  const double pick = rng.uniform() * total;
  s.family = pick < cfg.weight_straight                       ? MapFamily::kStraight
             : pick < cfg.weight_straight + cfg.weight_curve ? MapFamily::kCurve
                                                              : MapFamily::kIntersection;

  double v = rng.uniform(cfg.min_speed, cfg.max_speed);
  const double a0 = rng.uniform(-0.3, 0.3);
  double desired = std::min(cfg.max_speed + 1.0, v + rng.uniform(-1.0, 2.0));
  double stop_line_x = 0.0;
  Polylined opposing;

  const Vec2d start(-60.0, 0.0);
  if (s.family == MapFamily::kStraight) {
    Polylined route = line_between(start, {150.0, 0.0}, 10.0);
    opposing = reversed(offset(route, w));
    s.drivable.push_back(corridor(route, edge_left, edge_right));
    s.lanes = {{route}, {opposing}};
    s.goal_command = Command::kStraight;
  } else if (s.family == MapFamily::kCurve) {
    const double radius = rng.uniform(cfg.min_radius, cfg.max_radius);
    const double curvature = (rng.bernoulli(0.5) ? 1.0 : -1.0) / radius;
    v = std::min(v, std::sqrt(cfg.max_lateral_accel * radius) * 0.95);
    desired = std::min(desired, std::sqrt(cfg.max_lateral_accel * radius) * 0.95);
    Polylined route = line_between(start, {0.0, 0.0}, 10.0);
    const double arc_len = std::min(140.0, 0.8 * M_PI * radius);
    append(route, arc({0.0, 0.0}, 0.0, curvature, arc_len, 2.0));
    opposing = reversed(offset(route, w));
    s.drivable.push_back(corridor(route, edge_left, edge_right));
    s.lanes = {{route}, {opposing}};
    s.goal_command = Command::kStraight;
  } else {
    const double r = rng.uniform();
    const Command command = r < 0.34 ? Command::kLeft : (r < 0.67 ? Command::kStraight : Command::kRight);
    const double d = rng.uniform(command == Command::kStraight ? 18.0 : 24.0, 42.0);
    if (command != Command::kStraight) v = std::min(v, 9.0);
    const double x1 = d - w - cfg.shoulder, x2 = d + w + cfg.shoulder;
    const double y1 = -edge_right, y2 = edge_left;
    const double c = 4.0;
    Polygond cross;
    cross.ring = {{-60, y1}, {x1 - c, y1}, {x1, y1 - c}, {x1, -60}, {x2, -60},  {x2, y1 - c},
                  {x2 + c, y1}, {150, y1}, {150, y2},     {x2 + c, y2}, {x2, y2 + c}, {x2, 60},
                  {x1, 60},    {x1, y2 + c}, {x1 - c, y2}, {-60, y2}};
    s.drivable.push_back(cross);
    const Polylined eastbound = line_between(start, {150.0, 0.0}, 10.0);
    const Polylined westbound = reversed(offset(eastbound, w));
    const Polylined northbound = line_between({d + w / 2, -60.0}, {d + w / 2, 60.0}, 10.0);
    const Polylined southbound = line_between({d - w / 2, 60.0}, {d - w / 2, -60.0}, 10.0);
    Polylined route;
    if (command == Command::kStraight) {
      route = eastbound;
    } else if (command == Command::kRight) {
      const double radius = 7.0;
      const double x0 = d - w / 2 - radius;
      route = line_between(start, {x0, 0.0}, 10.0);
      append(route, arc({x0, 0.0}, 0.0, -1.0 / radius, 0.5 * M_PI * radius, 1.0));
      append(route, line_between({d - w / 2, -radius}, {d - w / 2, -60.0}, 10.0));
    } else {
      const double radius = 11.0;
      const double x0 = d + w / 2 - radius;
      route = line_between(start, {x0, 0.0}, 10.0);
      append(route, arc({x0, 0.0}, 0.0, 1.0 / radius, 0.5 * M_PI * radius, 1.0));
      append(route, line_between({d + w / 2, radius}, {d + w / 2, 60.0}, 10.0));
    }
    s.lanes = {{route}, {westbound}, {northbound}, {southbound}};
    if (command != Command::kStraight) s.lanes.push_back({eastbound});
    opposing = westbound;
    s.goal_command = command;

    stop_line_x = x1 - c - 1.0;
    TrafficLight light;
    light.stop_line.vertices = {{stop_line_x, -w / 2}, {stop_line_x, w / 2}};
    light.phase.assign(steps, LightPhase::kGreen);
    const double front_gap = stop_line_x - cfg.ego_half_length;
    const bool can_stop = front_gap > v * v / (2.0 * 1.2) + cfg.idm_min_gap + 3.0;
    if (can_stop && rng.bernoulli(cfg.p_red_light)) {
      const auto green_at = static_cast<std::size_t>(rng.uniform(0.4, 1.6) * static_cast<double>(steps));
      for (std::size_t i = 0; i < std::min(green_at, steps); ++i) light.phase[i] = LightPhase::kRed;
    }
    s.lights.push_back(light);
  }
  s.route_lane = 0;

  // ego history along the straight lead-in: x(t) = v t + a0 t^2 / 2 for t <= 0
  const auto hist_steps = static_cast<std::size_t>(std::llround(cfg.history_duration / cfg.dt));
  s.ego_history.dt = cfg.dt;
  for (std::size_t k = 0; k <= hist_steps; ++k) {
    const double t = -cfg.dt * static_cast<double>(hist_steps - k);
    s.ego_history.waypoints.push_back({v * t + 0.5 * a0 * t * t, 0.0, 0.0});
  }
  s.ego_half_length = cfg.ego_half_length;
  s.ego_half_width = cfg.ego_half_width;
  out.desired_speed = std::max(desired, 0.5 * v);
  out.initial_accel = a0;

  const Route route(s.route());
  const double s_ego = geom::project_to_polyline<double>({0.0, 0.0}, route.line).arclength;
  const bool red_now = !s.lights.empty() && s.lights.front().phase.front() == LightPhase::kRed;

  auto vehicle = [&](const Polylined& path, double s0, const std::vector<double>& speeds) {
    Agent a;
    a.kind = AgentKind::kVehicle;
    a.half_length = rng.uniform(2.1, 2.5);
    a.half_width = rng.uniform(0.85, 1.0);
    a.logged = path_trajectory(path, s0, speeds, cfg.dt);
    return a;
  };

  if (!red_now && rng.bernoulli(cfg.p_lead_vehicle)) {
    const double gap = rng.uniform(8.0, 30.0) + 0.8 * v;
    const double u = rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.4 * v, std::min(v + 1.5, cfg.max_speed));
    const double decel = rng.bernoulli(0.35) ? rng.uniform(0.3, 1.5) : 0.0;
    Agent a = vehicle(route.line, s_ego + gap + cfg.ego_half_length + 2.3,
                      speed_profile(u, decel, rng.uniform(0.0, 2.0), steps, cfg.dt));
    s.agents.push_back(a);
    out.agent_predictable.push_back(false);
  }
  if (rng.bernoulli(cfg.p_oncoming_vehicle)) {
    const double ahead = rng.uniform(5.0, 70.0);
    const double u = rng.uniform(3.0, 11.0);
    const double s0 = geom::project_to_polyline<double>({0.0, w}, opposing).arclength - ahead;
    s.agents.push_back(vehicle(opposing, std::max(0.0, s0), speed_profile(u, 0.0, 0.0, steps, cfg.dt)));
    out.agent_predictable.push_back(false);
  }
  if (s.family == MapFamily::kIntersection && red_now && rng.bernoulli(0.6)) {
    const Polylined& nb = s.lanes[2].centerline;
    const double u = rng.uniform(5.0, 10.0);
    const double y0 = rng.uniform(-45.0, -10.0);
    s.agents.push_back(vehicle(nb, y0 + 60.0, speed_profile(u, 0.0, 0.0, steps, cfg.dt)));
    out.agent_predictable.push_back(false);
  }
  if (rng.bernoulli(cfg.p_pedestrian)) {
    const double s_p = s_ego + rng.uniform(12.0, 35.0);
    const Pose2d base = geom::point_at_arclength(route.line, s_p, true);
    const Vec2d normal(-std::sin(base.heading), std::cos(base.heading));
    const double speed = rng.uniform(1.0, 1.5);
    const double t_start = rng.uniform(0.0, 1.0);
    const double lat0 = -(edge_right + 1.0), lat_end = edge_left + 1.0;
    Agent p;
    p.kind = AgentKind::kPedestrian;
    p.half_length = 0.3;
    p.half_width = 0.3;
    p.logged.dt = cfg.dt;
    const double walk_heading = geom::normalize_angle(base.heading + M_PI / 2);
    for (std::size_t i = 0; i < steps; ++i) {
      const double t = cfg.dt * static_cast<double>(i);
      const double lat = std::min(lat_end, lat0 + speed * std::max(0.0, t - t_start));
      const Vec2d pos = base.position() + lat * normal;
      p.logged.waypoints.push_back({pos.x(), pos.y(), walk_heading});
    }
    s.agents.push_back(p);
    out.agent_predictable.push_back(true);
  }
  return out;
}

// Scripted expert: pure-pursuit steering on the route centerline and IDM speed
// control against the nearest obstacle (lead agents, predicted crossings, red
// stop lines), with bounded acceleration and jerk.
Trajectoryd drive_expert(const Layout& layout, const GeneratorConfig& cfg) {
  const Scenario& s = layout.scene;
  const Route route(s.route());
  const auto steps = static_cast<std::size_t>(std::llround(cfg.horizon / cfg.dt)) + 1;
  sim::IdmParams idm;
  idm.time_headway = cfg.idm_time_headway;
  idm.min_gap = cfg.idm_min_gap;
  idm.max_accel = cfg.idm_max_accel;
  idm.comfort_decel = cfg.idm_comfort_decel;

  Pose2d pose = s.ego_history.back();
  const auto& h = s.ego_history.waypoints;
  double v = (h[h.size() - 1].position() - h[h.size() - 2].position()).norm() / cfg.dt;
  v += 0.5 * layout.initial_accel * cfg.dt;
  double accel = layout.initial_accel;

  const double stop_s =
      s.lights.empty() ? 0.0 : geom::project_to_polyline(s.lights.front().stop_line.vertices[0], route.line).arclength;

  Trajectoryd out{cfg.dt, {}};
  for (std::size_t i = 0; i < steps; ++i) {
    out.waypoints.push_back(pose);
    if (i + 1 == steps) break;
    const double t = cfg.dt * static_cast<double>(i);
    const double s_ego = geom::project_to_polyline(pose.position(), route.line).arclength;

    const double look = std::max(25.0, v * v / 2.0 + 15.0);
    const double kappa = route.max_curvature(s_ego, s_ego + look);
    double v_des = layout.desired_speed;
    if (kappa > 1e-6) v_des = std::min(v_des, 0.9 * std::sqrt(cfg.max_lateral_accel / kappa));
    idm.desired_speed = std::max(v_des, 0.5);

    double gap = std::numeric_limits<double>::infinity();
    double lead_speed = 0.0;
    const double corridor = s.ego_half_width + 0.6;
    for (std::size_t j = 0; j < s.agents.size(); ++j) {
      const Agent& a = s.agents[j];
      const double horizon = layout.agent_predictable[j] ? 3.0 : 0.0;
      for (double tau = 0.0; tau <= horizon + 1e-9; tau += 0.2) {
        const auto k = std::min(a.logged.size() - 1, static_cast<std::size_t>(std::llround((t + tau) / cfg.dt)));
        const Pose2d& ap = a.logged.waypoints[k];
        const auto proj = geom::project_to_polyline(ap.position(), route.line);
        if (std::abs(proj.lateral) > corridor + a.half_width) continue;
        const double g = proj.arclength - s_ego - s.ego_half_length - a.half_length;
        if (proj.arclength <= s_ego || g >= gap) continue;
        gap = g;
        lead_speed = tau > 0 ? 0.0 : std::max(0.0, sim::velocity_at(a.logged, k).dot(geom::Pose2d{0, 0, proj.tangent_heading}.forward()));
      }
    }
    if (!s.lights.empty()) {
      const auto k = std::min(i + 1, s.lights.front().phase.size() - 1);
      const bool red = s.lights.front().phase[i] == LightPhase::kRed || s.lights.front().phase[k] == LightPhase::kRed;
      const double g = stop_s - s_ego - s.ego_half_length + idm.min_gap - 0.5;
      if (red && s_ego + s.ego_half_length < stop_s && g < gap) {
        gap = g;
        lead_speed = 0.0;
      }
    }
    double a_cmd = sim::idm_accel(v, std::max(gap, 0.05), v - lead_speed, idm);
    a_cmd = std::clamp(a_cmd, -cfg.max_decel, cfg.idm_max_accel);
    const double da = std::clamp(a_cmd - accel, -cfg.max_jerk * cfg.dt, cfg.max_jerk * cfg.dt);
    accel += da;
    double v_next = v + accel * cfg.dt;
    if (v_next < 0.0) {
      v_next = 0.0;
      accel = 0.0;
    }

    const double lookahead = std::max(3.0, 0.6 * v + 2.0);
    const Pose2d target = geom::point_at_arclength(route.line, s_ego + lookahead, true);
    const double alpha = std::atan2(target.y - pose.y, target.x - pose.x) - pose.heading;
    const double curvature = 2.0 * std::sin(alpha) / lookahead;
    const double v_mid = 0.5 * (v + v_next);
    const double heading_mid = pose.heading + 0.5 * v_mid * curvature * cfg.dt;
    pose.x += v_mid * std::cos(heading_mid) * cfg.dt;
    pose.y += v_mid * std::sin(heading_mid) * cfg.dt;
    pose.heading = geom::normalize_angle(pose.heading + v_mid * curvature * cfg.dt);
    v = v_next;
  }
  return out;
}

bool expert_is_clean(const Scenario& s) {
  const sim::RolloutTrace trace = sim::rollout_open_loop(s, s.expert);
  if (!trace.collision_events.empty()) return false;
  const metrics::SubMetricScores m = metrics::score_all(trace, s);
  return m.nc == 1.0 && m.dac == 1.0 && m.ddc == 1.0 && m.tlc == 1.0 && m.ttc == 1.0 && m.lk == 1.0 &&
         m.hc == 1.0;
}

}  // namespace

Scenario generate_scenario(std::uint64_t geometry_seed, const StyleId& style, const GeneratorConfig& config) {
  config.validate();
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    Rng rng(derive_seed(geometry_seed, static_cast<std::uint64_t>(attempt)));
    Layout layout = build_layout(rng, config);
    layout.scene.geometry_seed = geometry_seed;
    layout.scene.expert = drive_expert(layout, config);
    if (!expert_is_clean(layout.scene)) continue;
    layout.scene.style = style;
    return layout.scene;
  }
  throw Error(ErrorCode::kGenerationFailed,
              "no clean expert after " + std::to_string(config.max_attempts) + " attempts for seed " +
                  std::to_string(geometry_seed));
}

DatasetSplit split_dataset(const std::vector<std::uint64_t>& seeds, const StyleRegistry& styles,
                           double support_fraction, int seen_count, std::uint64_t rng_seed) {
  if (!(support_fraction > 0.0 && support_fraction < 1.0))
    throw Error(ErrorCode::kInvalidFraction, "support fraction must lie in (0, 1)");
  const int non_origin = static_cast<int>(styles.size()) - 1;
  if (seen_count < 0 || seen_count >= non_origin)
    throw Error(ErrorCode::kInvalidArgument, "seen style count must be below the number of non-origin styles");

  Rng rng(rng_seed);
  std::vector<std::uint64_t> shuffled = seeds;
  std::sort(shuffled.begin(), shuffled.end());
  shuffled.erase(std::unique(shuffled.begin(), shuffled.end()), shuffled.end());
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
  const auto n_support = static_cast<std::size_t>(std::llround(support_fraction * static_cast<double>(shuffled.size())));

  DatasetSplit split;
  split.support_seeds.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_support));
  split.evaluation_seeds.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_support), shuffled.end());
  std::sort(split.support_seeds.begin(), split.support_seeds.end());
  std::sort(split.evaluation_seeds.begin(), split.evaluation_seeds.end());

  std::vector<int> ids(static_cast<std::size_t>(non_origin));
  std::iota(ids.begin(), ids.end(), 1);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
  split.seen_styles.assign(ids.begin(), ids.begin() + seen_count);
  split.unseen_styles.assign(ids.begin() + seen_count, ids.end());
  std::sort(split.seen_styles.begin(), split.seen_styles.end());
  std::sort(split.unseen_styles.begin(), split.unseen_styles.end());
  return split;
}

}  // namespace navrobust::scenario
