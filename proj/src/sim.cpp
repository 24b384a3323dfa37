#include "navrobust/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace navrobust::sim {

using geom::OrientedBoxd;
using geom::Polylined;
using geom::Pose2d;
using geom::Trajectoryd;
using geom::Vec2d;
using scenario::Scenario;

void IdmParams::validate() const {
  if (!(desired_speed > 0 && time_headway > 0 && min_gap > 0 && max_accel > 0 && comfort_decel > 0 && exponent > 0))
    throw Error(ErrorCode::kInvalidArgument, "IDM parameters must be positive");
}

double idm_accel(double speed, double gap, double closing_speed, const IdmParams& p) {
  if (!(gap > 0)) throw Error(ErrorCode::kNonPositiveGap, "IDM gap must be positive");
  const double dynamic = speed * p.time_headway + speed * closing_speed / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
  const double desired_gap = p.min_gap + std::max(0.0, dynamic);
  const double interaction = std::isinf(gap) ? 0.0 : (desired_gap / gap) * (desired_gap / gap);
  const double free_road = std::pow(speed / p.desired_speed, p.exponent);
  const double a = p.max_accel * (1.0 - free_road - interaction);
  return std::clamp(a, -2.0 * p.comfort_decel, p.max_accel);
}

Vec2d velocity_at(const Trajectoryd& traj, std::size_t step) {
  const std::size_t n = traj.size();
  if (n < 2) return Vec2d::Zero();
  const std::size_t lo = step == 0 ? 0 : step - 1;
  const std::size_t hi = std::min(step + 1, n - 1);
  return (traj.waypoints[hi].position() - traj.waypoints[lo].position()) / (traj.dt * static_cast<double>(hi - lo));
}

geom::Trajectoryd plan_to_world(const Scenario& s, const Trajectoryd& ego_frame_plan) {
  return geom::transform(ego_frame_plan, s.ego_pose());
}

bool impact_on_rear_face(const CollisionContext& ctx) {
  const Pose2d rel = geom::relative(ctx.ego.center, ctx.agent.center);
  return rel.x < 0.0 && -rel.x * ctx.ego.half_width >= std::abs(rel.y) * ctx.ego.half_length;
}

bool attribute_collision(const CollisionContext& ctx) {
  const double ego_speed = ctx.ego_velocity.norm();
  if (ego_speed < kStationarySpeed) return false;
  const double closing = ctx.agent_velocity.dot(ctx.ego.center.forward());
  if (impact_on_rear_face(ctx) && ego_speed <= closing) return false;
  return true;
}

CollisionContext collision_context(const RolloutTrace& trace, std::size_t step, int agent_index) {
  const auto j = static_cast<std::size_t>(agent_index);
  return {trace.ego_box(step), velocity_at(trace.ego_states, step), trace.agent_box(j, step),
          velocity_at(trace.agent_states[j], step)};
}

namespace {

bool inside_drivable(const Vec2d& p, const Scenario& s) {
  return std::any_of(s.drivable.begin(), s.drivable.end(),
                     [&](const geom::Polygond& poly) { return geom::point_in_polygon(p, poly); });
}

Trajectoryd execute_plan(const Scenario& s, const Trajectoryd& plan) {
  geom::require_valid(plan, "plan");
  if (std::abs(s.dt() - kSimDt) > 1e-12)
    throw Error(ErrorCode::kHorizonMismatch, "scenario step differs from the simulation step");
  const double horizon = plan.duration();
  if (horizon > s.expert.duration() + 1e-9)
    throw Error(ErrorCode::kHorizonMismatch, "plan horizon exceeds the expert horizon");
  const double rounded = kSimDt * std::floor(horizon / kSimDt + 1e-9);
  if (rounded < kSimDt) throw Error(ErrorCode::kHorizonMismatch, "plan shorter than one simulation step");
  return geom::resample_trajectory(plan, kSimDt, rounded);
}

// Fills collision, offroad and stop-line evidence once all states are known.
void record_events(const Scenario& s, RolloutTrace& trace) {
  const std::size_t steps = trace.steps();
  std::vector<bool> overlapping(trace.agent_states.size(), false);
  for (std::size_t i = 0; i < steps; ++i) {
    const OrientedBoxd ego = trace.ego_box(i);
    for (std::size_t j = 0; j < trace.agent_states.size(); ++j) {
      const bool hit = geom::obb_overlap(ego, trace.agent_box(j, i));
      if (hit && !overlapping[j]) {
        CollisionEvent e{kSimDt * static_cast<double>(i), i, static_cast<int>(j), true};
        e.at_fault = attribute_collision(collision_context(trace, i, static_cast<int>(j)));
        trace.collision_events.push_back(e);
      }
      overlapping[j] = hit;
    }
    const auto corners = ego.corners();
    if (!std::all_of(corners.begin(), corners.end(), [&](const Vec2d& c) { return inside_drivable(c, s); }))
      trace.offroad_steps.push_back(i);
    if (i == 0) continue;
    const Pose2d& prev = trace.ego_states.waypoints[i - 1];
    const Pose2d& cur = trace.ego_states.waypoints[i];
    const Vec2d f0 = prev.position() + prev.forward() * trace.ego_half_length;
    const Vec2d f1 = cur.position() + cur.forward() * trace.ego_half_length;
    for (std::size_t l = 0; l < s.lights.size(); ++l) {
      const auto& line = s.lights[l].stop_line.vertices;
      for (std::size_t k = 0; k + 1 < line.size(); ++k) {
        // the segment from the previous front point is half-open so a front
        // resting exactly on the line is counted once
        if (f0 != f1 && geom::segments_intersect(f0, f1, line[k], line[k + 1]) &&
            !geom::segments_intersect(f0, f0, line[k], line[k + 1])) {
          const auto phase = s.lights[l].phase[std::min(i, s.lights[l].phase.size() - 1)];
          trace.stopline_crossings.push_back({kSimDt * static_cast<double>(i), i, static_cast<int>(l), phase});
          break;
        }
      }
    }
  }
}

RolloutTrace make_trace(const Scenario& s, Trajectoryd ego) {
  RolloutTrace trace;
  trace.ego_states = std::move(ego);
  trace.ego_half_length = s.ego_half_length;
  trace.ego_half_width = s.ego_half_width;
  for (const auto& a : s.agents) trace.agent_half_extents.emplace_back(a.half_length, a.half_width);
  return trace;
}

Polylined logged_path(const Trajectoryd& log) {
  Polylined path;
  for (const auto& w : log.waypoints)
    if (path.vertices.empty() || (w.position() - path.vertices.back()).norm() > 1e-6)
      path.vertices.push_back(w.position());
  return path;
}

}  // namespace

RolloutTrace rollout_open_loop(const Scenario& s, const Trajectoryd& plan) {
  RolloutTrace trace = make_trace(s, execute_plan(s, plan));
  const std::size_t steps = trace.steps();
  for (const auto& a : s.agents) {
    Trajectoryd t{kSimDt, {}};
    t.waypoints.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) t.waypoints.push_back(a.logged.waypoints[std::min(i, a.logged.size() - 1)]);
    trace.agent_states.push_back(std::move(t));
  }
  record_events(s, trace);
  return trace;
}

RolloutTrace rollout_reactive(const Scenario& s, const Trajectoryd& plan, const IdmParams& p) {
  p.validate();
  RolloutTrace trace = make_trace(s, execute_plan(s, plan));
  const std::size_t steps = trace.steps();
  const std::size_t n = s.agents.size();

  struct LaneAgent {
    bool reactive = false;
    Polylined path;
    double s = 0.0;
    double v = 0.0;
    IdmParams idm;
  };
  std::vector<LaneAgent> lane(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& a = s.agents[j];
    const double v0 = (a.logged.waypoints[1].position() - a.logged.waypoints[0].position()).norm() / a.logged.dt;
    Polylined path = logged_path(a.logged);
    lane[j].reactive = a.kind == scenario::AgentKind::kVehicle && v0 > kStationarySpeed && path.vertices.size() >= 2;
    if (!lane[j].reactive) continue;
    lane[j].path = std::move(path);
    lane[j].v = v0;
    lane[j].idm = p;
    if (p.desired_speed_from_log) lane[j].idm.desired_speed = v0;
  }
  trace.agent_states.assign(n, Trajectoryd{kSimDt, {}});

  for (std::size_t i = 0; i < steps; ++i) {
    std::vector<OrientedBoxd> boxes(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto& a = s.agents[j];
      Pose2d pose;
      if (lane[j].reactive) {
        pose = geom::point_at_arclength(lane[j].path, lane[j].s, true);
        if (lane[j].s <= 0.0) pose.heading = a.logged.waypoints[0].heading;
      } else {
        pose = a.logged.waypoints[std::min(i, a.logged.size() - 1)];
      }
      trace.agent_states[j].waypoints.push_back(pose);
      boxes[j] = {pose, a.half_length, a.half_width};
    }
    if (i + 1 == steps) break;

    const OrientedBoxd ego = trace.ego_box(i);
    const Vec2d ego_velocity = velocity_at(trace.ego_states, i);
    for (std::size_t j = 0; j < n; ++j) {
      if (!lane[j].reactive) continue;
      LaneAgent& la = lane[j];
      double gap = std::numeric_limits<double>::infinity();
      double lead_speed = 0.0;
      auto consider = [&](const OrientedBoxd& other, const Vec2d& other_velocity) {
        const auto proj = geom::project_to_polyline(other.center.position(), la.path);
        const double lane_half = 1.75;
        if (std::abs(proj.lateral) > lane_half + other.half_width * 0.5) return;
        const double ds = proj.arclength - la.s;
        if (ds <= 0.0) return;
        const double g = ds - s.agents[j].half_length - other.half_length;
        if (g < gap) {
          gap = g;
          lead_speed = other_velocity.dot(Pose2d{0, 0, proj.tangent_heading}.forward());
        }
      };
      consider(ego, ego_velocity);
      for (std::size_t k = 0; k < n; ++k) {
        if (k == j) continue;
        const Vec2d vk = lane[k].reactive
                             ? Vec2d(boxes[k].center.forward() * lane[k].v)
                             : velocity_at(s.agents[k].logged, std::min(i, s.agents[k].logged.size() - 1));
        consider(boxes[k], vk);
      }
      const double accel = idm_accel(la.v, std::max(gap, 1e-3), la.v - lead_speed, la.idm);
      const double v_next = std::max(0.0, la.v + accel * kSimDt);
      la.s += 0.5 * (la.v + v_next) * kSimDt;
      la.v = v_next;
    }
  }
  record_events(s, trace);
  return trace;
}

}  // namespace navrobust::sim
