#pragma once

// Rollout of a single ego plan against the scenario's agents.
//
// Plans are given in the world frame and executed exactly (positions and
// headings interpolated to the simulation step). Agents either replay their
// logs (open loop) or, when lane-bound vehicles, follow their logged path
// with IDM longitudinal control (reactive).

#include <vector>

#include "navrobust/geom.hpp"
#include "navrobust/scenario.hpp"

namespace navrobust::sim {

struct CollisionEvent {
  double t = 0.0;
  std::size_t step = 0;
  int agent_index = 0;
  bool at_fault = true;

  bool operator==(const CollisionEvent&) const = default;
};

struct StopLineCrossing {
  double t = 0.0;
  std::size_t step = 0;
  int light_index = 0;
  scenario::LightPhase phase = scenario::LightPhase::kGreen;

  bool operator==(const StopLineCrossing&) const = default;
};

struct RolloutTrace {
  geom::Trajectoryd ego_states;
  std::vector<geom::Trajectoryd> agent_states;
  std::vector<CollisionEvent> collision_events;
  std::vector<std::size_t> offroad_steps;
  std::vector<StopLineCrossing> stopline_crossings;
  double ego_half_length = 2.4;
  double ego_half_width = 1.0;
  std::vector<geom::Vec2d> agent_half_extents;  // (half_length, half_width)

  std::size_t steps() const { return ego_states.size(); }
  geom::OrientedBoxd ego_box(std::size_t step) const {
    return {ego_states.waypoints[step], ego_half_length, ego_half_width};
  }
  geom::OrientedBoxd agent_box(std::size_t agent, std::size_t step) const {
    return {agent_states[agent].waypoints[step], agent_half_extents[agent].x(), agent_half_extents[agent].y()};
  }

  bool operator==(const RolloutTrace&) const = default;
};

struct IdmParams {
  double desired_speed = 10.0;  // v0
  double time_headway = 1.5;    // T
  double min_gap = 2.0;         // s0
  double max_accel = 1.5;       // a
  double comfort_decel = 2.0;   // b
  double exponent = 4.0;        // delta
  /// Use each agent's logged initial speed as its desired speed.
  bool desired_speed_from_log = true;

  void validate() const;
};

/// IDM acceleration; `closing_speed` is own speed minus leader speed. The
/// result is clamped to [-2b, a]. Pass an infinite gap for free road.
double idm_accel(double speed, double gap, double closing_speed, const IdmParams& p);

inline constexpr double kSimDt = 0.1;

RolloutTrace rollout_open_loop(const scenario::Scenario& s, const geom::Trajectoryd& plan);
RolloutTrace rollout_reactive(const scenario::Scenario& s, const geom::Trajectoryd& plan, const IdmParams& p);

/// Expresses an ego-frame plan in the scenario's world frame.
geom::Trajectoryd plan_to_world(const scenario::Scenario& s, const geom::Trajectoryd& ego_frame_plan);

struct CollisionContext {
  geom::OrientedBoxd ego;
  geom::Vec2d ego_velocity = geom::Vec2d::Zero();
  geom::OrientedBoxd agent;
  geom::Vec2d agent_velocity = geom::Vec2d::Zero();
};

inline constexpr double kStationarySpeed = 0.1;

/// The ego is not at fault when it was stationary at impact, or when it was
/// hit on its rear face by an agent closing at least as fast as the ego moves.
bool attribute_collision(const CollisionContext& ctx);

/// True when the agent's centre lies in the rear sector of the ego box.
bool impact_on_rear_face(const CollisionContext& ctx);

CollisionContext collision_context(const RolloutTrace& trace, std::size_t step, int agent_index);

/// Velocity of a sampled trajectory at `step` by finite differences.
geom::Vec2d velocity_at(const geom::Trajectoryd& traj, std::size_t step);

}  // namespace navrobust::sim
