#pragma once

// Hand-built scenes with known answers, shared by the unit tests.

#include "navrobust/scenario.hpp"

namespace fixtures {

using namespace navrobust;
using geom::Pose2d;
using geom::Trajectoryd;

/// Constant-velocity trajectory from `start` for `duration` seconds.
inline Trajectoryd straight(Pose2d start, double speed, double duration, double dt = 0.1) {
  Trajectoryd t{dt, {}};
  const auto n = static_cast<int>(std::lround(duration / dt));
  for (int i = 0; i <= n; ++i)
    t.waypoints.push_back({start.x + std::cos(start.heading) * speed * dt * i,
                           start.y + std::sin(start.heading) * speed * dt * i, start.heading});
  return t;
}

/// Two-lane road along +x: the ego lane at y = 0 and an opposing lane at
/// y = 3.5. The ego cruises at `speed` and arrives at the origin at t = 0.
inline scenario::Scenario straight_road(double speed = 10.0) {
  scenario::Scenario s;
  s.geometry_seed = 1;
  s.drivable.push_back({{{-100, -1.75}, {300, -1.75}, {300, 5.25}, {-100, 5.25}}});
  s.lanes.push_back({{{{-100, 0}, {300, 0}}}});
  s.lanes.push_back({{{{300, 3.5}, {-100, 3.5}}}});
  s.route_lane = 0;
  s.ego_history = straight({-2.0 * speed, 0, 0}, speed, 2.0);
  s.expert = straight({0, 0, 0}, speed, 4.0);
  return s;
}

inline scenario::Agent vehicle(Pose2d start, double speed, double duration = 4.0) {
  scenario::Agent a;
  a.logged = straight(start, speed, duration);
  return a;
}

}  // namespace fixtures
