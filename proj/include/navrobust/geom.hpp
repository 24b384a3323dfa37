#pragma once

// Planar geometry for rollouts and metrics. All types are templated on the
// scalar; the rest of the library uses the `d` aliases at the bottom.
//
// Conventions: headings in (-pi, pi], counterclockwise polygons, and signed
// lateral offsets positive to the left of the direction of travel.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "navrobust/error.hpp"

namespace navrobust::geom {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Scalar normalize_angle(Scalar a) {
  const Scalar pi = Scalar(M_PI);
  const Scalar two_pi = Scalar(2 * M_PI);
  a = std::fmod(a, two_pi);
  if (a <= -pi) a += two_pi;
  if (a > pi) a -= two_pi;
  return a;
}

template <typename Scalar>
Scalar cross2(const Vec2<Scalar>& a, const Vec2<Scalar>& b) {
  return a.x() * b.y() - a.y() * b.x();
}

template <typename Scalar>
struct Pose2 {
  Scalar x{0};
  Scalar y{0};
  Scalar heading{0};

  Vec2<Scalar> position() const { return {x, y}; }
  Vec2<Scalar> forward() const { return {std::cos(heading), std::sin(heading)}; }

  bool operator==(const Pose2&) const = default;
};

/// Maps `local` (expressed in the frame of `frame`) into the parent frame.
template <typename Scalar>
Pose2<Scalar> compose(const Pose2<Scalar>& frame, const Pose2<Scalar>& local) {
  const Scalar c = std::cos(frame.heading), s = std::sin(frame.heading);
  return {frame.x + c * local.x - s * local.y, frame.y + s * local.x + c * local.y,
          normalize_angle(frame.heading + local.heading)};
}

/// Inverse of compose: expresses `world` in the frame of `frame`.
template <typename Scalar>
Pose2<Scalar> relative(const Pose2<Scalar>& frame, const Pose2<Scalar>& world) {
  const Scalar c = std::cos(frame.heading), s = std::sin(frame.heading);
  const Scalar dx = world.x - frame.x, dy = world.y - frame.y;
  return {c * dx + s * dy, -s * dx + c * dy, normalize_angle(world.heading - frame.heading)};
}

template <typename Scalar>
struct Trajectory {
  Scalar dt{0.1};
  std::vector<Pose2<Scalar>> waypoints;

  std::size_t size() const { return waypoints.size(); }
  Scalar duration() const {
    return waypoints.empty() ? Scalar(0) : dt * Scalar(waypoints.size() - 1);
  }
  const Pose2<Scalar>& operator[](std::size_t i) const { return waypoints[i]; }
  Pose2<Scalar>& operator[](std::size_t i) { return waypoints[i]; }
  const Pose2<Scalar>& front() const { return waypoints.front(); }
  const Pose2<Scalar>& back() const { return waypoints.back(); }

  bool operator==(const Trajectory&) const = default;
};

template <typename Scalar>
bool is_valid(const Trajectory<Scalar>& t) {
  if (!(t.dt > 0) || !std::isfinite(t.dt) || t.waypoints.size() < 2) return false;
  return std::all_of(t.waypoints.begin(), t.waypoints.end(), [](const Pose2<Scalar>& p) {
    return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.heading);
  });
}

template <typename Scalar>
void require_valid(const Trajectory<Scalar>& t, const char* what) {
  if (!is_valid(t)) throw Error(ErrorCode::kValidationError, std::string("invalid trajectory: ") + what);
}

template <typename Scalar>
struct OrientedBox {
  Pose2<Scalar> center;
  Scalar half_length{0};
  Scalar half_width{0};

  /// Counterclockwise starting at the front-left corner.
  std::array<Vec2<Scalar>, 4> corners() const {
    const Vec2<Scalar> f = center.forward() * half_length;
    const Vec2<Scalar> l = Vec2<Scalar>(-std::sin(center.heading), std::cos(center.heading)) * half_width;
    const Vec2<Scalar> c = center.position();
    return {c + f + l, c - f + l, c - f - l, c + f - l};
  }

  bool operator==(const OrientedBox&) const = default;
};

template <typename Scalar>
struct Polyline {
  std::vector<Vec2<Scalar>> vertices;

  Scalar length() const {
    Scalar total(0);
    for (std::size_t i = 1; i < vertices.size(); ++i) total += (vertices[i] - vertices[i - 1]).norm();
    return total;
  }

  bool operator==(const Polyline&) const = default;
};

template <typename Scalar>
struct Polygon {
  std::vector<Vec2<Scalar>> ring;

  bool operator==(const Polygon&) const = default;
};

template <typename Scalar>
Scalar signed_area(const Polygon<Scalar>& poly) {
  Scalar a(0);
  const std::size_t n = poly.ring.size();
  for (std::size_t i = 0; i < n; ++i) a += cross2(poly.ring[i], poly.ring[(i + 1) % n]);
  return a / 2;
}

template <typename Scalar>
bool segments_intersect(const Vec2<Scalar>& p1, const Vec2<Scalar>& p2, const Vec2<Scalar>& q1,
                        const Vec2<Scalar>& q2) {
  auto orient = [](const Vec2<Scalar>& a, const Vec2<Scalar>& b, const Vec2<Scalar>& c) {
    const Scalar v = cross2<Scalar>(b - a, c - a);
    return (v > 0) - (v < 0);
  };
  auto on_segment = [](const Vec2<Scalar>& a, const Vec2<Scalar>& b, const Vec2<Scalar>& c) {
    return std::min(a.x(), b.x()) <= c.x() && c.x() <= std::max(a.x(), b.x()) &&
           std::min(a.y(), b.y()) <= c.y() && c.y() <= std::max(a.y(), b.y());
  };
  const int o1 = orient(p1, p2, q1), o2 = orient(p1, p2, q2);
  const int o3 = orient(q1, q2, p1), o4 = orient(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

/// At least three vertices, counterclockwise, and no two non-adjacent edges touching.
template <typename Scalar>
bool is_valid(const Polygon<Scalar>& poly) {
  const std::size_t n = poly.ring.size();
  if (n < 3 || !(signed_area(poly) > 0)) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(poly.ring[i], poly.ring[(i + 1) % n], poly.ring[j], poly.ring[(j + 1) % n]))
        return false;
    }
  }
  return true;
}

template <typename Scalar>
bool is_valid(const Polyline<Scalar>& line) {
  if (line.vertices.size() < 2) return false;
  for (std::size_t i = 1; i < line.vertices.size(); ++i)
    if (line.vertices[i] == line.vertices[i - 1]) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Separating-axis overlap test. Only the two edge normals of each rectangle can
// separate; equality on an axis (touching) is reported as overlap.
template <typename Scalar>
bool obb_overlap(const OrientedBox<Scalar>& a, const OrientedBox<Scalar>& b) {
  const Vec2<Scalar> d = b.center.position() - a.center.position();
  const Vec2<Scalar> ax = a.center.forward();
  const Vec2<Scalar> ay(-ax.y(), ax.x());
  const Vec2<Scalar> bx = b.center.forward();
  const Vec2<Scalar> by(-bx.y(), bx.x());
  const std::array<Vec2<Scalar>, 4> axes{ax, ay, bx, by};
  for (const auto& axis : axes) {
    const Scalar ra = a.half_length * std::abs(ax.dot(axis)) + a.half_width * std::abs(ay.dot(axis));
    const Scalar rb = b.half_length * std::abs(bx.dot(axis)) + b.half_width * std::abs(by.dot(axis));
    if (std::abs(d.dot(axis)) > ra + rb) return false;
  }
  return true;
}

// Ray crossing along +x; points on any edge count as inside.
template <typename Scalar>
bool point_in_polygon(const Vec2<Scalar>& p, const Polygon<Scalar>& poly) {
  const std::size_t n = poly.ring.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2<Scalar>& a = poly.ring[j];
    const Vec2<Scalar>& b = poly.ring[i];
    const Vec2<Scalar> ab = b - a;
    const Vec2<Scalar> ap = p - a;
    if (cross2(ab, ap) == 0 && ap.dot(ab) >= 0 && ap.dot(ab) <= ab.squaredNorm()) return true;
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const Scalar x_cross = a.x() + (p.y() - a.y()) * ab.x() / ab.y();
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

template <typename Scalar>
struct PolylineProjection {
  Scalar arclength{0};
  Scalar lateral{0};
  Scalar tangent_heading{0};
};

/// Closest point on the polyline; ties go to the smaller arclength.
template <typename Scalar>
PolylineProjection<Scalar> project_to_polyline(const Vec2<Scalar>& p, const Polyline<Scalar>& line) {
  PolylineProjection<Scalar> best;
  Scalar best_dist2 = std::numeric_limits<Scalar>::infinity();
  Scalar s0(0);
  for (std::size_t i = 0; i + 1 < line.vertices.size(); ++i) {
    const Vec2<Scalar>& a = line.vertices[i];
    const Vec2<Scalar> ab = line.vertices[i + 1] - a;
    const Scalar len2 = ab.squaredNorm();
    const Scalar len = std::sqrt(len2);
    const Scalar u = std::clamp((p - a).dot(ab) / len2, Scalar(0), Scalar(1));
    const Vec2<Scalar> closest = a + u * ab;
    const Vec2<Scalar> offset = p - closest;
    const Scalar dist2 = offset.squaredNorm();
    if (dist2 < best_dist2) {
      best_dist2 = dist2;
      const Scalar side = cross2<Scalar>(ab, offset);
      best.arclength = s0 + u * len;
      best.lateral = (side < 0 ? Scalar(-1) : Scalar(1)) * std::sqrt(dist2);
      best.tangent_heading = std::atan2(ab.y(), ab.x());
    }
    s0 += len;
  }
  return best;
}

/// Point at arclength `s` (clamped to the line, extrapolated linearly past
/// its end when `extrapolate` is set) together with the local tangent.
template <typename Scalar>
Pose2<Scalar> point_at_arclength(const Polyline<Scalar>& line, Scalar s, bool extrapolate = false) {
  Scalar s0(0);
  const std::size_t n = line.vertices.size();
  if (s <= 0) {
    const Vec2<Scalar> ab = line.vertices[1] - line.vertices[0];
    const Vec2<Scalar> dir = ab.normalized();
    const Vec2<Scalar> p = line.vertices[0] + (extrapolate ? s : Scalar(0)) * dir;
    return {p.x(), p.y(), std::atan2(ab.y(), ab.x())};
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Vec2<Scalar> ab = line.vertices[i + 1] - line.vertices[i];
    const Scalar len = ab.norm();
    if (s <= s0 + len || i + 2 == n) {
      Scalar u = (s - s0) / len;
      if (!extrapolate) u = std::min(u, Scalar(1));
      const Vec2<Scalar> p = line.vertices[i] + u * ab;
      return {p.x(), p.y(), std::atan2(ab.y(), ab.x())};
    }
    s0 += len;
  }
  return {};
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Pose2<Scalar> interpolate(const Pose2<Scalar>& a, const Pose2<Scalar>& b, Scalar u) {
  return {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y),
          normalize_angle(a.heading + u * normalize_angle(b.heading - a.heading))};
}

/// Pose at time `t` seconds after the first waypoint (linear in position,
/// shortest arc in heading). Times past the end clamp to the last waypoint.
template <typename Scalar>
Pose2<Scalar> sample_at(const Trajectory<Scalar>& traj, Scalar t) {
  const Scalar u = t / traj.dt;
  if (u <= 0) return traj.waypoints.front();
  const auto last = static_cast<Scalar>(traj.size() - 1);
  if (u >= last) return traj.waypoints.back();
  Scalar k = std::floor(u);
  Scalar frac = u - k;
  const Scalar snap = Scalar(1e-9);
  if (frac > 1 - snap) {
    k += 1;
    frac = 0;
  }
  const auto i = static_cast<std::size_t>(k);
  if (frac < snap) return traj.waypoints[i];
  return interpolate(traj.waypoints[i], traj.waypoints[i + 1], frac);
}

/// Uniformly resamples the first `horizon` seconds at `dt_out`.
template <typename Scalar>
Trajectory<Scalar> resample_trajectory(const Trajectory<Scalar>& traj, Scalar dt_out, Scalar horizon) {
  if (!(dt_out > 0) || !(horizon > 0))
    throw Error(ErrorCode::kInvalidArgument, "resample needs positive dt and horizon");
  const Scalar tol = Scalar(1e-9) * std::max(Scalar(1), horizon);
  if (horizon > traj.duration() + tol)
    throw Error(ErrorCode::kHorizonExceedsData, "horizon exceeds trajectory duration");
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt_out));
  Trajectory<Scalar> out;
  out.dt = dt_out;
  out.waypoints.reserve(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) out.waypoints.push_back(sample_at(traj, dt_out * Scalar(i)));
  return out;
}

/// Derivative of uniformly sampled values: central differences inside,
/// second-order one-sided stencils at both ends (needs >= 3 samples).
template <typename Scalar>
VecX<Scalar> sampled_derivative(const VecX<Scalar>& f, Scalar dt) {
  const Eigen::Index n = f.size();
  VecX<Scalar> d(n);
  for (Eigen::Index i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) / (2 * dt);
  d[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * dt);
  d[n - 1] = (3 * f[n - 1] - 4 * f[n - 2] + f[n - 3]) / (2 * dt);
  return d;
}

template <typename Scalar>
struct DynamicsProfile {
  VecX<Scalar> speed;
  VecX<Scalar> accel;
  VecX<Scalar> jerk;
  VecX<Scalar> yaw_rate;
};

template <typename Scalar>
DynamicsProfile<Scalar> dynamics_profile(const Trajectory<Scalar>& traj) {
  const auto n = static_cast<Eigen::Index>(traj.size());
  if (n < 4) throw Error(ErrorCode::kTrajectoryTooShort, "dynamics profile needs at least 4 waypoints");
  VecX<Scalar> x(n), y(n), h(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x[i] = traj.waypoints[i].x;
    y[i] = traj.waypoints[i].y;
    h[i] = i == 0 ? traj.waypoints[0].heading
                  : h[i - 1] + normalize_angle(traj.waypoints[i].heading - traj.waypoints[i - 1].heading);
  }
  DynamicsProfile<Scalar> p;
  const VecX<Scalar> vx = sampled_derivative(x, traj.dt);
  const VecX<Scalar> vy = sampled_derivative(y, traj.dt);
  p.speed = (vx.array().square() + vy.array().square()).sqrt().matrix();
  p.accel = sampled_derivative(p.speed, traj.dt);
  p.jerk = sampled_derivative(p.accel, traj.dt);
  p.yaw_rate = sampled_derivative(h, traj.dt);
  return p;
}

/// Headings re-fit from positions: the first waypoint keeps `initial_heading`,
/// later ones take the chord through their neighbours; near-stationary
/// samples inherit the previous heading.
template <typename Scalar>
void refit_headings(Trajectory<Scalar>& traj, Scalar initial_heading = Scalar(0),
                    Scalar min_step = Scalar(1e-3)) {
  const std::size_t n = traj.size();
  Scalar prev = initial_heading;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      const auto& a = traj.waypoints[i - 1];
      const auto& b = traj.waypoints[i + 1 < n ? i + 1 : n - 1];
      const Scalar dx = b.x - a.x, dy = b.y - a.y;
      if (std::hypot(dx, dy) > min_step) prev = std::atan2(dy, dx);
    }
    traj.waypoints[i].heading = normalize_angle(prev);
  }
}

template <typename Scalar>
Trajectory<Scalar> transform(const Trajectory<Scalar>& traj, const Pose2<Scalar>& frame) {
  Trajectory<Scalar> out{traj.dt, {}};
  out.waypoints.reserve(traj.size());
  for (const auto& w : traj.waypoints) out.waypoints.push_back(compose(frame, w));
  return out;
}

template <typename Scalar>
Trajectory<Scalar> to_local(const Trajectory<Scalar>& traj, const Pose2<Scalar>& frame) {
  Trajectory<Scalar> out{traj.dt, {}};
  out.waypoints.reserve(traj.size());
  for (const auto& w : traj.waypoints) out.waypoints.push_back(relative(frame, w));
  return out;
}

using Vec2d = Vec2<double>;
using Pose2d = Pose2<double>;
using Trajectoryd = Trajectory<double>;
using OrientedBoxd = OrientedBox<double>;
using Polylined = Polyline<double>;
using Polygond = Polygon<double>;

}  // namespace navrobust::geom
