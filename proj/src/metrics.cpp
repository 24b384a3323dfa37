#include "navrobust/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace navrobust::metrics {

using geom::Pose2d;
using geom::Trajectoryd;
using geom::Vec2d;
using scenario::Scenario;
using sim::RolloutTrace;

double SubMetricScores::operator[](std::size_t i) const {
  return const_cast<SubMetricScores&>(*this)[i];
}

double& SubMetricScores::operator[](std::size_t i) {
  switch (i) {
    case 0: return nc;
    case 1: return dac;
    case 2: return ddc;
    case 3: return tlc;
    case 4: return ttc;
    case 5: return ep;
    case 6: return lk;
    case 7: return hc;
    case 8: return ec;
    default: throw Error(ErrorCode::kInvalidArgument, "sub-metric index out of range");
  }
}

double score_nc(const RolloutTrace& trace) {
  const bool fault = std::any_of(trace.collision_events.begin(), trace.collision_events.end(),
                                 [](const sim::CollisionEvent& e) { return e.at_fault; });
  return fault ? 0.0 : 1.0;
}

double score_dac(const RolloutTrace& trace, const Scenario&) { return trace.offroad_steps.empty() ? 1.0 : 0.0; }

double counter_direction_distance(const RolloutTrace& trace, const Scenario& s, const MetricConfig& cfg) {
  const auto& w = trace.ego_states.waypoints;
  const double dt = trace.ego_states.dt;
  double distance = 0.0;
  for (std::size_t i = 1; i < w.size(); ++i) {
    const double step = (w[i].position() - w[i - 1].position()).norm();
    if (step / dt <= cfg.moving_speed) continue;
    bool contained = false;
    bool all_opposed = true;
    for (const auto& lane : s.lanes) {
      const auto proj = geom::project_to_polyline(w[i].position(), lane.centerline);
      if (std::abs(proj.lateral) > cfg.lane_half_width) continue;
      contained = true;
      if (std::cos(w[i].heading - proj.tangent_heading) >= 0.0) all_opposed = false;
    }
    if (contained && all_opposed) distance += step;
  }
  return distance;
}

double score_ddc(const RolloutTrace& trace, const Scenario& s, const MetricConfig& cfg) {
  const double d = counter_direction_distance(trace, s, cfg);
  if (d <= cfg.ddc_low) return 1.0;
  if (d <= cfg.ddc_high) return 0.5;
  return 0.0;
}

double score_tlc(const RolloutTrace& trace, const Scenario&) {
  const bool red = std::any_of(trace.stopline_crossings.begin(), trace.stopline_crossings.end(),
                               [](const sim::StopLineCrossing& c) { return c.phase == scenario::LightPhase::kRed; });
  return red ? 0.0 : 1.0;
}

double score_ttc(const RolloutTrace& trace, const MetricConfig& cfg) {
  const auto substeps = static_cast<int>(std::llround(cfg.ttc_horizon / cfg.ttc_step));
  for (std::size_t i = 0; i < trace.steps(); ++i) {
    const geom::OrientedBoxd ego = trace.ego_box(i);
    const Vec2d ego_v = sim::velocity_at(trace.ego_states, i);
    if (ego_v.norm() < sim::kStationarySpeed) continue;
    const double ego_r = std::hypot(ego.half_length, ego.half_width);
    for (std::size_t j = 0; j < trace.agent_states.size(); ++j) {
      const geom::OrientedBoxd agent = trace.agent_box(j, i);
      const Vec2d agent_v = sim::velocity_at(trace.agent_states[j], i);
      const double reach = ego_r + std::hypot(agent.half_length, agent.half_width) +
                           (ego_v - agent_v).norm() * cfg.ttc_horizon;
      if ((ego.center.position() - agent.center.position()).norm() > reach) continue;
      for (int k = 0; k <= substeps; ++k) {
        const double tau = cfg.ttc_step * k;
        sim::CollisionContext ctx{ego, ego_v, agent, agent_v};
        ctx.ego.center.x += ego_v.x() * tau;
        ctx.ego.center.y += ego_v.y() * tau;
        ctx.agent.center.x += agent_v.x() * tau;
        ctx.agent.center.y += agent_v.y() * tau;
        // projected contacts the ego could not be blamed for do not count
        if (geom::obb_overlap(ctx.ego, ctx.agent) && sim::attribute_collision(ctx)) return 0.0;
      }
    }
  }
  return 1.0;
}

double score_ep(const RolloutTrace& trace, const Scenario& s, const MetricConfig& cfg) {
  const auto& route = s.route();
  const auto progress = [&](const Vec2d& a, const Vec2d& b) {
    return geom::project_to_polyline(b, route).arclength - geom::project_to_polyline(a, route).arclength;
  };
  const double expert_progress =
      progress(s.expert.front().position(), geom::sample_at(s.expert, trace.ego_states.duration()).position());
  if (expert_progress < cfg.ep_min_expert_progress) return 1.0;
  const double ego_progress = progress(trace.ego_states.front().position(), trace.ego_states.back().position());
  return std::clamp(ego_progress / expert_progress, 0.0, 1.0);
}

double score_lk(const RolloutTrace& trace, const Scenario& s, const MetricConfig& cfg) {
  const double dt = trace.ego_states.dt;
  int run = 0;
  for (const auto& w : trace.ego_states.waypoints) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& lane : s.lanes)
      nearest = std::min(nearest, std::abs(geom::project_to_polyline(w.position(), lane.centerline).lateral));
    run = nearest > cfg.lk_max_offset ? run + 1 : 0;
    if (run * dt > cfg.lk_max_duration + 1e-9) return 0.0;
  }
  return 1.0;
}

namespace {

// Samples `traj` every `step` seconds on the grid that contains t = `origin`,
// covering as much of the trajectory as the grid allows.
Trajectoryd sample_on_grid(const Trajectoryd& traj, double origin, double step, std::size_t* origin_index) {
  const double duration = traj.duration();
  const auto before = static_cast<long>(std::floor(origin / step + 1e-9));
  const auto after = static_cast<long>(std::floor((duration - origin) / step + 1e-9));
  Trajectoryd out{step, {}};
  for (long k = -before; k <= after; ++k) out.waypoints.push_back(geom::sample_at(traj, origin + step * k));
  if (origin_index) *origin_index = static_cast<std::size_t>(before);
  return out;
}

}  // namespace

double score_hc(const RolloutTrace& trace, const Scenario& s, const MetricConfig& cfg) {
  const auto& history = s.ego_history;
  if (std::abs(history.dt - trace.ego_states.dt) > 1e-12)
    throw Error(ErrorCode::kInvalidArgument, "history and rollout use different steps");
  Trajectoryd joined{trace.ego_states.dt, {}};
  joined.waypoints.assign(history.waypoints.begin(), history.waypoints.end() - 1);
  joined.waypoints.insert(joined.waypoints.end(), trace.ego_states.waypoints.begin(), trace.ego_states.waypoints.end());

  std::size_t first = 0;
  const Trajectoryd coarse = sample_on_grid(joined, history.duration(), cfg.comfort_dt, &first);
  const auto profile = geom::dynamics_profile(coarse);
  for (auto i = static_cast<Eigen::Index>(first); i < profile.speed.size(); ++i) {
    if (std::abs(profile.accel[i]) > cfg.max_accel || std::abs(profile.jerk[i]) > cfg.max_jerk ||
        std::abs(profile.yaw_rate[i]) > cfg.max_yaw_rate)
      return 0.0;
  }
  return 1.0;
}

double score_ec(const RolloutTrace& trace, const std::optional<Trajectoryd>& prev_plan, const MetricConfig& cfg) {
  if (!prev_plan) return 1.0;
  const Trajectoryd current = sample_on_grid(trace.ego_states, 0.0, cfg.comfort_dt, nullptr);
  if (prev_plan->duration() < cfg.ec_shift) return 1.0;
  std::size_t shift_index = 0;
  const Trajectoryd previous = sample_on_grid(*prev_plan, cfg.ec_shift, cfg.comfort_dt, &shift_index);
  const std::size_t overlap = std::min(current.size(), previous.size() - shift_index);
  if (overlap < 4 || current.size() < 4 || previous.size() < 4) return 1.0;
  const auto a = geom::dynamics_profile(current).accel;
  const auto b = geom::dynamics_profile(previous).accel;
  double sum = 0.0;
  for (std::size_t i = 0; i < overlap; ++i) {
    const double d = a[static_cast<Eigen::Index>(i)] - b[static_cast<Eigen::Index>(i + shift_index)];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(overlap)) <= cfg.ec_max_rms_accel ? 1.0 : 0.0;
}

SubMetricScores score_all(const RolloutTrace& trace, const Scenario& s, const MetricConfig& cfg,
                          const std::optional<Trajectoryd>& prev_plan) {
  SubMetricScores out;
  out.nc = score_nc(trace);
  out.dac = score_dac(trace, s);
  out.ddc = score_ddc(trace, s, cfg);
  out.tlc = score_tlc(trace, s);
  out.ttc = score_ttc(trace, cfg);
  out.ep = score_ep(trace, s, cfg);
  out.lk = score_lk(trace, s, cfg);
  out.hc = score_hc(trace, s, cfg);
  out.ec = score_ec(trace, prev_plan, cfg);
  return out;
}

SubMetricScores apply_human_filter(const SubMetricScores& scores, const SubMetricScores& expert) {
  SubMetricScores out = scores;
  if (expert.nc < 1.0) out.nc = 1.0;
  if (expert.dac < 1.0) out.dac = 1.0;
  if (expert.ddc < 1.0) out.ddc = 1.0;
  if (expert.tlc < 1.0) out.tlc = 1.0;
  return out;
}

double aggregate_epdms(const SubMetricScores& s, const EpdmsWeights& w) {
  const double weights[] = {w.ttc, w.ep, w.lk, w.hc, w.ec};
  double total = 0.0;
  for (double x : weights) {
    if (x < 0.0 || !std::isfinite(x)) throw Error(ErrorCode::kInvalidArgument, "weights must be finite and nonnegative");
    total += x;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kZeroWeightSum, "EPDMS weights sum to zero");
  const double penalty = s.nc * s.dac * s.ddc * s.tlc;
  const double weighted = w.ttc * s.ttc + w.ep * s.ep + w.lk * s.lk + w.hc * s.hc + w.ec * s.ec;
  return penalty * (weighted / total);
}

double drop_rate(double epdms_origin, double epdms_ood) {
  if (!(epdms_origin > 0.0)) throw Error(ErrorCode::kZeroOrigin, "drop rate needs a positive origin score");
  return (epdms_origin - epdms_ood) / epdms_origin;
}

namespace {

RolloutTrace rollout(const Scenario& s, const Trajectoryd& plan, bool reactive, const sim::IdmParams& idm) {
  return reactive ? sim::rollout_reactive(s, plan, idm) : sim::rollout_open_loop(s, plan);
}

}  // namespace

SubMetricScores expert_scores(const Scenario& s, const MetricConfig& cfg, bool reactive, const sim::IdmParams& idm) {
  return score_all(rollout(s, s.expert, reactive, idm), s, cfg);
}

EpdmsResult evaluate_plan(const Scenario& s, const Trajectoryd& plan, const SubMetricScores& expert,
                          const MetricConfig& cfg, const EpdmsWeights& w, bool reactive, const sim::IdmParams& idm) {
  EpdmsResult r;
  r.scores = apply_human_filter(score_all(rollout(s, plan, reactive, idm), s, cfg), expert);
  r.epdms = aggregate_epdms(r.scores, w);
  return r;
}

}  // namespace navrobust::metrics
