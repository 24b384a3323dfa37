#pragma once

// The EPDMS engine: nine sub-metrics over a rollout trace, the human-expert
// penalty filter and the product-times-weighted-mean aggregation.

#include <optional>

#include "navrobust/scenario.hpp"
#include "navrobust/sim.hpp"

namespace navrobust::metrics {

/// Thresholds for the sub-metrics. All of them are conventions of this engine.
struct MetricConfig {
  double ttc_horizon = 1.0;
  double ttc_step = 0.1;
  double lk_max_offset = 0.5;
  double lk_max_duration = 1.0;
  double ddc_low = 2.0;
  double ddc_high = 6.0;
  double moving_speed = 0.2;
  double max_accel = 2.4;
  double max_jerk = 4.0;
  double max_yaw_rate = 0.95;
  double comfort_dt = 0.5;  // comfort terms are sampled at this step, aligned to t = 0
  double ec_max_rms_accel = 1.0;
  double ec_shift = 0.5;  // time offset of the previous plan
  double ep_min_expert_progress = 0.1;
  double lane_half_width = 1.75;
};

struct SubMetricScores {
  double nc = 1.0, dac = 1.0, ddc = 1.0, tlc = 1.0;
  double ttc = 1.0, ep = 1.0, lk = 1.0, hc = 1.0, ec = 1.0;

  static constexpr std::size_t kCount = 9;
  static constexpr const char* kNames[kCount] = {"nc", "dac", "ddc", "tlc", "ttc", "ep", "lk", "hc", "ec"};

  double operator[](std::size_t i) const;
  double& operator[](std::size_t i);

  bool operator==(const SubMetricScores&) const = default;
};

struct EpdmsWeights {
  double ttc = 5.0, ep = 5.0, lk = 2.0, hc = 1.0, ec = 1.0;
};

struct EpdmsResult {
  SubMetricScores scores;
  double epdms = 1.0;
};

double score_nc(const sim::RolloutTrace& trace);
double score_dac(const sim::RolloutTrace& trace, const scenario::Scenario& s);
double score_ddc(const sim::RolloutTrace& trace, const scenario::Scenario& s, const MetricConfig& cfg = {});
double score_tlc(const sim::RolloutTrace& trace, const scenario::Scenario& s);
double score_ttc(const sim::RolloutTrace& trace, const MetricConfig& cfg = {});
double score_ep(const sim::RolloutTrace& trace, const scenario::Scenario& s, const MetricConfig& cfg = {});
double score_lk(const sim::RolloutTrace& trace, const scenario::Scenario& s, const MetricConfig& cfg = {});
double score_hc(const sim::RolloutTrace& trace, const scenario::Scenario& s, const MetricConfig& cfg = {});
double score_ec(const sim::RolloutTrace& trace, const std::optional<geom::Trajectoryd>& prev_plan,
                const MetricConfig& cfg = {});

/// Counter-direction distance travelled (the quantity DDC thresholds).
double counter_direction_distance(const sim::RolloutTrace& trace, const scenario::Scenario& s,
                                  const MetricConfig& cfg = {});

/// Every sub-metric, before the human filter.
SubMetricScores score_all(const sim::RolloutTrace& trace, const scenario::Scenario& s, const MetricConfig& cfg = {},
                          const std::optional<geom::Trajectoryd>& prev_plan = std::nullopt);

/// Penalties the expert also incurs in the same scenario are ignored.
SubMetricScores apply_human_filter(const SubMetricScores& scores, const SubMetricScores& expert_scores);

double aggregate_epdms(const SubMetricScores& scores, const EpdmsWeights& w = {});

/// Relative degradation (origin - ood) / origin.
double drop_rate(double epdms_origin, double epdms_ood);

/// Scores the expert itself; the reference for the human filter.
SubMetricScores expert_scores(const scenario::Scenario& s, const MetricConfig& cfg = {}, bool reactive = false,
                              const sim::IdmParams& idm = {});

/// Full pipeline for one world-frame plan: rollout, sub-metrics, filter, aggregate.
EpdmsResult evaluate_plan(const scenario::Scenario& s, const geom::Trajectoryd& plan,
                          const SubMetricScores& expert, const MetricConfig& cfg = {},
                          const EpdmsWeights& w = {}, bool reactive = false, const sim::IdmParams& idm = {});

}  // namespace navrobust::metrics
