#include <doctest.h>

#include "fixtures.hpp"
#include "navrobust/metrics.hpp"

using namespace navrobust;
using namespace navrobust::metrics;
using fixtures::straight;

namespace {

SubMetricScores make(double nc, double dac, double ddc, double tlc, double ttc, double ep, double lk, double hc,
                     double ec) {
  SubMetricScores s;
  s.nc = nc, s.dac = dac, s.ddc = ddc, s.tlc = tlc, s.ttc = ttc, s.ep = ep, s.lk = lk, s.hc = hc, s.ec = ec;
  return s;
}

geom::Trajectoryd lateral_path(double speed, double y_end, double ramp_end) {
  geom::Trajectoryd t{0.1, {}};
  for (int i = 0; i <= 40; ++i) {
    const double u = std::min(1.0, 0.1 * i / ramp_end);
    t.waypoints.push_back({speed * 0.1 * i, y_end * u, 0.0});
  }
  geom::refit_headings(t);
  return t;
}

}  // namespace

TEST_CASE("aggregate_epdms on the reference vector") {
  const auto s = make(1, 1, 1, 1, 1, 0.5, 1, 1, 1);
  // (5 + 2.5 + 2 + 1 + 1) / 14
  CHECK(std::abs(aggregate_epdms(s) - 11.5 / 14.0) < 1e-12);
  for (int k = 0; k < 4; ++k) {
    SubMetricScores z = s;
    z[static_cast<std::size_t>(k)] = 0.0;
    CHECK(aggregate_epdms(z) == 0.0);
  }
  SubMetricScores half = s;
  half.ddc = 0.5;
  CHECK(aggregate_epdms(half) == doctest::Approx(0.5 * 11.5 / 14.0));
  CHECK_THROWS_AS(aggregate_epdms(s, EpdmsWeights{0, 0, 0, 0, 0}), Error);
  CHECK_THROWS_AS(aggregate_epdms(s, EpdmsWeights{-1, 5, 2, 1, 1}), Error);
}

TEST_CASE("sub-score indexing follows the declared order") {
  const auto s = make(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9);
  for (std::size_t i = 0; i < SubMetricScores::kCount; ++i) CHECK(s[i] == doctest::Approx(0.1 * (i + 1)));
  CHECK(std::string(SubMetricScores::kNames[5]) == "ep");
}

TEST_CASE("drop rate") {
  CHECK(drop_rate(0.8, 0.6) == doctest::Approx(0.25));
  CHECK(drop_rate(0.5, 0.6) == doctest::Approx(-0.2));
  CHECK_THROWS_AS(drop_rate(0.0, 0.5), Error);
}

TEST_CASE("the human filter forgives only penalties the expert also takes") {
  const auto planner = make(0, 0, 0.5, 0, 0, 0, 0, 0, 0);
  const auto expert = make(0, 1, 0.5, 1, 0, 1, 1, 1, 1);
  const auto f = apply_human_filter(planner, expert);
  CHECK(f.nc == 1.0);
  CHECK(f.dac == 0.0);
  CHECK(f.ddc == 1.0);
  CHECK(f.tlc == 0.0);
  CHECK(f.ttc == 0.0);  // weighted terms are never filtered
}

TEST_CASE("the expert on an empty road scores perfectly") {
  const auto s = fixtures::straight_road();
  const auto e = expert_scores(s);
  CHECK(e == SubMetricScores{});
  CHECK(evaluate_plan(s, s.expert, e).epdms == doctest::Approx(1.0));
}

TEST_CASE("ego progress is relative to the expert") {
  const auto s = fixtures::straight_road();
  const auto trace = sim::rollout_open_loop(s, straight({0, 0, 0}, 5.0, 4.0));
  CHECK(score_ep(trace, s) == doctest::Approx(0.5));
  const auto fast = sim::rollout_open_loop(s, straight({0, 0, 0}, 15.0, 4.0));
  CHECK(score_ep(fast, s) == 1.0);
  auto parked = fixtures::straight_road(0.0);
  CHECK(score_ep(sim::rollout_open_loop(parked, straight({0, 0, 0}, 0.0, 4.0)), parked) == 1.0);
}

TEST_CASE("driving against traffic is graded by distance") {
  auto s = fixtures::straight_road();
  // reverse along the opposing lane at 1 m/s for 4 s: 4 m counter-direction
  geom::Trajectoryd t = straight({0, 3.5, 0}, 1.0, 4.0);
  s.ego_history = straight({-2, 3.5, 0}, 1.0, 2.0);
  s.expert = t;
  auto trace = sim::rollout_open_loop(s, t);
  CHECK(counter_direction_distance(trace, s) == doctest::Approx(4.0));
  CHECK(score_ddc(trace, s) == 0.5);
  trace = sim::rollout_open_loop(s, straight({0, 3.5, 0}, 2.0, 4.0));
  CHECK(score_ddc(trace, s) == 0.0);
  trace = sim::rollout_open_loop(s, straight({0, 3.5, 0}, 0.4, 4.0));
  CHECK(score_ddc(trace, s) == 1.0);
}

TEST_CASE("lane keeping tolerates short excursions only") {
  const auto s = fixtures::straight_road();
  // offset 1.0 m from t = 2 s: 2 s outside the band fails
  CHECK(score_lk(sim::rollout_open_loop(s, lateral_path(10, 1.0, 2.0)), s) == 0.0);
  // offset 0.4 m stays inside the 0.5 m band
  CHECK(score_lk(sim::rollout_open_loop(s, lateral_path(10, 0.4, 2.0)), s) == 1.0);
}

TEST_CASE("history comfort catches harsh braking") {
  const auto s = fixtures::straight_road();
  geom::Trajectoryd brake{0.1, {}};
  double x = 0, v = 10;
  for (int i = 0; i <= 40; ++i) {
    brake.waypoints.push_back({x, 0, 0});
    v = std::max(0.0, v - 0.6);
    x += v * 0.1;
  }
  CHECK(score_hc(sim::rollout_open_loop(s, brake), s) == 0.0);
  CHECK(score_hc(sim::rollout_open_loop(s, s.expert), s) == 1.0);
}

TEST_CASE("extended comfort compares against the shifted previous plan") {
  const auto s = fixtures::straight_road();
  const auto trace = sim::rollout_open_loop(s, s.expert);
  CHECK(score_ec(trace, std::nullopt) == 1.0);
  CHECK(score_ec(trace, straight({-5, 0, 0}, 10.0, 4.0)) == 1.0);
  geom::Trajectoryd accel{0.1, {}};
  for (int i = 0; i <= 40; ++i) {
    const double t = 0.1 * i;
    accel.waypoints.push_back({10 * t + 1.5 * t * t, 0, 0});
  }
  CHECK(score_ec(trace, accel) == 0.0);
}

TEST_CASE("time to collision flags a closing lead within the horizon") {
  auto s = fixtures::straight_road();
  s.agents.push_back(fixtures::vehicle({12, 0, 0}, 4.0));
  // the gap of 12 - 4.7 = 7.3 m closes at 6 m/s
  const auto trace = sim::rollout_open_loop(s, straight({0, 0, 0}, 10.0, 0.5));
  CHECK(score_ttc(trace) == 0.0);
  auto far = fixtures::straight_road();
  far.agents.push_back(fixtures::vehicle({40, 0, 0}, 10.0));
  CHECK(score_ttc(sim::rollout_open_loop(far, far.expert)) == 1.0);
}

TEST_CASE("red light violations and collisions zero the score") {
  auto s = fixtures::straight_road();
  scenario::TrafficLight light;
  light.stop_line = {{{20, -1.75}, {20, 1.75}}};
  light.phase.assign(41, scenario::LightPhase::kRed);
  s.lights.push_back(light);
  const auto stop = straight({0, 0, 0}, 3.0, 4.0);
  const auto expert = score_all(sim::rollout_open_loop(s, stop), s);
  const auto run = evaluate_plan(s, straight({0, 0, 0}, 10.0, 4.0), expert);
  CHECK(run.scores.tlc == 0.0);
  CHECK(run.epdms == 0.0);
}
