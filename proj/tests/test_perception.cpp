#include <doctest.h>

#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "navrobust/perception.hpp"

using namespace navrobust;
using namespace navrobust::perception;

namespace {

int cell_of(double x, double y, const RasterConfig& cfg) {
  const int i = static_cast<int>((x - cfg.x_min) / cfg.cell_x());
  const int j = static_cast<int>((y - cfg.y_min) / cfg.cell_y());
  return i * cfg.width + j;
}

// Cross-style dispersion written directly from its definition.
double naive_dispersion(const std::vector<Matd>& per_style) {
  const auto n = per_style[0].rows(), d = per_style[0].cols();
  const auto k = static_cast<double>(per_style.size());
  double within = 0, between = 0;
  std::vector<double> grand(static_cast<std::size_t>(d), 0.0);
  Matd mean = Matd::Zero(n, d);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < d; ++c) {
      for (const auto& m : per_style) mean(r, c) += m(r, c) / k;
      grand[static_cast<std::size_t>(c)] += mean(r, c) / static_cast<double>(n);
    }
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < d; ++c) {
      for (const auto& m : per_style) within += (m(r, c) - mean(r, c)) * (m(r, c) - mean(r, c));
      between += (mean(r, c) - grand[static_cast<std::size_t>(c)]) * (mean(r, c) - grand[static_cast<std::size_t>(c)]);
    }
  return (within / (k * static_cast<double>(n))) / (between / static_cast<double>(n));
}

scenario::Scenario generated(std::uint64_t seed, int style) {
  const scenario::StyleRegistry reg;
  return scenario::generate_scenario(seed, reg.style(style), scenario::GeneratorConfig{});
}

}  // namespace

TEST_CASE("rasterization marks road, route, agents and command") {
  auto s = fixtures::straight_road();
  s.agents.push_back(fixtures::vehicle({20, 0, 0}, 5.0));
  const RasterConfig cfg;
  const Matd raw = rasterize(s, cfg);
  REQUIRE(raw.rows() == cfg.cells());
  REQUIRE(raw.cols() == kRawChannelCount);
  const int road = cell_of(20, 2, cfg);
  const int off = cell_of(20, 20, cfg);
  CHECK(raw(road, kDrivable) == doctest::Approx(1.0));
  CHECK(raw(off, kDrivable) == 0.0);
  CHECK(raw(cell_of(20, 0, cfg), kVehicleOccupancy) > 0.0);
  CHECK(raw(cell_of(40, 0, cfg), kVehicleOccupancy) == 0.0);
  // the route runs along +x, so its direction field is the mask times (1, 0)
  const int lane = cell_of(20, 1, cfg);
  CHECK(raw(lane, kRouteMask) > 0.0);
  CHECK(raw(lane, kRouteCos) == doctest::Approx(raw(lane, kRouteMask)));
  CHECK(raw(lane, kRouteSin) == doctest::Approx(0.0));
  CHECK(raw.col(kGoalStraight).minCoeff() == 1.0);
  CHECK(raw.col(kGoalLeft).maxCoeff() == 0.0);
  // texture channels copy geometry before any corruption
  CHECK(raw.col(kTextureDrivable) == raw.col(kDrivable));
}

TEST_CASE("cell centres follow the documented layout") {
  const RasterConfig cfg;
  const auto c = cell_center(0, 0, cfg);
  CHECK(c.x() == doctest::Approx(cfg.x_min + 0.5 * cfg.cell_x()));
  CHECK(c.y() == doctest::Approx(cfg.y_min + 0.5 * cfg.cell_y()));
}

TEST_CASE("style corruptions are deterministic permutations and identity at origin") {
  const CorruptionConfig cfg;
  const auto origin = style_corruption(0, cfg);
  CHECK(origin.is_identity());
  for (int id = 1; id <= 10; ++id) {
    const auto c = style_corruption(id, cfg);
    CHECK_FALSE(c.is_identity());
    CHECK(c == style_corruption(id, cfg));
    std::vector<int> sorted = c.permutation;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(kRawChannelCount);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(sorted == expect);
    // texture never leaks into geometry channels
    for (int ch = 0; ch < kGeometryChannels; ++ch) CHECK(c.permutation[static_cast<std::size_t>(ch)] < kGeometryChannels);
  }
  CHECK_FALSE(style_corruption(1, cfg) == style_corruption(2, cfg));
  const Matd raw = rasterize(fixtures::straight_road());
  CHECK(corrupt(raw, origin, RasterConfig{}) == raw);
  CHECK_THROWS_AS(corrupt(raw.leftCols(5), style_corruption(3, cfg), RasterConfig{}), Error);
}

TEST_CASE("apply_mixing equals the element-wise definition") {
  const ExtractorConfig cfg;
  const Mixing m = make_mixing(cfg);
  REQUIRE(m.weight.rows() == kRawChannelCount);
  REQUIRE(m.weight.cols() == cfg.channels);
  const Matd raw = rasterize(generated(5, 0));
  const Matd out = apply_mixing(raw, m);
  for (Eigen::Index r = 0; r < raw.rows(); r += 17)
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      double acc = m.bias(0, c);
      for (Eigen::Index k = 0; k < raw.cols(); ++k) acc += raw(r, k) * m.weight(k, c);
      CHECK(out(r, c) == doctest::Approx(std::tanh(acc)).epsilon(1e-12));
    }
  CHECK_THROWS_AS(apply_mixing(raw.leftCols(4), m), Error);
}

TEST_CASE("the constant eye is bitwise style invariant; the brittle extractor is not") {
  const scenario::StyleRegistry reg;
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    const auto origin = generated(seed, 0);
    const FeatureGrid ce0 = extract_constant_eye(origin);
    CHECK(extract_brittle(origin).grid == ce0.grid);
    for (int style = 1; style < static_cast<int>(reg.size()); ++style) {
      const auto s = generated(seed, style);
      CHECK(extract_constant_eye(s).grid == ce0.grid);
      CHECK_FALSE(extract_brittle(s).grid == ce0.grid);
      CHECK(extract_brittle(s).style == s.style);
    }
  }
}

TEST_CASE("token dispersion is zero for invariant tokens and matches its definition") {
  std::vector<Matd> ce, brittle;
  for (int style = 0; style < 6; ++style) {
    const auto s = generated(21, style);
    ce.push_back(extract_constant_eye(s).grid);
    brittle.push_back(extract_brittle(s).grid);
  }
  CHECK(token_dispersion(ce) == 0.0);
  CHECK(token_dispersion(brittle) > 0.0);
  CHECK(token_dispersion(brittle) == doctest::Approx(naive_dispersion(brittle)).epsilon(1e-10));
  CHECK_THROWS_AS(token_dispersion({ce[0]}), Error);
}

TEST_CASE("pca agrees with power iteration") {
  Rng rng(8);
  Matd x(300, 5);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double a = rng.normal() * 3.0, b = rng.normal();
    x.row(r) << a + 0.1 * rng.normal(), 2 * a, b, -b + 0.1 * rng.normal(), 0.1 * rng.normal();
  }
  const PcaResult p = pca_maps(x, 2);
  const Matd c = x.rowwise() - x.colwise().mean();
  const Matd cov = c.transpose() * c / static_cast<double>(x.rows());
  Eigen::VectorXd v = Eigen::VectorXd::Ones(5);
  for (int it = 0; it < 500; ++it) v = (cov * v).normalized();
  CHECK(std::abs(v.dot(p.components.col(0))) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.explained[0] == doctest::Approx(v.dot(cov * v) / cov.trace()).epsilon(1e-9));
  CHECK(p.explained[0] > p.explained[1]);
  CHECK(p.projection.rows() == 300);
  CHECK(p.components.col(0).cwiseAbs().maxCoeff() == p.components.col(0).maxCoeff());
  CHECK_THROWS_AS(pca_maps(x, 6), Error);
}

TEST_CASE("adapter shapes for every depth and aggregator setting") {
  const FeatureGrid f = extract_constant_eye(generated(9, 0));
  for (int depth : {2, 4, 8})
    for (bool cnn : {false, true}) {
      AdapterConfig cfg;
      cfg.depth = depth;
      cfg.cnn = cnn;
      nn::ParamSet<double> ps(3);
      init_adapter(ps, cfg);
      const Matd z = adapt(f, ps, cfg);
      CHECK(z.rows() == 256);
      CHECK(z.cols() == cfg.dim);
      CHECK(z.allFinite());
      nn::Tape<double> t;
      CHECK(t.value(adapt(t, ps, t.constant(f.grid), cfg)) == z);
    }
  AdapterConfig bad;
  bad.depth = 0;
  nn::ParamSet<double> ps(1);
  CHECK_THROWS_AS(init_adapter(ps, bad), Error);
}
