#include <doctest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "navrobust/vocabulary.hpp"

using namespace navrobust;
using namespace navrobust::vocabulary;
using geom::Trajectoryd;

namespace {

// Three well separated bundles: straight, left arc and right arc.
std::vector<Trajectoryd> bundles(Rng& rng, int per_bundle) {
  std::vector<Trajectoryd> out;
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < per_bundle; ++i) {
      Trajectoryd t{0.5, {}};
      const double lateral = (b - 1) * 6.0 + 0.2 * rng.normal();
      for (int k = 0; k <= 8; ++k) {
        const double u = k / 8.0;
        t.waypoints.push_back({30.0 * u + 0.2 * rng.normal(), lateral * u * u, 0.0});
      }
      geom::refit_headings(t);
      out.push_back(t);
    }
  return out;
}

double brute_nearest(const std::vector<Trajectoryd>& cands, const Trajectoryd& q, int* index) {
  double best = 1e300;
  for (std::size_t c = 0; c < cands.size(); ++c) {
    double d = 0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      d += std::pow(cands[c][k].x - q[k].x, 2) + std::pow(cands[c][k].y - q[k].y, 2);
    }
    if (d < best) {
      best = d;
      *index = static_cast<int>(c);
    }
  }
  return std::sqrt(best);
}

}  // namespace

TEST_CASE("flatten and unflatten round trip positions") {
  const auto t = fixtures::straight({0, 0, 0}, 4.0, 2.0, 0.5);
  const Matd f = flatten_xy({t});
  REQUIRE(f.cols() == 10);
  CHECK(f(0, 2) == doctest::Approx(2.0));
  const Trajectoryd back = unflatten_xy(f.row(0), 0.5);
  for (std::size_t k = 0; k < t.size(); ++k) {
    CHECK(back[k].x == t[k].x);
    CHECK(back[k].y == t[k].y);
  }
  CHECK_THROWS_AS(flatten_xy({t, fixtures::straight({0, 0, 0}, 4.0, 1.0, 0.5)}), Error);
}

TEST_CASE("k-means recovers separated bundles and never increases its objective") {
  Rng rng(5);
  const auto data = bundles(rng, 40);
  const auto r = kmeans_trajectories(data, 3, 17);
  for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-9);
  for (int b = 0; b < 3; ++b)
    for (int i = 1; i < 40; ++i) CHECK(r.assignment[static_cast<std::size_t>(b * 40 + i)] == r.assignment[static_cast<std::size_t>(b * 40)]);
  CHECK(r.assignment[0] != r.assignment[40]);
  CHECK(r.assignment[40] != r.assignment[80]);
  CHECK(r.vocabulary == kmeans_trajectories(data, 3, 17).vocabulary);
  CHECK_THROWS_AS(kmeans_trajectories(data, 121, 1), Error);
}

TEST_CASE("k-means handles duplicated points without empty clusters") {
  std::vector<Trajectoryd> same(10, fixtures::straight({0, 0, 0}, 5.0, 4.0, 0.5));
  same.push_back(fixtures::straight({0, 0, 0}, 8.0, 4.0, 0.5));
  const auto r = kmeans_trajectories(same, 3, 2);
  CHECK(r.vocabulary.size() == 3);
  for (const auto& c : r.vocabulary.candidates) CHECK(geom::is_valid(c));
}

TEST_CASE("the dense vocabulary always contains the full stop") {
  Rng rng(6);
  const auto data = bundles(rng, 30);
  const auto v = build_dense_vocabulary(data, 16, 4);
  CHECK(v.size() == 17);
  CHECK(v.candidates.back() == full_stop(9, 0.5));
  int idx = -1;
  for (int q = 0; q < 20; ++q) {
    const auto& t = data[static_cast<std::size_t>(q * 4)];
    const double d = brute_nearest(v.candidates, t, &idx);
    CHECK(nearest_candidate(v, t) == idx);
    CHECK(d >= 0);
  }
  double total = 0;
  for (const auto& t : data) total += brute_nearest(v.candidates, t, &idx);
  CHECK(mean_min_distance(v, data) == doctest::Approx(total / static_cast<double>(data.size())));
}

TEST_CASE("vocabulary files round trip") {
  Rng rng(7);
  const auto v = build_dense_vocabulary(bundles(rng, 10), 5, 1);
  const auto path = std::filesystem::temp_directory_path() / "navrobust_vocab_test.json";
  write_vocabulary(v, path);
  CHECK(read_vocabulary(path) == v);
  std::filesystem::remove(path);
  CHECK(hash_trajectories(v.candidates) != 0);
}

TEST_CASE("tokenizer rows match the single-trajectory path") {
  nn::ParamSet<double> ps(9);
  init_tokenizer(ps, 9, 12);
  Rng rng(8);
  const auto data = bundles(rng, 2);
  nn::Tape<double> t;
  const Matd all = t.value(tokenize(t, ps, t.constant(flatten_xy(data))));
  REQUIRE(all.rows() == 6);
  REQUIRE(all.cols() == 12);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Eigen::RowVectorXd one = tokenize_trajectory(data[i], ps);
    CHECK((one - all.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff() < 1e-14);
  }
}
