#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "navrobust/scenario.hpp"

using namespace navrobust;
using namespace navrobust::scenario;

TEST_CASE("generation is a pure function of the geometry seed") {
  const GeneratorConfig cfg;
  const StyleRegistry reg;
  for (std::uint64_t seed : {1ull, 7ull, 123456789ull}) {
    const Scenario a = generate_scenario(seed, reg.style(0), cfg);
    const Scenario b = generate_scenario(seed, reg.style(0), cfg);
    CHECK(a == b);
    const Scenario styled = generate_scenario(seed, reg.style(4), cfg);
    CHECK(styled.same_geometry(a));
    CHECK_FALSE(styled == a);
    CHECK(styled.style == reg.style(4));
    CHECK(scenario_hash(a) == scenario_hash(b));
    CHECK(scenario_hash(a) != scenario_hash(styled));
  }
}

TEST_CASE("generated scenes are valid and cover every map family") {
  const GeneratorConfig cfg;
  const StyleRegistry reg;
  std::set<MapFamily> families;
  std::set<Command> commands;
  for (std::uint64_t seed = 1; seed <= 150; ++seed) {
    const Scenario s = generate_scenario(seed, reg.style(0), cfg);
    CHECK_NOTHROW(validate(s, reg));
    CHECK(s.expert.dt == doctest::Approx(cfg.dt));
    CHECK(s.expert.duration() == doctest::Approx(cfg.horizon));
    CHECK(s.ego_history.duration() == doctest::Approx(cfg.history_duration));
    families.insert(s.family);
    commands.insert(s.goal_command);
  }
  CHECK(families.size() == 3);
  CHECK(commands.size() == 3);
}

TEST_CASE("validation rejects broken scenes") {
  const StyleRegistry reg;
  Scenario s = fixtures::straight_road();
  CHECK_NOTHROW(validate(s, reg));

  Scenario bad = s;
  bad.expert.waypoints[0].x += 0.5;
  CHECK_THROWS_AS(validate(bad, reg), Error);

  bad = s;
  bad.style = {3, "origin"};
  CHECK_THROWS_AS(validate(bad, reg), Error);

  bad = s;
  std::reverse(bad.drivable[0].ring.begin(), bad.drivable[0].ring.end());
  CHECK_THROWS_AS(validate(bad, reg), Error);

  bad = s;
  bad.route_lane = 5;
  CHECK_THROWS_AS(validate(bad, reg), Error);

  bad = s;
  bad.agents.push_back(fixtures::vehicle({20, 0, 0}, 5.0, 2.0));
  CHECK_THROWS_AS(validate(bad, reg), Error);
}

TEST_CASE("generator config validation") {
  GeneratorConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.dt = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.weight_straight = cfg.weight_curve = cfg.weight_intersection = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.min_speed = 20;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("style registry") {
  const StyleRegistry reg;
  CHECK(reg.size() == 11);
  CHECK(reg.name(0) == "origin");
  CHECK(reg.id_of(reg.name(7)) == 7);
  CHECK_THROWS_AS(reg.name(11), Error);
  CHECK_THROWS_AS(StyleRegistry({"rain", "origin"}), Error);
  CHECK_THROWS_AS(StyleRegistry({"origin", "a", "a"}), Error);
}

TEST_CASE("dataset split partitions geometry seeds and styles") {
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 333; ++i) seeds.push_back(1000 + 17 * i);
  const StyleRegistry reg;
  const DatasetSplit split = split_dataset(seeds, reg, 0.4, 5, 99);
  std::set<std::uint64_t> support(split.support_seeds.begin(), split.support_seeds.end());
  std::set<std::uint64_t> eval(split.evaluation_seeds.begin(), split.evaluation_seeds.end());
  CHECK(support.size() == 133);
  CHECK(support.size() + eval.size() == seeds.size());
  for (auto s : support) CHECK(eval.count(s) == 0);

  std::set<int> styles(split.seen_styles.begin(), split.seen_styles.end());
  styles.insert(split.unseen_styles.begin(), split.unseen_styles.end());
  CHECK(split.seen_styles.size() == 5);
  CHECK(styles.size() == 10);
  CHECK(styles.count(0) == 0);

  CHECK(split == split_dataset(seeds, reg, 0.4, 5, 99));
  CHECK_THROWS_AS(split_dataset(seeds, reg, 0.0, 5, 1), Error);
  CHECK_THROWS_AS(split_dataset(seeds, reg, 1.0, 5, 1), Error);
  CHECK_THROWS_AS(split_dataset(seeds, reg, 0.4, 10, 1), Error);
}

TEST_CASE("scenario files round trip exactly") {
  const StyleRegistry reg;
  const auto dir = std::filesystem::temp_directory_path() / "navrobust_scenario_test";
  std::filesystem::create_directories(dir);
  for (std::uint64_t seed : {3ull, 4ull, 5ull, 6ull}) {
    const Scenario s = generate_scenario(seed, reg.style(static_cast<int>(seed % 11)), GeneratorConfig{});
    const auto path = dir / (std::to_string(seed) + ".json");
    write_scenario(s, path);
    CHECK(read_scenario(path, reg) == s);
    CHECK(scenario_from_string(scenario_to_string(s), reg) == s);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("scenario reading reports schema and io failures") {
  const StyleRegistry reg;
  std::string text = scenario_to_string(fixtures::straight_road());
  const auto pos = text.find("\"schema_version\":1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 18, "\"schema_version\":2");
  try {
    scenario_from_string(text, reg);
    FAIL("expected a schema error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSchemaVersionMismatch);
  }
  CHECK_THROWS_AS(scenario_from_string("{}", reg), Error);
  try {
    read_scenario("/nonexistent/scene.json", reg);
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIoError);
  }
}
