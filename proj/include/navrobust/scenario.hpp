#pragma once

// Scenario data model and the seeded procedural generator.
//
// A scenario is the pair (geometry, appearance style). Everything except the
// `style` field is a pure function of (geometry_seed, GeneratorConfig); the
// style is attached afterwards and never read by the generator.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "navrobust/geom.hpp"

namespace navrobust::scenario {

struct StyleId {
  int id = 0;
  std::string name = "origin";

  bool operator==(const StyleId&) const = default;
};

/// Style 0 is always the unmodified reference appearance ("origin").
class StyleRegistry {
 public:
  StyleRegistry();  // origin + the ten default appearance shifts
  explicit StyleRegistry(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(int id) const;
  int id_of(const std::string& name) const;
  StyleId style(int id) const { return {id, name(id)}; }
  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

enum class AgentKind { kVehicle, kPedestrian };
enum class LightPhase { kRed, kGreen };
enum class Command { kLeft, kStraight, kRight };
enum class MapFamily { kStraight, kCurve, kIntersection };

std::string to_string(AgentKind k);
std::string to_string(LightPhase p);
std::string to_string(Command c);
std::string to_string(MapFamily f);

struct Agent {
  AgentKind kind = AgentKind::kVehicle;
  double half_length = 2.3;
  double half_width = 1.0;
  geom::Trajectoryd logged;  // t = 0 .. horizon at the scenario dt

  geom::OrientedBoxd box_at(std::size_t step) const {
    return {logged.waypoints[std::min(step, logged.size() - 1)], half_length, half_width};
  }

  bool operator==(const Agent&) const = default;
};

struct TrafficLight {
  geom::Polylined stop_line;
  std::vector<LightPhase> phase;  // one entry per simulation step, t = 0 .. horizon

  bool operator==(const TrafficLight&) const = default;
};

/// Lane centerline; vertex order is the direction of travel.
struct Lane {
  geom::Polylined centerline;

  bool operator==(const Lane&) const = default;
};

struct Scenario {
  std::uint64_t geometry_seed = 0;
  StyleId style;
  MapFamily family = MapFamily::kStraight;
  std::vector<geom::Polygond> drivable;
  std::vector<Lane> lanes;
  int route_lane = 0;  // the lane the ego is asked to follow
  std::vector<TrafficLight> lights;
  std::vector<Agent> agents;
  geom::Trajectoryd ego_history;  // past, ending at the current pose
  double ego_half_length = 2.4;
  double ego_half_width = 1.0;
  geom::Trajectoryd expert;  // future, starting at the current pose
  Command goal_command = Command::kStraight;

  const geom::Pose2d& ego_pose() const { return ego_history.back(); }
  const geom::Polylined& route() const { return lanes.at(static_cast<std::size_t>(route_lane)).centerline; }
  double dt() const { return expert.dt; }
  std::size_t steps() const { return expert.size(); }

  /// Equality of every field except `style`.
  bool same_geometry(const Scenario& other) const;

  bool operator==(const Scenario&) const = default;
};

/// Throws ValidationError when an invariant of the data model is violated.
void validate(const Scenario& s, const StyleRegistry& registry);

struct GeneratorConfig {
  double dt = 0.1;
  double horizon = 4.0;
  double history_duration = 2.0;
  double lane_width = 3.5;
  double shoulder = 0.5;
  double ego_half_length = 2.4;
  double ego_half_width = 1.0;

  // map family mix (relative weights)
  double weight_straight = 0.3;
  double weight_curve = 0.35;
  double weight_intersection = 0.35;

  double min_speed = 3.0;
  double max_speed = 12.0;
  double min_radius = 28.0;
  double max_radius = 90.0;

  double p_lead_vehicle = 0.5;
  double p_oncoming_vehicle = 0.5;
  double p_pedestrian = 0.2;
  double p_red_light = 0.55;

  // expert driver
  double idm_time_headway = 1.2;
  double idm_min_gap = 2.5;
  double idm_max_accel = 1.2;
  double idm_comfort_decel = 1.8;
  double max_decel = 2.2;
  double max_jerk = 2.5;
  double max_lateral_accel = 1.8;

  int max_attempts = 40;

  /// Throws ConfigError when the configuration cannot produce valid scenes.
  void validate() const;
};

Scenario generate_scenario(std::uint64_t geometry_seed, const StyleId& style, const GeneratorConfig& config);

struct DatasetSplit {
  std::vector<std::uint64_t> support_seeds;
  std::vector<std::uint64_t> evaluation_seeds;
  std::vector<int> seen_styles;
  std::vector<int> unseen_styles;

  bool operator==(const DatasetSplit&) const = default;
};

/// Partitions geometry seeds (never styles of one seed) into support and
/// evaluation sets, and the non-origin styles into seen and unseen groups.
DatasetSplit split_dataset(const std::vector<std::uint64_t>& seeds, const StyleRegistry& styles,
                           double support_fraction, int seen_count, std::uint64_t rng_seed);

inline constexpr int kScenarioSchemaVersion = 1;

void write_scenario(const Scenario& s, const std::filesystem::path& path);
Scenario read_scenario(const std::filesystem::path& path, const StyleRegistry& registry = StyleRegistry());

/// Compact JSON text in the same layout as the files.
std::string scenario_to_string(const Scenario& s);
Scenario scenario_from_string(const std::string& text, const StyleRegistry& registry = StyleRegistry());

/// FNV-1a of the compact JSON text; stable across runs and platforms with
/// IEEE doubles.
std::uint64_t scenario_hash(const Scenario& s);

}  // namespace navrobust::scenario
