#pragma once

// Experiment orchestration: dataset generation, training of the
// (paradigm, variant) matrix and ablation arms, evaluation over style groups
// and report writing. The CLI in tools/ is a thin layer over this.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "navrobust/metrics.hpp"
#include "navrobust/perception.hpp"
#include "navrobust/planners.hpp"
#include "navrobust/scenario.hpp"
#include "navrobust/sim.hpp"
#include "navrobust/vocabulary.hpp"

namespace navrobust::harness {

using nn::Matd;
using planners::Paradigm;

enum class Variant { kBase, kDomainRandomization, kConstantEye };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

enum class StyleGroup { kOrigin, kSeen, kUnseen };
std::string to_string(StyleGroup g);

enum class FeatureSource { kBrittle, kConstantEye };
std::string to_string(FeatureSource f);

/// Everything that distinguishes one trained model from another.
struct ModelSpec {
  std::string name;
  Paradigm paradigm = Paradigm::kRegression;
  FeatureSource features = FeatureSource::kBrittle;
  bool augment_seen = false;         // add the seen-style support set to training
  bool trainable_extractor = false;  // train a copy of the mixing with the planner
  int adapter_depth = 4;
  bool adapter_cnn = true;

  /// Canonical key of the training-relevant fields (the name is excluded).
  std::string key() const;
  bool operator==(const ModelSpec&) const = default;
};

ModelSpec variant_spec(Paradigm p, Variant v);

struct Schedule {
  int steps = 1000;
  int batch = 8;
  double lr = 3e-4;
  double weight_decay = 1e-4;
};

struct ExperimentConfig {
  int config_version = 1;
  std::uint64_t seed = 20250917;

  int train_scenarios = 400;
  int navdream_seeds = 333;
  double support_fraction = 0.4;
  int seen_styles = 5;
  bool evaluate_seen = true;

  scenario::GeneratorConfig generator;
  perception::ExtractorConfig extractor;
  perception::CorruptionConfig corruption;
  perception::AdapterConfig adapter;
  metrics::MetricConfig metrics;
  metrics::EpdmsWeights weights;
  sim::IdmParams idm;
  bool reactive = false;
  int parallel = 1;

  std::vector<Paradigm> paradigms = {Paradigm::kRegression, Paradigm::kDiffusion, Paradigm::kScoring};
  std::vector<Variant> variants = {Variant::kBase, Variant::kDomainRandomization, Variant::kConstantEye};

  planners::RegressionConfig regression;
  Schedule regression_schedule{1200, 16, 1e-3, 1e-4};
  planners::DiffusionConfig diffusion;
  int anchors = 20;
  Schedule diffusion_schedule{1200, 16, 1e-3, 1e-4};
  planners::ScoringConfig scoring;
  int vocabulary_size = 256;
  Schedule scoring_schedule{3600, 8, 1e-3, 1e-4};  // 1200 steps underfit the 257-candidate heads

  std::vector<ModelSpec> ablation;

  /// Throws ConfigError on any inconsistent setting.
  void validate() const;
};

ExperimentConfig default_config();
std::vector<ModelSpec> default_ablation_arms();

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Per-style corruption parameters, written next to a run for inspection.
nlohmann::json corruption_table(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset

struct ManifestEntry {
  std::uint64_t seed = 0;
  int style = 0;
  std::string split;  // train, support or eval
  StyleGroup group = StyleGroup::kOrigin;
  std::uint64_t hash = 0;  // scenario_hash of the styled scene

  bool operator==(const ManifestEntry&) const = default;
};

struct Dataset {
  std::vector<std::uint64_t> train_seeds;
  scenario::DatasetSplit split;
  std::map<std::uint64_t, scenario::Scenario> geometry;  // origin-style scene per seed
  scenario::StyleRegistry styles;

  const scenario::Scenario& origin(std::uint64_t seed) const;
  scenario::Scenario styled(std::uint64_t seed, int style) const;
  std::vector<ManifestEntry> manifest(bool include_seen_eval = true) const;
};

Dataset generate_dataset(const ExperimentConfig& cfg);

/// Writes manifest.json and one origin-style file per geometry seed; styled
/// scenes differ only in their style field and are rebuilt on load.
void write_dataset(const Dataset& d, const std::filesystem::path& dir);

/// Throws MissingDataset when the directory or manifest is absent.
Dataset read_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Training and evaluation

struct TrainedModel {
  ModelSpec spec;
  planners::Params params;
  std::vector<double> loss;
};

struct EvalRecord {
  std::string paradigm;
  std::string model;
  std::uint64_t seed = 0;
  int style = 0;
  StyleGroup group = StyleGroup::kOrigin;
  metrics::SubMetricScores scores;
  double epdms = 0.0;

  bool operator==(const EvalRecord&) const = default;
};

/// Owns the dataset, the shared artifacts (anchors, schedule, vocabulary,
/// scoring targets) and the per-seed raster cache.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, Dataset data);

  const ExperimentConfig& config() const { return cfg_; }
  const Dataset& dataset() const { return data_; }

  const Matd& anchors();
  const planners::NoiseSchedule& schedule();
  const vocabulary::TrajectoryVocabulary& vocabulary();
  void set_vocabulary(vocabulary::TrajectoryVocabulary v);

  /// Human-filtered sub-scores of every vocabulary candidate for one geometry.
  const Matd& scoring_targets(std::uint64_t seed);

  /// Planner input for one styled scene under a model spec.
  Matd input(const ModelSpec& spec, std::uint64_t seed, int style);

  planners::RegressionConfig regression_config(const ModelSpec& spec) const;
  planners::DiffusionConfig diffusion_config(const ModelSpec& spec) const;
  planners::ScoringConfig scoring_config(const ModelSpec& spec) const;

  /// Training manifest of a spec as (seed, style) pairs.
  std::vector<std::pair<std::uint64_t, int>> training_manifest(const ModelSpec& spec) const;

  TrainedModel train(const ModelSpec& spec);

  /// Plan for one styled scene in the ego frame.
  planners::PlanOutput plan(TrainedModel& model, std::uint64_t seed, int style);

  /// Evaluation (seed, style, group) triples in deterministic order.
  std::vector<std::tuple<std::uint64_t, int, StyleGroup>> evaluation_items() const;

  /// Plans and scores every evaluation item; `parallel` workers fan out over
  /// items and results are merged in item order.
  std::vector<EvalRecord> evaluate(TrainedModel& model, int parallel = 1);

  const metrics::SubMetricScores& expert(std::uint64_t seed);

 private:
  const Matd& raster(std::uint64_t seed);
  void warm_caches(const std::vector<std::uint64_t>& seeds);

  ExperimentConfig cfg_;
  Dataset data_;
  perception::Mixing mixing_;
  std::map<int, perception::StyleCorruption> corruptions_;
  std::map<std::uint64_t, Matd> rasters_;
  std::map<std::uint64_t, metrics::SubMetricScores> experts_;
  std::map<std::uint64_t, Matd> targets_;
  std::unique_ptr<Matd> anchors_;
  std::unique_ptr<planners::NoiseSchedule> schedule_;
  std::unique_ptr<vocabulary::TrajectoryVocabulary> vocab_;
};

/// Seed of the diffusion sampler for one geometry; shared by all styles so
/// invariant features give identical plans.
std::uint64_t diffusion_seed(std::uint64_t master, std::uint64_t geometry_seed);

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::string paradigm;
  std::string model;
  StyleGroup group = StyleGroup::kOrigin;
  metrics::SubMetricScores mean;
  double epdms = 0.0;
  int count = 0;
};

struct DropRow {
  std::string paradigm;
  std::string model;
  double origin = 0.0;
  double ood = 0.0;  // unseen group
  double drop = 0.0;  // NaN when the origin score is zero
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<DropRow> drops;

  const DropRow& drop(const std::string& paradigm, const std::string& model) const;
  const ResultRow& row(const std::string& paradigm, const std::string& model, StyleGroup g) const;
};

/// Pools scenarios within each (paradigm, model, group): sub-metrics and
/// EPDMS are means over every scored scene of the group.
ResultTable aggregate_results(const std::vector<EvalRecord>& records);

nlohmann::json records_to_json(const std::vector<EvalRecord>& records);
std::vector<EvalRecord> records_from_json(const nlohmann::json& j);

nlohmann::json table_to_json(const ResultTable& t);
std::string table_to_csv(const ResultTable& t);

/// Grouped bar chart of EPDMS per model and style group.
std::string epdms_svg(const ResultTable& t);
/// Bar chart of drop rates per model.
std::string drop_svg(const ResultTable& t);

/// Writes report.csv, report.json, epdms.svg and drop.svg into `dir`.
void write_report(const ResultTable& t, const std::filesystem::path& dir);

/// Percent with one decimal, e.g. 0.10059 -> "10.1"; "n/a" when not finite.
std::string percent(double fraction);

/// Maps library errors to process exit codes (2 config, 3 dataset, 4 numeric, 1 other).
int exit_code(ErrorCode code);

}  // namespace navrobust::harness
