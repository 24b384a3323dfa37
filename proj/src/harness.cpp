#include "navrobust/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "navrobust/random.hpp"

namespace navrobust::harness {

using nlohmann::json;
using scenario::Scenario;

namespace {

std::uint64_t stream(std::uint64_t master, const std::string& name) {
  return derive_seed(master, fnv1a(name.data(), name.size()));
}

template <typename Enum>
Enum lookup(const std::string& text, std::initializer_list<std::pair<const char*, Enum>> table, const char* what) {
  for (const auto& [name, value] : table)
    if (text == name) return value;
  throw Error(ErrorCode::kConfigError, std::string("unknown ") + what + " '" + text + "'");
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBase: return "base";
    case Variant::kDomainRandomization: return "dr";
    case Variant::kConstantEye: return "constant_eye";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  return lookup<Variant>(
      name, {{"base", Variant::kBase}, {"dr", Variant::kDomainRandomization}, {"constant_eye", Variant::kConstantEye}},
      "variant");
}

std::string to_string(StyleGroup g) {
  switch (g) {
    case StyleGroup::kOrigin: return "origin";
    case StyleGroup::kSeen: return "seen";
    case StyleGroup::kUnseen: return "unseen";
  }
  return "?";
}

namespace {

StyleGroup group_from_string(const std::string& name) {
  return lookup<StyleGroup>(
      name, {{"origin", StyleGroup::kOrigin}, {"seen", StyleGroup::kSeen}, {"unseen", StyleGroup::kUnseen}},
      "style group");
}

FeatureSource features_from_string(const std::string& name) {
  return lookup<FeatureSource>(
      name, {{"brittle", FeatureSource::kBrittle}, {"constant_eye", FeatureSource::kConstantEye}}, "feature source");
}

}  // namespace

std::string to_string(FeatureSource f) { return f == FeatureSource::kBrittle ? "brittle" : "constant_eye"; }

std::string ModelSpec::key() const {
  std::ostringstream s;
  s << planners::to_string(paradigm) << '|' << to_string(features) << '|' << augment_seen << '|'
    << trainable_extractor << '|' << adapter_depth << '|' << adapter_cnn;
  return s.str();
}

ModelSpec variant_spec(Paradigm p, Variant v) {
  ModelSpec m;
  m.name = to_string(v);
  m.paradigm = p;
  m.features = v == Variant::kConstantEye ? FeatureSource::kConstantEye : FeatureSource::kBrittle;
  m.augment_seen = v == Variant::kDomainRandomization;
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

/// Reads or writes one JSON object through the same field list, so both
/// directions stay in sync. Reading rejects keys it does not know.
class Binder {
 public:
  Binder(json& j, bool reading, std::string where) : j_(j), reading_(reading), where_(std::move(where)) {
    if (reading_ && !j_.is_object()) throw Error(ErrorCode::kConfigError, where_ + " must be an object");
  }

  template <typename T>
  void operator()(const char* key, T& value) {
    known_.insert(key);
    if (!reading_) {
      j_[key] = value;
      return;
    }
    if (!j_.contains(key)) return;
    try {
      value = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kConfigError, where_ + "." + key + ": " + e.what());
    }
  }

  /// Nested object bound by `fn(Binder&)`.
  template <typename Fn>
  void object(const char* key, Fn fn) {
    known_.insert(key);
    if (reading_ && !j_.contains(key)) return;
    json& sub = reading_ ? j_.at(key) : (j_[key] = json::object());
    Binder b(sub, reading_, where_ + "." + key);
    fn(b);
    b.finish();
  }

  void finish() const {
    if (!reading_) return;
    for (const auto& [k, v] : j_.items())
      if (!known_.count(k)) throw Error(ErrorCode::kConfigError, where_ + ": unknown key '" + k + "'");
  }

  bool reading() const { return reading_; }
  json& raw() { return j_; }
  void mark(const char* key) { known_.insert(key); }

 private:
  json& j_;
  bool reading_;
  std::string where_;
  std::set<std::string> known_;
};

void bind(Binder& b, Schedule& s) {
  b("steps", s.steps);
  b("batch", s.batch);
  b("lr", s.lr);
  b("weight_decay", s.weight_decay);
}

void bind(Binder& b, scenario::GeneratorConfig& g) {
  b("dt", g.dt);
  b("horizon", g.horizon);
  b("history_duration", g.history_duration);
  b("lane_width", g.lane_width);
  b("shoulder", g.shoulder);
  b("ego_half_length", g.ego_half_length);
  b("ego_half_width", g.ego_half_width);
  b("weight_straight", g.weight_straight);
  b("weight_curve", g.weight_curve);
  b("weight_intersection", g.weight_intersection);
  b("min_speed", g.min_speed);
  b("max_speed", g.max_speed);
  b("min_radius", g.min_radius);
  b("max_radius", g.max_radius);
  b("p_lead_vehicle", g.p_lead_vehicle);
  b("p_oncoming_vehicle", g.p_oncoming_vehicle);
  b("p_pedestrian", g.p_pedestrian);
  b("p_red_light", g.p_red_light);
  b("idm_time_headway", g.idm_time_headway);
  b("idm_min_gap", g.idm_min_gap);
  b("idm_max_accel", g.idm_max_accel);
  b("idm_comfort_decel", g.idm_comfort_decel);
  b("max_decel", g.max_decel);
  b("max_jerk", g.max_jerk);
  b("max_lateral_accel", g.max_lateral_accel);
  b("max_attempts", g.max_attempts);
}

void bind(Binder& b, perception::ExtractorConfig& e) {
  b("channels", e.channels);
  b("mixing_seed", e.mixing_seed);
  b("mixing_gain", e.mixing_gain);
  b("texture_weight", e.texture_weight);
}

void bind(Binder& b, perception::CorruptionConfig& c) {
  b("seed", c.seed);
  b("min_gain_delta", c.min_gain_delta);
  b("max_gain_delta", c.max_gain_delta);
  b("offset_scale", c.offset_scale);
  b("geometry_swaps", c.geometry_swaps);
  b("texture_gain_delta", c.texture_gain_delta);
  b("texture_offset_scale", c.texture_offset_scale);
  b("field_amplitude", c.field_amplitude);
}

void bind(Binder& b, metrics::MetricConfig& m) {
  b("ttc_horizon", m.ttc_horizon);
  b("ttc_step", m.ttc_step);
  b("lk_max_offset", m.lk_max_offset);
  b("lk_max_duration", m.lk_max_duration);
  b("ddc_low", m.ddc_low);
  b("ddc_high", m.ddc_high);
  b("moving_speed", m.moving_speed);
  b("max_accel", m.max_accel);
  b("max_jerk", m.max_jerk);
  b("max_yaw_rate", m.max_yaw_rate);
  b("comfort_dt", m.comfort_dt);
  b("ec_max_rms_accel", m.ec_max_rms_accel);
  b("ec_shift", m.ec_shift);
  b("ep_min_expert_progress", m.ep_min_expert_progress);
  b("lane_half_width", m.lane_half_width);
}

void bind(Binder& b, metrics::EpdmsWeights& w) {
  b("ttc", w.ttc);
  b("ep", w.ep);
  b("lk", w.lk);
  b("hc", w.hc);
  b("ec", w.ec);
}

void bind(Binder& b, sim::IdmParams& p) {
  b("desired_speed", p.desired_speed);
  b("time_headway", p.time_headway);
  b("min_gap", p.min_gap);
  b("max_accel", p.max_accel);
  b("comfort_decel", p.comfort_decel);
  b("exponent", p.exponent);
  b("desired_speed_from_log", p.desired_speed_from_log);
}

void bind(Binder& b, planners::EncoderConfig& e) {
  b("attn_dim", e.attn_dim);
  b("queries", e.queries);
  b("positional", e.positional);
  b("token_norm", e.token_norm);
  b("spatial_maps", e.spatial_maps);
  b("context_norm", e.context_norm);
  b("status_dim", e.status_dim);
}

json spec_to_json(const ModelSpec& m) {
  return {{"name", m.name},
          {"paradigm", planners::to_string(m.paradigm)},
          {"features", to_string(m.features)},
          {"augment_seen", m.augment_seen},
          {"trainable_extractor", m.trainable_extractor},
          {"adapter_depth", m.adapter_depth},
          {"adapter_cnn", m.adapter_cnn}};
}

ModelSpec spec_from_json(json j) {
  ModelSpec m;
  Binder b(j, true, "ablation[]");
  std::string paradigm = planners::to_string(m.paradigm), features = to_string(m.features);
  b("name", m.name);
  b("paradigm", paradigm);
  b("features", features);
  b("augment_seen", m.augment_seen);
  b("trainable_extractor", m.trainable_extractor);
  b("adapter_depth", m.adapter_depth);
  b("adapter_cnn", m.adapter_cnn);
  b.finish();
  m.paradigm = planners::paradigm_from_string(paradigm);
  m.features = features_from_string(features);
  if (m.name.empty()) throw Error(ErrorCode::kConfigError, "ablation arm without a name");
  return m;
}

void bind_all(Binder& b, ExperimentConfig& c) {
  b("config_version", c.config_version);
  b("seed", c.seed);
  b.object("dataset", [&](Binder& d) {
    d("train_scenarios", c.train_scenarios);
    d("navdream_seeds", c.navdream_seeds);
    d("support_fraction", c.support_fraction);
    d("seen_styles", c.seen_styles);
    d("evaluate_seen", c.evaluate_seen);
  });
  b.object("generator", [&](Binder& d) { bind(d, c.generator); });
  b.object("extractor", [&](Binder& d) { bind(d, c.extractor); });
  b.object("corruption", [&](Binder& d) { bind(d, c.corruption); });
  b.object("adapter", [&](Binder& d) {
    d("dim", c.adapter.dim);
    d("depth", c.adapter.depth);
    d("cnn", c.adapter.cnn);
  });
  b.object("metrics", [&](Binder& d) { bind(d, c.metrics); });
  b.object("weights", [&](Binder& d) { bind(d, c.weights); });
  b.object("idm", [&](Binder& d) { bind(d, c.idm); });
  b.object("evaluation", [&](Binder& d) {
    d("reactive", c.reactive);
    d("parallel", c.parallel);
  });
  b.object("regression", [&](Binder& d) {
    bind(d, c.regression.encoder);
    d("hidden", c.regression.hidden);
    d.object("schedule", [&](Binder& s) { bind(s, c.regression_schedule); });
  });
  b.object("diffusion", [&](Binder& d) {
    bind(d, c.diffusion.encoder);
    d("hidden", c.diffusion.hidden);
    d("step_embed", c.diffusion.step_embed);
    d("denoise_steps", c.diffusion.steps);
    d("confidence_weight", c.diffusion.confidence_weight);
    d("anchor_weight", c.diffusion.anchor_weight);
    d("anchors", c.anchors);
    d.object("schedule", [&](Binder& s) { bind(s, c.diffusion_schedule); });
  });
  b.object("scoring", [&](Binder& d) {
    bind(d, c.scoring.encoder);
    d("token_dim", c.scoring.token_dim);
    d("path_points", c.scoring.path_points);
    d("hidden", c.scoring.hidden);
    d("omega", c.scoring.omega);
    d("vocabulary_size", c.vocabulary_size);
    d.object("schedule", [&](Binder& s) { bind(s, c.scoring_schedule); });
  });

  // enum lists and the arm table need explicit conversion
  b.mark("paradigms");
  b.mark("variants");
  b.mark("ablation");
  json& j = b.raw();
  try {
    if (b.reading()) {
      if (j.contains("paradigms")) {
        c.paradigms.clear();
        for (const auto& p : j.at("paradigms")) c.paradigms.push_back(planners::paradigm_from_string(p.get<std::string>()));
      }
      if (j.contains("variants")) {
        c.variants.clear();
        for (const auto& v : j.at("variants")) c.variants.push_back(variant_from_string(v.get<std::string>()));
      }
      if (j.contains("ablation")) {
        c.ablation.clear();
        for (const auto& a : j.at("ablation")) c.ablation.push_back(spec_from_json(a));
      }
    } else {
      j["paradigms"] = json::array();
      for (auto p : c.paradigms) j["paradigms"].push_back(planners::to_string(p));
      j["variants"] = json::array();
      for (auto v : c.variants) j["variants"].push_back(to_string(v));
      j["ablation"] = json::array();
      for (const auto& a : c.ablation) j["ablation"].push_back(spec_to_json(a));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, std::string("config lists: ") + e.what());
  }
}

}  // namespace

std::vector<ModelSpec> default_ablation_arms() {
  std::vector<ModelSpec> arms;
  ModelSpec frozen;
  frozen.name = "frozen";
  frozen.paradigm = Paradigm::kRegression;
  frozen.features = FeatureSource::kBrittle;
  arms.push_back(frozen);
  ModelSpec e2e = frozen;
  e2e.name = "e2e";
  e2e.trainable_extractor = true;
  arms.push_back(e2e);
  const std::pair<const char*, std::pair<int, bool>> adapters[] = {
      {"adapter_2l", {2, false}}, {"adapter_4l", {4, false}}, {"adapter_4l_cnn", {4, true}}, {"adapter_8l_cnn", {8, true}}};
  for (const auto& [name, shape] : adapters) {
    ModelSpec a = frozen;
    a.name = name;
    a.features = FeatureSource::kConstantEye;
    a.adapter_depth = shape.first;
    a.adapter_cnn = shape.second;
    arms.push_back(a);
  }
  return arms;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.ablation = default_ablation_arms();
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfigError, what); };
  if (config_version != 1) fail("unsupported config_version " + std::to_string(config_version));
  if (train_scenarios < 1) fail("train_scenarios must be positive");
  if (navdream_seeds < 2) fail("navdream_seeds must be at least 2");
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) fail("support_fraction must lie in (0, 1)");
  const int styles = static_cast<int>(scenario::StyleRegistry().size());
  if (seen_styles < 0 || seen_styles > styles - 2) fail("seen_styles must leave at least one unseen style");
  if (parallel < 1) fail("parallel must be >= 1");
  if (adapter.depth < 1 || adapter.dim < 1) fail("adapter depth and dim must be positive");
  if (extractor.channels < 1) fail("extractor channels must be positive");
  if (anchors < 1) fail("anchors must be positive");
  if (vocabulary_size < 1) fail("vocabulary_size must be positive");
  if (train_scenarios < anchors || train_scenarios < vocabulary_size)
    fail("train_scenarios must be at least the anchor count and the vocabulary size");
  if (diffusion.steps < 1) fail("diffusion denoise_steps must be >= 1");
  if (paradigms.empty()) fail("no paradigms configured");
  if (variants.empty()) fail("no variants configured");
  for (const Schedule* s : {&regression_schedule, &diffusion_schedule, &scoring_schedule})
    if (s->steps < 0 || s->batch < 1 || !(s->lr > 0) || !(s->weight_decay >= 0)) fail("invalid training schedule");
  for (double w : scoring.omega)
    if (!(w >= 0) || !std::isfinite(w)) fail("scoring omega must be non-negative");
  std::set<std::string> names;
  for (const auto& a : ablation) {
    if (!names.insert(a.name).second) fail("duplicate ablation arm " + a.name);
    if (a.adapter_depth < 1) fail("ablation arm " + a.name + " has adapter_depth < 1");
  }
  try {
    generator.validate();
    idm.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigError) throw;
    throw Error(ErrorCode::kConfigError, e.what());
  }
}

json to_json(const ExperimentConfig& cfg) {
  json j = json::object();
  ExperimentConfig copy = cfg;
  Binder b(j, false, "config");
  bind_all(b, copy);
  return j;
}

ExperimentConfig config_from_json(const json& in) {
  json j = in;
  ExperimentConfig c = default_config();
  if (!j.is_object() || !j.contains("config_version"))
    throw Error(ErrorCode::kConfigError, "config must be an object with config_version");
  Binder b(j, true, "config");
  b.mark("corruption_table");
  bind_all(b, c);
  b.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kConfigError, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  json j = to_json(cfg);
  j["corruption_table"] = corruption_table(cfg);
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json corruption_table(const ExperimentConfig& cfg) {
  const scenario::StyleRegistry reg;
  json out = json::array();
  for (int id = 0; id < static_cast<int>(reg.size()); ++id) {
    const auto c = perception::style_corruption(id, cfg.corruption);
    out.push_back({{"style", reg.name(id)},
                   {"id", id},
                   {"gain", c.gain},
                   {"offset", c.offset},
                   {"permutation", c.permutation},
                   {"field", {c.field_amplitude, c.field_freq_x, c.field_freq_y, c.field_phase}}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

const Scenario& Dataset::origin(std::uint64_t seed) const {
  auto it = geometry.find(seed);
  if (it == geometry.end()) throw Error(ErrorCode::kMissingDataset, "no scenario for seed " + std::to_string(seed));
  return it->second;
}

Scenario Dataset::styled(std::uint64_t seed, int style) const {
  Scenario s = origin(seed);
  s.style = styles.style(style);
  return s;
}

std::vector<ManifestEntry> Dataset::manifest(bool include_seen_eval) const {
  std::vector<ManifestEntry> out;
  auto add = [&](std::uint64_t seed, int style, const char* split, StyleGroup g) {
    out.push_back({seed, style, split, g, scenario::scenario_hash(styled(seed, style))});
  };
  for (auto seed : train_seeds) add(seed, 0, "train", StyleGroup::kOrigin);
  for (auto seed : split.support_seeds)
    for (int st : split.seen_styles) add(seed, st, "support", StyleGroup::kSeen);
  for (auto seed : split.evaluation_seeds) {
    add(seed, 0, "eval", StyleGroup::kOrigin);
    if (include_seen_eval)
      for (int st : split.seen_styles) add(seed, st, "eval", StyleGroup::kSeen);
    for (int st : split.unseen_styles) add(seed, st, "eval", StyleGroup::kUnseen);
  }
  return out;
}

Dataset generate_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset d;
  const std::uint64_t train_stream = stream(cfg.seed, "train");
  const std::uint64_t dream_stream = stream(cfg.seed, "navdream");
  for (int i = 0; i < cfg.train_scenarios; ++i)
    d.train_seeds.push_back(derive_seed(train_stream, static_cast<std::uint64_t>(i)));
  std::vector<std::uint64_t> dream;
  for (int i = 0; i < cfg.navdream_seeds; ++i) dream.push_back(derive_seed(dream_stream, static_cast<std::uint64_t>(i)));
  const std::set<std::uint64_t> train_set(d.train_seeds.begin(), d.train_seeds.end());
  if (train_set.size() != d.train_seeds.size()) throw Error(ErrorCode::kValidationError, "duplicate training seed");
  for (auto s : dream)
    if (train_set.count(s)) throw Error(ErrorCode::kValidationError, "training and benchmark seeds collide");

  d.split = scenario::split_dataset(dream, d.styles, cfg.support_fraction, cfg.seen_styles, stream(cfg.seed, "split"));
  const auto origin = d.styles.style(0);
  for (auto seed : d.train_seeds) d.geometry.emplace(seed, scenario::generate_scenario(seed, origin, cfg.generator));
  for (auto seed : dream) d.geometry.emplace(seed, scenario::generate_scenario(seed, origin, cfg.generator));
  return d;
}

namespace {

json manifest_json(const Dataset& d) {
  json entries = json::array();
  for (const auto& e : d.manifest())
    entries.push_back({{"seed", e.seed},
                       {"style", e.style},
                       {"split", e.split},
                       {"group", to_string(e.group)},
                       {"hash", e.hash}});
  return {{"dataset_version", 1},
          {"styles", d.styles.names()},
          {"train_seeds", d.train_seeds},
          {"support_seeds", d.split.support_seeds},
          {"evaluation_seeds", d.split.evaluation_seeds},
          {"seen_styles", d.split.seen_styles},
          {"unseen_styles", d.split.unseen_styles},
          {"entries", entries}};
}

std::string seed_file(std::uint64_t seed) { return std::to_string(seed) + ".json"; }

}  // namespace

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "scenarios", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string());
  for (const auto& [seed, s] : d.geometry) scenario::write_scenario(s, dir / "scenarios" / seed_file(seed));
  std::ofstream f(dir / "manifest.json");
  if (!f) throw Error(ErrorCode::kIoError, "cannot write manifest");
  f << manifest_json(d).dump(1) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kMissingDataset, "no dataset manifest at " + path.string());
  std::ifstream f(path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidationError, path.string() + ": " + e.what());
  }
  Dataset d;
  try {
    if (j.at("dataset_version").get<int>() != 1)
      throw Error(ErrorCode::kSchemaVersionMismatch, "unsupported dataset_version");
    d.styles = scenario::StyleRegistry(j.at("styles").get<std::vector<std::string>>());
    d.train_seeds = j.at("train_seeds").get<std::vector<std::uint64_t>>();
    d.split.support_seeds = j.at("support_seeds").get<std::vector<std::uint64_t>>();
    d.split.evaluation_seeds = j.at("evaluation_seeds").get<std::vector<std::uint64_t>>();
    d.split.seen_styles = j.at("seen_styles").get<std::vector<int>>();
    d.split.unseen_styles = j.at("unseen_styles").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidationError, path.string() + ": " + e.what());
  }
  std::vector<std::uint64_t> all = d.train_seeds;
  all.insert(all.end(), d.split.support_seeds.begin(), d.split.support_seeds.end());
  all.insert(all.end(), d.split.evaluation_seeds.begin(), d.split.evaluation_seeds.end());
  for (auto seed : all) {
    const auto file = dir / "scenarios" / seed_file(seed);
    if (!std::filesystem::exists(file)) throw Error(ErrorCode::kMissingDataset, "missing scenario " + file.string());
    d.geometry.emplace(seed, scenario::read_scenario(file, d.styles));
  }
  const json expected = manifest_json(d).at("entries");
  if (expected != j.at("entries"))
    throw Error(ErrorCode::kValidationError, "scenario files do not match the manifest hashes");
  return d;
}

// ---------------------------------------------------------------------------
// Experiment

std::uint64_t diffusion_seed(std::uint64_t master, std::uint64_t geometry_seed) {
  return derive_seed(stream(master, "diffusion"), geometry_seed);
}

Experiment::Experiment(ExperimentConfig cfg, Dataset data) : cfg_(std::move(cfg)), data_(std::move(data)) {
  cfg_.validate();
  mixing_ = perception::make_mixing(cfg_.extractor);
  for (int id = 0; id < static_cast<int>(data_.styles.size()); ++id)
    corruptions_.emplace(id, perception::style_corruption(id, cfg_.corruption));
}

const Matd& Experiment::raster(std::uint64_t seed) {
  auto it = rasters_.find(seed);
  if (it != rasters_.end()) return it->second;
  return rasters_.emplace(seed, perception::rasterize(data_.origin(seed), cfg_.extractor.raster)).first->second;
}

const metrics::SubMetricScores& Experiment::expert(std::uint64_t seed) {
  auto it = experts_.find(seed);
  if (it != experts_.end()) return it->second;
  return experts_.emplace(seed, metrics::expert_scores(data_.origin(seed), cfg_.metrics, cfg_.reactive, cfg_.idm))
      .first->second;
}

void Experiment::warm_caches(const std::vector<std::uint64_t>& seeds) {
  for (auto s : seeds) {
    raster(s);
    expert(s);
  }
}

Matd Experiment::input(const ModelSpec& spec, std::uint64_t seed, int style) {
  const Matd& raw = raster(seed);
  const auto it = corruptions_.find(style);
  if (it == corruptions_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown style " + std::to_string(style));
  const Matd view = spec.features == FeatureSource::kBrittle ? perception::corrupt(raw, it->second, cfg_.extractor.raster)
                                                             : raw;
  return spec.trainable_extractor ? view : perception::apply_mixing(view, mixing_);
}

namespace {

std::vector<geom::Trajectoryd> experts_at(const Dataset& d, double dt) {
  std::vector<geom::Trajectoryd> out;
  for (auto seed : d.train_seeds) out.push_back(planners::expert_in_ego_frame(d.origin(seed), dt));
  return out;
}

planners::EncoderConfig encoder_for(const ExperimentConfig& cfg, planners::EncoderConfig e, const ModelSpec& spec) {
  e.adapter = cfg.adapter;
  e.adapter.in_channels = cfg.extractor.channels;
  e.adapter.height = cfg.extractor.raster.height;
  e.adapter.width = cfg.extractor.raster.width;
  e.adapter.depth = spec.adapter_depth;
  e.adapter.cnn = spec.adapter_cnn;
  e.trainable_extractor = spec.trainable_extractor;
  e.extractor = cfg.extractor;
  return e;
}

}  // namespace

const Matd& Experiment::anchors() {
  if (!anchors_) {
    const auto experts = experts_at(data_, cfg_.regression.dt);
    const auto km = vocabulary::kmeans_trajectories(experts, cfg_.anchors, stream(cfg_.seed, "anchors"));
    Matd a(cfg_.anchors, 2 * cfg_.diffusion.waypoints);
    for (int m = 0; m < cfg_.anchors; ++m) a.row(m) = planners::plan_coords(km.vocabulary.candidates[static_cast<std::size_t>(m)]);
    Matd e(static_cast<Eigen::Index>(experts.size()), a.cols());
    for (std::size_t i = 0; i < experts.size(); ++i) e.row(static_cast<Eigen::Index>(i)) = planners::plan_coords(experts[i]);
    schedule_ = std::make_unique<planners::NoiseSchedule>(
        planners::truncated_schedule(cfg_.diffusion.steps, planners::anchor_spread(a, e)));
    anchors_ = std::make_unique<Matd>(std::move(a));
  }
  return *anchors_;
}

const planners::NoiseSchedule& Experiment::schedule() {
  anchors();
  return *schedule_;
}

const vocabulary::TrajectoryVocabulary& Experiment::vocabulary() {
  if (!vocab_)
    vocab_ = std::make_unique<vocabulary::TrajectoryVocabulary>(vocabulary::build_dense_vocabulary(
        experts_at(data_, cfg_.generator.dt), cfg_.vocabulary_size, stream(cfg_.seed, "vocabulary")));
  return *vocab_;
}

void Experiment::set_vocabulary(vocabulary::TrajectoryVocabulary v) {
  vocab_ = std::make_unique<vocabulary::TrajectoryVocabulary>(std::move(v));
  targets_.clear();
}

const Matd& Experiment::scoring_targets(std::uint64_t seed) {
  auto it = targets_.find(seed);
  if (it != targets_.end()) return it->second;
  return targets_.emplace(seed, planners::scoring_targets(data_.origin(seed), vocabulary(), cfg_.metrics)).first->second;
}

planners::RegressionConfig Experiment::regression_config(const ModelSpec& spec) const {
  auto c = cfg_.regression;
  c.encoder = encoder_for(cfg_, c.encoder, spec);
  return c;
}

planners::DiffusionConfig Experiment::diffusion_config(const ModelSpec& spec) const {
  auto c = cfg_.diffusion;
  c.encoder = encoder_for(cfg_, c.encoder, spec);
  return c;
}

planners::ScoringConfig Experiment::scoring_config(const ModelSpec& spec) const {
  auto c = cfg_.scoring;
  c.encoder = encoder_for(cfg_, c.encoder, spec);
  return c;
}

std::vector<std::pair<std::uint64_t, int>> Experiment::training_manifest(const ModelSpec& spec) const {
  std::vector<std::pair<std::uint64_t, int>> out;
  for (auto seed : data_.train_seeds) out.emplace_back(seed, 0);
  if (spec.augment_seen)
    for (auto seed : data_.split.support_seeds)
      for (int st : data_.split.seen_styles) out.emplace_back(seed, st);
  return out;
}

namespace {

// Fans `count` independent jobs out over `workers` threads. Job i writes
// only its own output slot, so the merge order is the index order.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn fn) {
  if (workers <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < count; i += static_cast<std::size_t>(workers)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

TrainedModel Experiment::train(const ModelSpec& spec) {
  const auto manifest = training_manifest(spec);
  // Seeds depend on the paradigm only, so models that see identical
  // features and data (Base and Constant Eye at origin) train identically.
  const std::string paradigm = planners::to_string(spec.paradigm);
  const std::uint64_t key = fnv1a(paradigm.data(), paradigm.size());
  const std::uint64_t init_seed = derive_seed(stream(cfg_.seed, "init"), key);
  TrainedModel model{spec, planners::Params(init_seed), {}};

  std::vector<std::uint64_t> seeds;
  for (const auto& [seed, style] : manifest) seeds.push_back(seed);
  warm_caches(seeds);
  if (spec.paradigm == Paradigm::kScoring) {
    vocabulary();
    std::vector<std::uint64_t> missing;
    for (auto s : seeds)
      if (!targets_.count(s) && std::find(missing.begin(), missing.end(), s) == missing.end()) missing.push_back(s);
    std::vector<Matd> computed(missing.size());
    parallel_for(missing.size(), cfg_.parallel, [&](std::size_t i) {
      computed[i] = planners::scoring_targets(data_.origin(missing[i]), *vocab_, cfg_.metrics);
    });
    for (std::size_t i = 0; i < missing.size(); ++i) targets_.emplace(missing[i], std::move(computed[i]));
  }

  const double dt = spec.paradigm == Paradigm::kScoring ? cfg_.generator.dt
                    : spec.paradigm == Paradigm::kDiffusion ? cfg_.diffusion.dt
                                                            : cfg_.regression.dt;
  std::vector<planners::TrainSample> data;
  data.reserve(manifest.size());
  for (const auto& [seed, style] : manifest) {
    planners::TrainSample x;
    x.input = input(spec, seed, style);
    x.status = planners::ego_status(data_.origin(seed));
    x.expert = planners::expert_in_ego_frame(data_.origin(seed), dt);
    if (spec.paradigm == Paradigm::kScoring) x.targets = &targets_.at(seed);
    data.push_back(std::move(x));
  }

  const Schedule& sc = spec.paradigm == Paradigm::kScoring     ? cfg_.scoring_schedule
                       : spec.paradigm == Paradigm::kDiffusion ? cfg_.diffusion_schedule
                                                               : cfg_.regression_schedule;
  planners::TrainConfig tc{sc.steps, sc.batch, sc.lr, sc.weight_decay, derive_seed(stream(cfg_.seed, "train-order"), key)};
  planners::TrainLog log;
  switch (spec.paradigm) {
    case Paradigm::kRegression: {
      const auto rc = regression_config(spec);
      planners::init_regression(model.params, rc, init_seed);
      log = planners::train_regression(model.params, data, rc, tc);
      break;
    }
    case Paradigm::kDiffusion: {
      const auto dc = diffusion_config(spec);
      planners::init_diffusion(model.params, dc, anchors(), schedule(), init_seed);
      log = planners::train_diffusion(model.params, data, dc, tc);
      break;
    }
    case Paradigm::kScoring: {
      const auto zc = scoring_config(spec);
      planners::init_scoring(model.params, zc, static_cast<int>(vocabulary().candidates.front().size()), init_seed);
      log = planners::train_scoring(model.params, data, *vocab_, zc, tc);
      break;
    }
  }
  model.loss = std::move(log.loss);
  return model;
}

planners::PlanOutput Experiment::plan(TrainedModel& model, std::uint64_t seed, int style) {
  const Matd x = input(model.spec, seed, style);
  const auto status = planners::ego_status(data_.origin(seed));
  switch (model.spec.paradigm) {
    case Paradigm::kRegression:
      return planners::regression_plan(x, status, model.params, regression_config(model.spec));
    case Paradigm::kDiffusion:
      return planners::diffusion_plan(x, status, model.params, diffusion_config(model.spec),
                                      diffusion_seed(cfg_.seed, seed));
    case Paradigm::kScoring:
      return planners::scoring_plan(x, status, model.params, vocabulary(), scoring_config(model.spec));
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown paradigm");
}

std::vector<std::tuple<std::uint64_t, int, StyleGroup>> Experiment::evaluation_items() const {
  std::vector<std::tuple<std::uint64_t, int, StyleGroup>> items;
  for (auto seed : data_.split.evaluation_seeds) {
    items.emplace_back(seed, 0, StyleGroup::kOrigin);
    if (cfg_.evaluate_seen)
      for (int st : data_.split.seen_styles) items.emplace_back(seed, st, StyleGroup::kSeen);
    for (int st : data_.split.unseen_styles) items.emplace_back(seed, st, StyleGroup::kUnseen);
  }
  return items;
}

std::vector<EvalRecord> Experiment::evaluate(TrainedModel& model, int parallel) {
  const auto items = evaluation_items();
  warm_caches(data_.split.evaluation_seeds);
  if (model.spec.paradigm == Paradigm::kScoring) vocabulary();
  std::vector<EvalRecord> out(items.size());
  // Workers only read the warmed caches and the parameters.
  parallel_for(items.size(), parallel, [&](std::size_t i) {
    const auto& [seed, style, group] = items[i];
    const Scenario s = data_.styled(seed, style);
    const auto p = plan(model, seed, style);
    const auto r = metrics::evaluate_plan(s, sim::plan_to_world(s, p.trajectory), experts_.at(seed), cfg_.metrics,
                                          cfg_.weights, cfg_.reactive, cfg_.idm);
    if (!std::isfinite(r.epdms)) throw Error(ErrorCode::kNumericFailure, "non-finite EPDMS");
    out[i] = {planners::to_string(model.spec.paradigm), model.spec.name, seed, style, group, r.scores, r.epdms};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Results

const DropRow& ResultTable::drop(const std::string& paradigm, const std::string& model) const {
  for (const auto& d : drops)
    if (d.paradigm == paradigm && d.model == model) return d;
  throw Error(ErrorCode::kInvalidArgument, "no drop row for " + paradigm + "/" + model);
}

const ResultRow& ResultTable::row(const std::string& paradigm, const std::string& model, StyleGroup g) const {
  for (const auto& r : rows)
    if (r.paradigm == paradigm && r.model == model && r.group == g) return r;
  throw Error(ErrorCode::kInvalidArgument, "no result row for " + paradigm + "/" + model + "/" + to_string(g));
}

ResultTable aggregate_results(const std::vector<EvalRecord>& records) {
  ResultTable t;
  std::vector<std::array<double, metrics::SubMetricScores::kCount>> sums;
  for (const auto& rec : records) {
    std::size_t k = 0;
    while (k < t.rows.size() &&
           !(t.rows[k].paradigm == rec.paradigm && t.rows[k].model == rec.model && t.rows[k].group == rec.group))
      ++k;
    if (k == t.rows.size()) {
      ResultRow r;
      r.paradigm = rec.paradigm;
      r.model = rec.model;
      r.group = rec.group;
      t.rows.push_back(r);
      sums.push_back({});
    }
    auto& row = t.rows[k];
    for (std::size_t j = 0; j < metrics::SubMetricScores::kCount; ++j) sums[k][j] += rec.scores[j];
    row.epdms += rec.epdms;
    ++row.count;
  }
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    auto& row = t.rows[k];
    const double n = static_cast<double>(row.count);
    for (std::size_t j = 0; j < metrics::SubMetricScores::kCount; ++j) row.mean[j] = sums[k][j] / n;
    row.epdms /= n;
  }
  for (const auto& r : t.rows) {
    if (r.group != StyleGroup::kOrigin) continue;
    for (const auto& o : t.rows)
      if (o.paradigm == r.paradigm && o.model == r.model && o.group == StyleGroup::kUnseen)
        // A model that scores zero at origin has no defined drop.
        t.drops.push_back({r.paradigm, r.model, r.epdms, o.epdms,
                           r.epdms > 0.0 ? metrics::drop_rate(r.epdms, o.epdms)
                                         : std::numeric_limits<double>::quiet_NaN()});
  }
  return t;
}

json records_to_json(const std::vector<EvalRecord>& records) {
  json out = json::array();
  for (const auto& r : records) {
    json scores = json::object();
    for (std::size_t j = 0; j < metrics::SubMetricScores::kCount; ++j)
      scores[metrics::SubMetricScores::kNames[j]] = r.scores[j];
    out.push_back({{"paradigm", r.paradigm},
                   {"model", r.model},
                   {"seed", r.seed},
                   {"style", r.style},
                   {"group", to_string(r.group)},
                   {"scores", scores},
                   {"epdms", r.epdms}});
  }
  return out;
}

std::vector<EvalRecord> records_from_json(const json& j) {
  std::vector<EvalRecord> out;
  try {
    for (const auto& r : j) {
      EvalRecord e;
      e.paradigm = r.at("paradigm").get<std::string>();
      e.model = r.at("model").get<std::string>();
      e.seed = r.at("seed").get<std::uint64_t>();
      e.style = r.at("style").get<int>();
      e.group = group_from_string(r.at("group").get<std::string>());
      for (std::size_t k = 0; k < metrics::SubMetricScores::kCount; ++k)
        e.scores[k] = r.at("scores").at(metrics::SubMetricScores::kNames[k]).get<double>();
      e.epdms = r.at("epdms").get<double>();
      out.push_back(e);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidationError, std::string("evaluation records: ") + e.what());
  }
  return out;
}

json table_to_json(const ResultTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json row = {{"paradigm", r.paradigm}, {"model", r.model}, {"group", to_string(r.group)}, {"count", r.count}};
    for (std::size_t j = 0; j < metrics::SubMetricScores::kCount; ++j) row[metrics::SubMetricScores::kNames[j]] = r.mean[j];
    row["epdms"] = r.epdms;
    rows.push_back(row);
  }
  json drops = json::array();
  for (const auto& d : t.drops)
    drops.push_back({{"paradigm", d.paradigm}, {"model", d.model}, {"origin", d.origin}, {"ood", d.ood}, {"drop_rate", d.drop}});
  return {{"report_version", 1}, {"rows", rows}, {"drops", drops}};
}

std::string percent(double fraction) {
  if (!std::isfinite(fraction)) return "n/a";
  double v = 100.0 * fraction;
  if (std::abs(v) < 0.05) v = 0.0;  // no "-0.0" from rounding residue
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string table_to_csv(const ResultTable& t) {
  std::ostringstream out;
  out << "paradigm,model,group,count";
  for (auto name : metrics::SubMetricScores::kNames) out << ',' << name;
  out << ",epdms,drop_rate\n";
  for (const auto& r : t.rows) {
    out << r.paradigm << ',' << r.model << ',' << to_string(r.group) << ',' << r.count;
    for (std::size_t j = 0; j < metrics::SubMetricScores::kCount; ++j) out << ',' << percent(r.mean[j]);
    out << ',' << percent(r.epdms) << ',';
    for (const auto& d : t.drops)
      if (d.paradigm == r.paradigm && d.model == r.model) out << percent(d.drop);
    out << '\n';
  }
  return out.str();
}

namespace {

const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

// Shared bar-chart renderer: one cluster per label, one bar per series.
std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<std::string>& series, const std::vector<std::vector<double>>& values,
                      double y_max) {
  const int cluster = std::max<int>(1, static_cast<int>(series.size())) * 14 + 16;
  const int width = 80 + cluster * static_cast<int>(labels.size()) + 40;
  const int height = 320, top = 40, plot_h = 200;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  s << "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << escape(title) << "</text>\n";
  s << "<line x1=\"60\" y1=\"" << top + plot_h << "\" x2=\"" << width - 20 << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = y_max * tick / 4.0;
    const double y = top + plot_h - plot_h * tick / 4.0;
    s << "<text x=\"55\" y=\"" << y + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
      << percent(v) << "</text>\n";
  }
  for (std::size_t l = 0; l < labels.size(); ++l) {
    const int x0 = 70 + cluster * static_cast<int>(l);
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = std::isfinite(values[l][k]) ? std::clamp(values[l][k], 0.0, y_max) : 0.0;
      const double h = y_max > 0 ? plot_h * v / y_max : 0.0;
      s << "<rect x=\"" << x0 + 14 * static_cast<int>(k) << "\" y=\"" << top + plot_h - h << "\" width=\"12\" height=\""
        << h << "\" fill=\"" << kPalette[k % 6] << "\"><title>" << escape(labels[l] + " " + series[k]) << ": "
        << percent(values[l][k]) << "%</title></rect>\n";
    }
    s << "<text x=\"" << x0 << "\" y=\"" << top + plot_h + 14 << "\" font-family=\"sans-serif\" font-size=\"9\" "
      << "transform=\"rotate(30 " << x0 << ' ' << top + plot_h + 14 << ")\">" << escape(labels[l]) << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k)
    s << "<rect x=\"" << width - 120 << "\" y=\"" << 30 + 14 * k << "\" width=\"10\" height=\"10\" fill=\""
      << kPalette[k % 6] << "\"/><text x=\"" << width - 105 << "\" y=\"" << 39 + 14 * k
      << "\" font-family=\"sans-serif\" font-size=\"10\">" << escape(series[k]) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace

std::string epdms_svg(const ResultTable& t) {
  std::vector<std::string> labels;
  for (const auto& r : t.rows) {
    const std::string l = r.paradigm + "/" + r.model;
    if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
  }
  const std::vector<std::string> series = {"origin", "seen", "unseen"};
  std::vector<std::vector<double>> values(labels.size(), std::vector<double>(3, 0.0));
  for (const auto& r : t.rows) {
    const auto l = static_cast<std::size_t>(
        std::find(labels.begin(), labels.end(), r.paradigm + "/" + r.model) - labels.begin());
    values[l][static_cast<std::size_t>(r.group)] = r.epdms;
  }
  return bar_chart("EPDMS per style group", labels, series, values, 1.0);
}

std::string drop_svg(const ResultTable& t) {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> values;
  double top = 0.05;
  for (const auto& d : t.drops) {
    labels.push_back(d.paradigm + "/" + d.model);
    values.push_back({d.drop});
    top = std::max(top, d.drop);
  }
  return bar_chart("Drop rate (origin to unseen)", labels, {"drop"}, values, std::ceil(top * 20.0) / 20.0);
}

void write_report(const ResultTable& t, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream f(dir / name);
    if (!f) throw Error(ErrorCode::kIoError, "cannot write " + (dir / name).string());
    f << text;
  };
  put("report.csv", table_to_csv(t));
  put("report.json", table_to_json(t).dump(2) + "\n");
  put("epdms.svg", epdms_svg(t));
  put("drop.svg", drop_svg(t));
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kInvalidFraction:
      return 2;
    case ErrorCode::kMissingDataset:
    case ErrorCode::kSchemaVersionMismatch:
    case ErrorCode::kValidationError:
    case ErrorCode::kIoError:
    case ErrorCode::kGenerationFailed:
      return 3;
    case ErrorCode::kNumericFailure:
      return 4;
    default:
      return 1;
  }
}

}  // namespace navrobust::harness
