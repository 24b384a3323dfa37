// Command line front end: gen, train, eval, ablate and report over one run
// directory. Every subcommand reads the resolved config stored in the run
// directory by `gen`, unless --config points elsewhere.
//
// Layout of a run directory:
//   config.json             resolved config (plus the corruption table)
//   dataset/                manifest.json and scenarios/<seed>.json
//   vocabulary.json         scoring vocabulary, written by the first scoring train
//   checkpoints/<p>_<m>.json
//   records.json            per-scene evaluation records of the variant matrix
//   ablation_records.json   the same for the ablation arms
//   report/ and ablation/   csv, json and svg summaries

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "navrobust/harness.hpp"

namespace fs = std::filesystem;
using namespace navrobust;
using namespace navrobust::harness;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::optional<int> parallel;
  bool reactive = false;
  std::string paradigm;
  std::string variant;
};

void log(const std::string& line) { std::cerr << line << std::endl; }

json read_json(const fs::path& path, ErrorCode missing) {
  std::ifstream f(path);
  if (!f) throw Error(missing, "cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidationError, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  f << j.dump(1) << '\n';
}

ExperimentConfig resolve_config(const Options& o, bool for_gen) {
  ExperimentConfig cfg;
  const fs::path stored = fs::path(o.out) / "config.json";
  if (!o.config.empty())
    cfg = load_config(o.config);
  else if (!for_gen && fs::exists(stored))
    cfg = load_config(stored);
  else
    cfg = default_config();
  if (o.seed) cfg.seed = *o.seed;
  if (o.parallel) cfg.parallel = *o.parallel;
  if (o.reactive) cfg.reactive = true;
  cfg.validate();
  return cfg;
}

std::string checkpoint_name(const ModelSpec& s) { return planners::to_string(s.paradigm) + "_" + s.name + ".json"; }

std::vector<ModelSpec> matrix_specs(const ExperimentConfig& cfg, const Options& o) {
  std::vector<ModelSpec> out;
  for (auto p : cfg.paradigms) {
    if (!o.paradigm.empty() && planners::paradigm_from_string(o.paradigm) != p) continue;
    for (auto v : cfg.variants) {
      if (!o.variant.empty() && variant_from_string(o.variant) != v) continue;
      out.push_back(variant_spec(p, v));
    }
  }
  if (out.empty()) throw Error(ErrorCode::kConfigError, "no (paradigm, variant) pair matches the filters");
  return out;
}

Experiment open_experiment(const Options& o, const ExperimentConfig& cfg) {
  Experiment ex(cfg, read_dataset(fs::path(o.out) / "dataset"));
  const fs::path vocab = fs::path(o.out) / "vocabulary.json";
  if (fs::exists(vocab)) ex.set_vocabulary(vocabulary::read_vocabulary(vocab));
  return ex;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void train_specs(Experiment& ex, const std::vector<ModelSpec>& specs, const fs::path& out) {
  fs::create_directories(out / "checkpoints");
  for (const auto& spec : specs) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainedModel m = ex.train(spec);
    if (spec.paradigm == Paradigm::kScoring && !fs::exists(out / "vocabulary.json"))
      vocabulary::write_vocabulary(ex.vocabulary(), out / "vocabulary.json");
    nn::save_checkpoint(m.params, out / "checkpoints" / checkpoint_name(spec));
    write_json(out / "checkpoints" / (checkpoint_name(spec) + ".loss"), m.loss);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "trained %s/%s in %.1fs, final loss %.5f", planners::to_string(spec.paradigm).c_str(),
                  spec.name.c_str(), seconds_since(t0), m.loss.empty() ? 0.0 : m.loss.back());
    log(buf);
  }
}

std::vector<EvalRecord> eval_specs(Experiment& ex, const std::vector<ModelSpec>& specs, const fs::path& out) {
  std::vector<EvalRecord> all;
  for (const auto& spec : specs) {
    const fs::path ck = out / "checkpoints" / checkpoint_name(spec);
    if (!fs::exists(ck)) throw Error(ErrorCode::kMissingDataset, "no checkpoint " + ck.string() + "; run train first");
    TrainedModel m{spec, nn::load_checkpoint(ck), {}};
    const auto t0 = std::chrono::steady_clock::now();
    auto r = ex.evaluate(m, ex.config().parallel);
    log("evaluated " + planners::to_string(spec.paradigm) + "/" + spec.name + " on " + std::to_string(r.size()) +
        " scenes in " + std::to_string(seconds_since(t0)) + "s");
    all.insert(all.end(), r.begin(), r.end());
  }
  return all;
}

// Replaces the records of the given models and keeps the rest, so filtered
// runs accumulate into one file.
void merge_records(const fs::path& path, const std::vector<ModelSpec>& specs, const std::vector<EvalRecord>& fresh) {
  std::vector<EvalRecord> kept;
  if (fs::exists(path))
    for (auto& r : records_from_json(read_json(path, ErrorCode::kMissingDataset))) {
      bool replaced = false;
      for (const auto& s : specs) replaced |= r.paradigm == planners::to_string(s.paradigm) && r.model == s.name;
      if (!replaced) kept.push_back(r);
    }
  kept.insert(kept.end(), fresh.begin(), fresh.end());
  write_json(path, records_to_json(kept));
}

void print_drops(const ResultTable& t) {
  for (const auto& d : t.drops)
    std::printf("%-10s %-16s origin %5s  unseen %5s  drop %5s%%\n", d.paradigm.c_str(), d.model.c_str(),
                percent(d.origin).c_str(), percent(d.ood).c_str(), percent(d.drop).c_str());
}

int cmd_gen(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o, true);
  const fs::path out(o.out);
  fs::create_directories(out);
  const Dataset d = generate_dataset(cfg);
  write_dataset(d, out / "dataset");
  save_config(cfg, out / "config.json");
  log("wrote " + std::to_string(d.geometry.size()) + " geometries and " + std::to_string(d.manifest().size()) +
      " manifest entries to " + (out / "dataset").string());
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o, false);
  Experiment ex = open_experiment(o, cfg);
  train_specs(ex, matrix_specs(cfg, o), o.out);
  return 0;
}

int cmd_eval(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o, false);
  Experiment ex = open_experiment(o, cfg);
  const auto specs = matrix_specs(cfg, o);
  const auto records = eval_specs(ex, specs, o.out);
  merge_records(fs::path(o.out) / "records.json", specs, records);
  print_drops(aggregate_results(records));
  return 0;
}

int cmd_ablate(const Options& o) {
  const ExperimentConfig cfg = resolve_config(o, false);
  if (cfg.ablation.empty()) throw Error(ErrorCode::kConfigError, "the config lists no ablation arms");
  Experiment ex = open_experiment(o, cfg);
  const fs::path out(o.out);
  train_specs(ex, cfg.ablation, out);
  const auto records = eval_specs(ex, cfg.ablation, out);
  write_json(out / "ablation_records.json", records_to_json(records));
  const ResultTable t = aggregate_results(records);
  write_report(t, out / "ablation");
  print_drops(t);
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path out(o.out);
  int written = 0;
  for (const auto& [records, dir] : {std::pair{"records.json", "report"}, std::pair{"ablation_records.json", "ablation"}}) {
    if (!fs::exists(out / records)) continue;
    const ResultTable t = aggregate_results(records_from_json(read_json(out / records, ErrorCode::kMissingDataset)));
    write_report(t, out / dir);
    print_drops(t);
    ++written;
  }
  if (written == 0) throw Error(ErrorCode::kMissingDataset, "no evaluation records in " + out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Appearance-robustness harness for driving planners"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed override");
    sub->add_option("--out", o.out, "run directory")->capture_default_str();
    sub->add_option("--parallel", o.parallel, "evaluation workers")->check(CLI::PositiveNumber);
    sub->add_flag("--reactive", o.reactive, "reactive IDM agents instead of log replay");
    sub->add_option("--paradigm", o.paradigm, "regression, diffusion or scoring");
    sub->add_option("--variant", o.variant, "base, dr or constant_eye");
  };
  std::function<int(const Options&)> run;
  const std::pair<const char*, std::pair<const char*, int (*)(const Options&)>> commands[] = {
      {"gen", {"generate the dataset and manifest", cmd_gen}},
      {"train", {"train the (paradigm, variant) matrix", cmd_train}},
      {"eval", {"evaluate checkpoints on origin and style groups", cmd_eval}},
      {"ablate", {"train and evaluate the ablation arms", cmd_ablate}},
      {"report", {"write csv, json and svg summaries", cmd_report}},
  };
  for (const auto& [name, what] : commands) {
    auto* sub = app.add_subcommand(name, what.first);
    common(sub);
    sub->callback([&run, fn = what.second] { run = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code(ErrorCode::kConfigError);
  }
  try {
    return run(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
