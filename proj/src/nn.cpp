#include "navrobust/nn.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace navrobust::nn {

void save_checkpoint(const ParamSet<double>& ps, const std::filesystem::path& path) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : ps) {
    std::vector<double> values(p.value.data(), p.value.data() + p.value.size());
    params.push_back({{"name", p.name},
                      {"shape", {p.value.rows(), p.value.cols()}},
                      {"trainable", p.trainable},
                      {"values", values}});
  }
  const nlohmann::json j = {{"checkpoint_version", kCheckpointVersion}, {"seed", ps.seed()}, {"params", params}};
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  f << j.dump() << '\n';
  if (!f) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

ParamSet<double> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("checkpoint_version").get<int>() != kCheckpointVersion)
      throw Error(ErrorCode::kSchemaVersionMismatch, path.string() + ": unsupported checkpoint_version");
    ParamSet<double> ps(j.at("seed").get<std::uint64_t>());
    for (const auto& p : j.at("params")) {
      const auto rows = p.at("shape").at(0).get<Eigen::Index>();
      const auto cols = p.at("shape").at(1).get<Eigen::Index>();
      const auto values = p.at("values").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(values.size()) != rows * cols)
        throw Error(ErrorCode::kValidationError, path.string() + ": value count differs from shape");
      ps.add(p.at("name").get<std::string>(), Eigen::Map<const Matd>(values.data(), rows, cols),
             p.at("trainable").get<bool>());
    }
    return ps;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidationError, path.string() + ": " + e.what());
  }
}

}  // namespace navrobust::nn
