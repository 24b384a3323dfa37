#include "navrobust/vocabulary.hpp"

#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "navrobust/random.hpp"

namespace navrobust::vocabulary {

using geom::Trajectoryd;

Matd flatten_xy(const std::vector<Trajectoryd>& trajs) {
  if (trajs.empty()) return Matd(0, 0);
  const auto n = static_cast<Eigen::Index>(trajs.front().size());
  Matd out(static_cast<Eigen::Index>(trajs.size()), 2 * n);
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    if (static_cast<Eigen::Index>(trajs[r].size()) != n)
      throw Error(ErrorCode::kDimMismatch, "trajectories differ in length");
    for (Eigen::Index i = 0; i < n; ++i) {
      out(static_cast<Eigen::Index>(r), 2 * i) = trajs[r][static_cast<std::size_t>(i)].x;
      out(static_cast<Eigen::Index>(r), 2 * i + 1) = trajs[r][static_cast<std::size_t>(i)].y;
    }
  }
  return out;
}

Trajectoryd unflatten_xy(const Eigen::Ref<const Eigen::RowVectorXd>& row, double dt) {
  Trajectoryd t{dt, {}};
  for (Eigen::Index i = 0; i + 1 < row.size(); i += 2) t.waypoints.push_back({row[i], row[i + 1], 0.0});
  geom::refit_headings(t);
  return t;
}

std::uint64_t hash_trajectories(const std::vector<Trajectoryd>& trajs) {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& t : trajs) {
    h = fnv1a(&t.dt, sizeof(double), h);
    for (const auto& w : t.waypoints) {
      const double v[3] = {w.x, w.y, w.heading};
      h = fnv1a(v, sizeof(v), h);
    }
  }
  return h;
}

namespace {

TrajectoryVocabulary centroids_to_vocabulary(const Matd& centers, double dt, std::uint64_t hash) {
  TrajectoryVocabulary v;
  v.source_hash = hash;
  for (Eigen::Index c = 0; c < centers.rows(); ++c) v.candidates.push_back(unflatten_xy(centers.row(c), dt));
  return v;
}

}  // namespace

KMeansResult kmeans_trajectories(const std::vector<Trajectoryd>& trajs, int k, std::uint64_t seed, int max_iter) {
  if (k < 1 || static_cast<std::size_t>(k) > trajs.size())
    throw Error(ErrorCode::kTooFewSamples, "k-means needs at least k trajectories");
  const Matd x = flatten_xy(trajs);
  const Eigen::Index n = x.rows();
  Rng rng(seed);

  // k-means++ seeding
  Matd centers(k, x.cols());
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        u -= d2[pick];
        if (u < 0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)));
    }
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  KMeansResult r;
  r.assignment.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (r.assignment[static_cast<std::size_t>(i)] != best) changed = true;
      r.assignment[static_cast<std::size_t>(i)] = best;
      dist[static_cast<std::size_t>(i)] = best_d;
    }
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (int a : r.assignment) ++count[static_cast<std::size_t>(a)];
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) continue;
      const auto far = static_cast<Eigen::Index>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      --count[static_cast<std::size_t>(r.assignment[static_cast<std::size_t>(far)])];
      r.assignment[static_cast<std::size_t>(far)] = c;
      ++count[static_cast<std::size_t>(c)];
      dist[static_cast<std::size_t>(far)] = 0.0;
      changed = true;
    }
    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centers.row(r.assignment[static_cast<std::size_t>(i)]) += x.row(i);
    for (int c = 0; c < k; ++c) centers.row(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      objective += (x.row(i) - centers.row(r.assignment[static_cast<std::size_t>(i)])).squaredNorm();
    r.objective.push_back(objective);
    if (!changed && iter > 0) break;
  }
  r.vocabulary = centroids_to_vocabulary(centers, trajs.front().dt, hash_trajectories(trajs));
  return r;
}

Trajectoryd full_stop(std::size_t waypoints, double dt) {
  return {dt, std::vector<geom::Pose2d>(waypoints, geom::Pose2d{})};
}

TrajectoryVocabulary build_dense_vocabulary(const std::vector<Trajectoryd>& trajs, int size, std::uint64_t seed) {
  TrajectoryVocabulary v = kmeans_trajectories(trajs, size, seed).vocabulary;
  const Trajectoryd stop = full_stop(trajs.front().size(), trajs.front().dt);
  const Matd stop_flat = flatten_xy({stop});
  std::vector<Trajectoryd> kept;
  for (auto& c : v.candidates)
    if ((flatten_xy({c}) - stop_flat).cwiseAbs().maxCoeff() > 1e-9) kept.push_back(std::move(c));
  kept.push_back(stop);
  v.candidates = std::move(kept);
  return v;
}

int nearest_candidate(const TrajectoryVocabulary& v, const Trajectoryd& t) {
  const Matd c = flatten_xy(v.candidates);
  const Matd q = flatten_xy({t});
  Eigen::Index best = 0;
  (c.rowwise() - q.row(0)).rowwise().squaredNorm().minCoeff(&best);
  return static_cast<int>(best);
}

double mean_min_distance(const TrajectoryVocabulary& v, const std::vector<Trajectoryd>& trajs) {
  const Matd c = flatten_xy(v.candidates);
  const Matd q = flatten_xy(trajs);
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) total += std::sqrt((c.rowwise() - q.row(i)).rowwise().squaredNorm().minCoeff());
  return total / static_cast<double>(q.rows());
}

void write_vocabulary(const TrajectoryVocabulary& v, const std::filesystem::path& path) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& t : v.candidates) {
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& w : t.waypoints) poses.push_back({w.x, w.y, w.heading});
    cands.push_back(poses);
  }
  const nlohmann::json j = {{"vocabulary_version", 1},
                            {"size", v.size()},
                            {"dt", v.dt()},
                            {"source_hash", v.source_hash},
                            {"candidates", cands}};
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  f << j.dump() << '\n';
}

TrajectoryVocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("vocabulary_version").get<int>() != 1)
      throw Error(ErrorCode::kSchemaVersionMismatch, path.string() + ": unsupported vocabulary_version");
    TrajectoryVocabulary v;
    v.source_hash = j.at("source_hash").get<std::uint64_t>();
    const double dt = j.at("dt").get<double>();
    for (const auto& c : j.at("candidates")) {
      Trajectoryd t{dt, {}};
      for (const auto& p : c) t.waypoints.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      v.candidates.push_back(std::move(t));
    }
    if (v.candidates.empty()) throw Error(ErrorCode::kValidationError, path.string() + ": empty vocabulary");
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kValidationError, path.string() + ": " + e.what());
  }
}

void init_tokenizer(nn::ParamSet<double>& ps, int waypoints, int dim, const std::string& prefix) {
  ps.add_uniform(prefix + "/w", 2 * waypoints, dim, 2 * waypoints);
  ps.add_uniform(prefix + "/b", 1, dim, 2 * waypoints);
}

nn::Tape<double>::Var tokenize(nn::Tape<double>& t, nn::ParamSet<double>& ps, nn::Tape<double>::Var flat,
                               const std::string& prefix) {
  return t.tanh(t.affine(t.scale(flat, 1.0 / kTokenizerScale), t.param(ps, prefix + "/w"), t.param(ps, prefix + "/b")));
}

Eigen::RowVectorXd tokenize_trajectory(const Trajectoryd& traj, nn::ParamSet<double>& ps, const std::string& prefix) {
  nn::Tape<double> t;
  return t.value(tokenize(t, ps, t.constant(flatten_xy({traj})), prefix)).row(0);
}

}  // namespace navrobust::vocabulary
