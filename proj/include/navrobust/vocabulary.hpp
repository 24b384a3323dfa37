#pragma once

// Trajectory clustering (diffusion anchors, dense scoring vocabulary) and the
// learned trajectory tokenizer.

#include <filesystem>
#include <vector>

#include "navrobust/geom.hpp"
#include "navrobust/nn.hpp"

namespace navrobust::vocabulary {

using nn::Matd;

struct TrajectoryVocabulary {
  std::vector<geom::Trajectoryd> candidates;  // ego frame, shared dt and length
  std::uint64_t source_hash = 0;

  std::size_t size() const { return candidates.size(); }
  double dt() const { return candidates.front().dt; }
  double horizon() const { return candidates.front().duration(); }

  bool operator==(const TrajectoryVocabulary&) const = default;
};

/// (n, 2*T) matrix of (x, y) waypoint coordinates, one trajectory per row.
Matd flatten_xy(const std::vector<geom::Trajectoryd>& trajs);

/// Inverse of flatten_xy for one row; headings are re-fit from positions.
geom::Trajectoryd unflatten_xy(const Eigen::Ref<const Eigen::RowVectorXd>& row, double dt);

std::uint64_t hash_trajectories(const std::vector<geom::Trajectoryd>& trajs);

struct KMeansResult {
  TrajectoryVocabulary vocabulary;
  std::vector<int> assignment;
  std::vector<double> objective;  // after every iteration
};

/// Lloyd iterations on flattened positions with a seeded k-means++ start.
/// Clusters that empty out are reseeded with the point farthest from its
/// centroid.
KMeansResult kmeans_trajectories(const std::vector<geom::Trajectoryd>& trajs, int k, std::uint64_t seed,
                                 int max_iter = 100);

geom::Trajectoryd full_stop(std::size_t waypoints, double dt);

/// k-means centroids plus the zero-motion candidate (dropped from the
/// centroids when one coincides with it).
TrajectoryVocabulary build_dense_vocabulary(const std::vector<geom::Trajectoryd>& trajs, int size,
                                            std::uint64_t seed);

/// Mean distance from each trajectory to its nearest candidate (flattened L2).
double mean_min_distance(const TrajectoryVocabulary& v, const std::vector<geom::Trajectoryd>& trajs);

/// Index of the candidate nearest to `t` in flattened L2; lowest index on ties.
int nearest_candidate(const TrajectoryVocabulary& v, const geom::Trajectoryd& t);

void write_vocabulary(const TrajectoryVocabulary& v, const std::filesystem::path& path);
TrajectoryVocabulary read_vocabulary(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Tokenizer: tanh(flatten(x, y) / scale * W + b)

inline constexpr double kTokenizerScale = 10.0;

void init_tokenizer(nn::ParamSet<double>& ps, int waypoints, int dim, const std::string& prefix = "tokenizer");

/// Tokenizes every row of an already flattened (n, 2*T) matrix.
nn::Tape<double>::Var tokenize(nn::Tape<double>& t, nn::ParamSet<double>& ps, nn::Tape<double>::Var flat,
                               const std::string& prefix = "tokenizer");

Eigen::RowVectorXd tokenize_trajectory(const geom::Trajectoryd& traj, nn::ParamSet<double>& ps,
                                       const std::string& prefix = "tokenizer");

}  // namespace navrobust::vocabulary
