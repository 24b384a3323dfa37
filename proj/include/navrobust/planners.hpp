#pragma once

// The three planning paradigms over adapted perception tokens, plus their
// training loops.
//
// Every model owns one ParamSet holding its adapter (and, for the trainable
// extractor arm, a trainable copy of the mixing) together with its head.
// Plans are produced in the ego frame with waypoint 0 at the origin.

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "navrobust/metrics.hpp"
#include "navrobust/nn.hpp"
#include "navrobust/perception.hpp"
#include "navrobust/scenario.hpp"
#include "navrobust/vocabulary.hpp"

namespace navrobust::planners {

using nn::Matd;
using Params = nn::ParamSet<double>;
using Tape = nn::Tape<double>;
using Var = Tape::Var;

enum class Paradigm { kRegression, kDiffusion, kScoring };
std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& name);

struct EgoStatus {
  double speed = 0.0;
  double accel = 0.0;
  scenario::Command command = scenario::Command::kStraight;

  /// (1, 5): speed / 10, accel / 2, one-hot command.
  Matd features() const;
};

EgoStatus ego_status(const scenario::Scenario& s);

struct PlanOutput {
  geom::Trajectoryd trajectory;
  std::vector<double> scores;  // per mode or per candidate
  int selected = -1;
  Matd modes;  // diffusion only: final sample of every mode, one coordinate row each
};

/// Expert future in the ego frame, resampled to `dt`.
geom::Trajectoryd expert_in_ego_frame(const scenario::Scenario& s, double dt);

/// Waypoints 1..T as a (1, 2T) row; waypoint 0 is the origin by construction.
Eigen::RowVectorXd plan_coords(const geom::Trajectoryd& t);
geom::Trajectoryd coords_to_plan(const Eigen::Ref<const Eigen::RowVectorXd>& coords, double dt);

inline constexpr double kCoordScale = 10.0;  // network units per metre is 1 / kCoordScale

// ---------------------------------------------------------------------------
// Shared scene encoder

struct EncoderConfig {
  perception::AdapterConfig adapter;
  int attn_dim = 16;
  int queries = 4;
  bool positional = true;
  bool token_norm = true;  // per-token layer norm on the adapter output
  int spatial_maps = 4;     // learned cell weightings read out next to attention
  bool context_norm = true; // layer norm over the pooled scene features
  int status_dim = 16;
  bool trainable_extractor = false;  // inputs are raw rasters mixed in-graph
  perception::ExtractorConfig extractor;  // initial mixing for the trainable arm
};

void init_encoder(Params& ps, const EncoderConfig& cfg);

/// Adapted tokens (N, d), including the positional table when enabled.
Var encode_tokens(Tape& t, Params& ps, const Matd& input, const EncoderConfig& cfg);

/// Cross-attention of `queries` (n, attn_dim) over projected tokens.
Var attend(Tape& t, Params& ps, Var queries, Var tokens, const std::string& prefix);

Var status_embedding(Tape& t, Params& ps, const EgoStatus& s);

// ---------------------------------------------------------------------------
// Regression

struct RegressionConfig {
  EncoderConfig encoder;
  int hidden = 64;
  double dt = 0.5;
  int waypoints = 8;  // excluding the origin
};

void init_regression(Params& ps, const RegressionConfig& cfg, std::uint64_t seed);

/// (1, 2*waypoints) prediction in network units.
Var regression_forward(Tape& t, Params& ps, const Matd& input, const EgoStatus& s, const RegressionConfig& cfg);

PlanOutput regression_plan(const Matd& input, const EgoStatus& s, Params& ps, const RegressionConfig& cfg);

// ---------------------------------------------------------------------------
// Anchored truncated diffusion

struct NoiseSchedule {
  std::vector<double> sigma;  // sigma[0] = 0 < sigma[1] < ... < sigma[K]

  int steps() const { return static_cast<int>(sigma.size()) - 1; }
  void validate() const;
};

/// Linear truncated schedule sigma_k = terminal * k / steps.
NoiseSchedule truncated_schedule(int steps, double terminal_sigma);

/// x0 + (sigma_{k-1} / sigma_k)(noisy - x0); the ratio is 0 when sigma_k = 0.
Matd diffusion_denoise_step(const Matd& noisy, const Matd& x0_hat, int k, const NoiseSchedule& schedule);

struct Denoised {
  Matd x0;                  // (modes, coords)
  Eigen::VectorXd logits;   // per-mode confidence
};
using Denoiser = std::function<Denoised(const Matd& noisy, int k)>;

/// Runs the truncated loop from anchor + sigma_K * noise for every anchor
/// row and returns the most confident final mode (lowest index on ties).
PlanOutput diffusion_sample(const Matd& anchors, const NoiseSchedule& schedule, const Denoiser& denoiser,
                            std::uint64_t seed, double dt);

/// Root-mean-square per-coordinate residual from each expert to its nearest anchor.
double anchor_spread(const Matd& anchors, const Matd& experts);

struct DiffusionConfig {
  EncoderConfig encoder;
  int hidden = 64;
  int step_embed = 8;
  int steps = 2;
  double dt = 0.5;
  int waypoints = 8;
  double confidence_weight = 0.5;
  double anchor_weight = 0.2;  // pulls unmatched modes back onto their anchors
};

/// Anchors (modes, coords) in metres are stored inside the parameter set
/// together with the schedule so a checkpoint is self-contained.
void init_diffusion(Params& ps, const DiffusionConfig& cfg, const Matd& anchors, const NoiseSchedule& schedule,
                    std::uint64_t seed);

Matd diffusion_anchors(const Params& ps);
NoiseSchedule diffusion_schedule(const Params& ps);

/// Scene inputs of the denoiser: the pooled context row (scene plus ego
/// status) and the adapted tokens each mode attends over.
struct DiffusionScene {
  Var context;
  Var tokens;
};

DiffusionScene diffusion_context(Tape& t, Params& ps, const Matd& input, const EgoStatus& s,
                                 const DiffusionConfig& cfg);

/// x0 prediction (modes, coords) in metres and confidence logits (modes, 1).
std::pair<Var, Var> diffusion_denoise(Tape& t, Params& ps, Var noisy_metres, int k, const DiffusionScene& scene,
                                      const DiffusionConfig& cfg);

PlanOutput diffusion_plan(const Matd& input, const EgoStatus& s, Params& ps, const DiffusionConfig& cfg,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dense vocabulary scoring

using ScoreWeights = std::array<double, metrics::SubMetricScores::kCount>;

inline constexpr ScoreWeights kDefaultScoreWeights = {4, 4, 2, 2, 5, 5, 2, 1, 1};

struct ScoringConfig {
  EncoderConfig encoder;
  int token_dim = 32;
  int path_points = 8;  // feature samples along each candidate
  int hidden = 64;
  ScoreWeights omega = kDefaultScoreWeights;
};

void init_scoring(Params& ps, const ScoringConfig& cfg, int waypoints, std::uint64_t seed);

/// Sub-score logits (|V|, 9) for flattened candidates (|V|, 2T).
Var scoring_forward(Tape& t, Params& ps, const Matd& input, const EgoStatus& s, const Matd& candidates,
                    const ScoringConfig& cfg);

/// Bilinear sampling weights (points * |V|, cells) at `points` waypoints
/// spread along each candidate; row p * |V| + c belongs to candidate c.
Eigen::SparseMatrix<double> path_sampling(const Matd& candidates, int points, const perception::RasterConfig& raster);

/// Sigmoid sub-scores (|V|, 9).
Matd scoring_scores(const Matd& input, const EgoStatus& s, Params& ps, const Matd& candidates,
                    const ScoringConfig& cfg);

/// S_i = sum_j omega_j s_ij.
Eigen::VectorXd aggregate_candidate_scores(const Matd& sub, const ScoreWeights& omega);

/// Argmax with lowest-index tie-breaking.
PlanOutput select_best(const Eigen::VectorXd& scores, const vocabulary::TrajectoryVocabulary& vocab);

PlanOutput scoring_plan(const Matd& input, const EgoStatus& s, Params& ps, const vocabulary::TrajectoryVocabulary& vocab,
                        const ScoringConfig& cfg);

/// Human-filtered sub-metric scores of every candidate, (|V|, 9).
Matd scoring_targets(const scenario::Scenario& s, const vocabulary::TrajectoryVocabulary& vocab,
                     const metrics::MetricConfig& mcfg = {});

// ---------------------------------------------------------------------------
// Training

struct TrainSample {
  Matd input;                  // features, or raw raster for the trainable arm
  EgoStatus status;
  geom::Trajectoryd expert;    // ego frame at the planner's dt
  const Matd* targets = nullptr;  // scoring targets (|V|, 9)
};

struct TrainConfig {
  int steps = 1000;
  int batch = 8;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
};

struct TrainLog {
  std::vector<double> loss;  // mean batch loss per step
};

/// Per-sample losses, exposed for gradient checks.
Var regression_loss(Tape& t, Params& ps, const TrainSample& x, const RegressionConfig& cfg);
Var diffusion_loss(Tape& t, Params& ps, const TrainSample& x, const DiffusionConfig& cfg, int k, const Matd& noise);
Var scoring_loss(Tape& t, Params& ps, const TrainSample& x, const Matd& candidates, const ScoringConfig& cfg);

TrainLog train_regression(Params& ps, const std::vector<TrainSample>& data, const RegressionConfig& cfg,
                          const TrainConfig& tc);
TrainLog train_diffusion(Params& ps, const std::vector<TrainSample>& data, const DiffusionConfig& cfg,
                         const TrainConfig& tc);
TrainLog train_scoring(Params& ps, const std::vector<TrainSample>& data, const vocabulary::TrajectoryVocabulary& vocab,
                       const ScoringConfig& cfg, const TrainConfig& tc);

}  // namespace navrobust::planners
