#include "navrobust/planners.hpp"

#include <limits>

#include "navrobust/random.hpp"
#include "navrobust/sim.hpp"

namespace navrobust::planners {

using geom::Trajectoryd;
using scenario::Command;
using scenario::Scenario;

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::kRegression: return "regression";
    case Paradigm::kDiffusion: return "diffusion";
    case Paradigm::kScoring: return "scoring";
  }
  return "?";
}

Paradigm paradigm_from_string(const std::string& name) {
  if (name == "regression") return Paradigm::kRegression;
  if (name == "diffusion") return Paradigm::kDiffusion;
  if (name == "scoring") return Paradigm::kScoring;
  throw Error(ErrorCode::kConfigError, "unknown paradigm " + name);
}

Matd EgoStatus::features() const {
  Matd f = Matd::Zero(1, 5);
  f(0, 0) = speed / 10.0;
  f(0, 1) = accel / 2.0;
  f(0, 2 + static_cast<int>(command)) = 1.0;
  return f;
}

EgoStatus ego_status(const Scenario& s) {
  EgoStatus st;
  st.command = s.goal_command;
  const auto& h = s.ego_history;
  const std::size_t n = h.size();
  auto speed = [&](std::size_t i) {
    return std::hypot(h[i].x - h[i - 1].x, h[i].y - h[i - 1].y) / h.dt;
  };
  if (n >= 2) st.speed = speed(n - 1);
  if (n >= 3) st.accel = (speed(n - 1) - speed(n - 2)) / h.dt;
  return st;
}

Trajectoryd expert_in_ego_frame(const Scenario& s, double dt) {
  Trajectoryd t = geom::resample_trajectory(s.expert, dt, s.expert.duration());
  return geom::to_local(t, s.ego_pose());
}

Eigen::RowVectorXd plan_coords(const Trajectoryd& t) {
  Eigen::RowVectorXd r(2 * static_cast<Eigen::Index>(t.size() - 1));
  for (std::size_t i = 1; i < t.size(); ++i) {
    r[2 * static_cast<Eigen::Index>(i - 1)] = t[i].x;
    r[2 * static_cast<Eigen::Index>(i - 1) + 1] = t[i].y;
  }
  return r;
}

Trajectoryd coords_to_plan(const Eigen::Ref<const Eigen::RowVectorXd>& coords, double dt) {
  Trajectoryd t{dt, {geom::Pose2d{}}};
  for (Eigen::Index i = 0; i + 1 < coords.size(); i += 2) t.waypoints.push_back({coords[i], coords[i + 1], 0.0});
  geom::refit_headings(t);
  return t;
}

// ---------------------------------------------------------------------------

namespace {

// Registration order matters for checkpoint stability, so the status and
// attention heads are added by the paradigm initialisers through these.
void add_attention(Params& ps, int token_dim, int query_dim, int attn_dim, const std::string& prefix) {
  ps.add_uniform(prefix + "/wq", query_dim, attn_dim, query_dim);
  ps.add_uniform(prefix + "/wk", token_dim, attn_dim, token_dim);
  ps.add_uniform(prefix + "/wv", token_dim, attn_dim, token_dim);
}

void add_status(Params& ps, int dim) {
  ps.add_uniform("status/w", 5, dim, 5);
  ps.add_uniform("status/b", 1, dim, 5);
}

void add_linear(Params& ps, const std::string& name, int in, int out) {
  ps.add_uniform(name + "/w", in, out, in);
  ps.add_uniform(name + "/b", 1, out, in);
}

Var linear(Tape& t, Params& ps, Var x, const std::string& name) {
  return t.affine(x, t.param(ps, name + "/w"), t.param(ps, name + "/b"));
}

void init_encoder_impl(Params& ps, const EncoderConfig& cfg) {
  if (cfg.trainable_extractor) {
    const auto m = perception::make_mixing(cfg.extractor);
    ps.add("extractor/w", m.weight);
    ps.add("extractor/b", m.bias);
  }
  perception::init_adapter(ps, cfg.adapter, "adapter");
  if (cfg.token_norm) {
    ps.add_constant("encoder/ln/gain", 1, cfg.adapter.dim, 1.0);
    ps.add_constant("encoder/ln/bias", 1, cfg.adapter.dim, 0.0);
  }
  // Unit-scale positions so that attention can tell cells apart from the start.
  if (cfg.positional) ps.add_uniform("encoder/pos", cfg.adapter.height * cfg.adapter.width, cfg.adapter.dim, 1);
  add_status(ps, cfg.status_dim);
}

}  // namespace

void init_encoder(Params& ps, const EncoderConfig& cfg) { init_encoder_impl(ps, cfg); }

Var encode_tokens(Tape& t, Params& ps, const Matd& input, const EncoderConfig& cfg) {
  Var grid = t.constant(input);
  if (cfg.trainable_extractor) {
    if (input.cols() != perception::kRawChannelCount)
      throw Error(ErrorCode::kDimMismatch, "trainable extractor expects a raw raster");
    grid = perception::mix(t, grid, t.param(ps, "extractor/w"), t.param(ps, "extractor/b"));
  }
  Var z = perception::adapt(t, ps, grid, cfg.adapter, "adapter");
  if (cfg.token_norm) z = t.layer_norm(z, t.param(ps, "encoder/ln/gain"), t.param(ps, "encoder/ln/bias"));
  if (cfg.positional) z = t.add(z, t.param(ps, "encoder/pos"));
  return z;
}

Var attend(Tape& t, Params& ps, Var queries, Var tokens, const std::string& prefix) {
  Var q = t.matmul(queries, t.param(ps, prefix + "/wq"));
  Var k = t.matmul(tokens, t.param(ps, prefix + "/wk"));
  Var v = t.matmul(tokens, t.param(ps, prefix + "/wv"));
  return t.softmax_attention(q, k, v);
}

Var status_embedding(Tape& t, Params& ps, const EgoStatus& s) {
  return t.relu(t.affine(t.constant(s.features()), t.param(ps, "status/w"), t.param(ps, "status/b")));
}

namespace {

// Pooled scene summary: learnable queries attend over the tokens, the result
// is flattened to one row and joined with the ego embedding.
Var pool_tokens(Tape& t, Params& ps, Var z, const EgoStatus& s, const EncoderConfig& cfg) {
  Var pooled = attend(t, ps, t.param(ps, "pool/queries"), z, "pool");
  pooled = t.reshape(pooled, 1, static_cast<Eigen::Index>(cfg.queries) * cfg.attn_dim);
  if (cfg.spatial_maps > 0) {
    // Fixed-location readout: each map is a learned weighting over grid cells.
    Var maps = t.matmul(t.transpose(t.param(ps, "pool/spatial")), z);
    pooled = t.concat_cols(pooled, t.reshape(maps, 1, static_cast<Eigen::Index>(cfg.spatial_maps) * cfg.adapter.dim));
  }
  if (cfg.context_norm) pooled = t.layer_norm(pooled, t.param(ps, "pool/ln/gain"), t.param(ps, "pool/ln/bias"));
  return t.concat_cols(pooled, status_embedding(t, ps, s));
}

Var scene_context(Tape& t, Params& ps, const Matd& input, const EgoStatus& s, const EncoderConfig& cfg) {
  return pool_tokens(t, ps, encode_tokens(t, ps, input, cfg), s, cfg);
}

void add_scene_context(Params& ps, const EncoderConfig& cfg) {
  ps.add_uniform("pool/queries", cfg.queries, cfg.attn_dim, cfg.attn_dim);
  add_attention(ps, cfg.adapter.dim, cfg.attn_dim, cfg.attn_dim, "pool");
  const int cells = cfg.adapter.height * cfg.adapter.width;
  if (cfg.spatial_maps > 0) ps.add_uniform("pool/spatial", cells, cfg.spatial_maps, cells);
  if (cfg.context_norm) {
    const int width = cfg.queries * cfg.attn_dim + cfg.spatial_maps * cfg.adapter.dim;
    ps.add_constant("pool/ln/gain", 1, width, 1.0);
    ps.add_constant("pool/ln/bias", 1, width, 0.0);
  }
}

int context_width(const EncoderConfig& cfg) {
  return cfg.queries * cfg.attn_dim + cfg.spatial_maps * cfg.adapter.dim + cfg.status_dim;
}

}  // namespace

// ---------------------------------------------------------------------------
// Regression

void init_regression(Params& ps, const RegressionConfig& cfg, std::uint64_t seed) {
  ps = Params(seed);
  init_encoder_impl(ps, cfg.encoder);
  add_scene_context(ps, cfg.encoder);
  add_linear(ps, "head/l1", context_width(cfg.encoder), cfg.hidden);
  add_linear(ps, "head/l2", cfg.hidden, cfg.hidden);
  add_linear(ps, "head/out", cfg.hidden, 2 * cfg.waypoints);
}

Var regression_forward(Tape& t, Params& ps, const Matd& input, const EgoStatus& s, const RegressionConfig& cfg) {
  Var h = scene_context(t, ps, input, s, cfg.encoder);
  h = t.relu(linear(t, ps, h, "head/l1"));
  h = t.relu(linear(t, ps, h, "head/l2"));
  return linear(t, ps, h, "head/out");
}

PlanOutput regression_plan(const Matd& input, const EgoStatus& s, Params& ps, const RegressionConfig& cfg) {
  Tape t;
  const Eigen::RowVectorXd out = t.value(regression_forward(t, ps, input, s, cfg)).row(0) * kCoordScale;
  PlanOutput p;
  p.trajectory = coords_to_plan(out, cfg.dt);
  p.selected = 0;
  return p;
}

Var regression_loss(Tape& t, Params& ps, const TrainSample& x, const RegressionConfig& cfg) {
  const Matd target = plan_coords(x.expert) / kCoordScale;
  return t.mse(regression_forward(t, ps, x.input, x.status, cfg), target);
}

// ---------------------------------------------------------------------------
// Diffusion

void NoiseSchedule::validate() const {
  if (sigma.size() < 2) throw Error(ErrorCode::kConfigError, "schedule needs at least one step");
  if (sigma.front() != 0.0) throw Error(ErrorCode::kConfigError, "schedule must end at zero noise");
  for (std::size_t i = 1; i < sigma.size(); ++i)
    if (!(sigma[i] >= sigma[i - 1]) || !std::isfinite(sigma[i]))
      throw Error(ErrorCode::kConfigError, "schedule must be non-decreasing and finite");
}

NoiseSchedule truncated_schedule(int steps, double terminal_sigma) {
  if (steps < 1 || !(terminal_sigma >= 0.0))
    throw Error(ErrorCode::kConfigError, "truncated schedule needs steps >= 1 and sigma >= 0");
  NoiseSchedule s;
  for (int k = 0; k <= steps; ++k) s.sigma.push_back(terminal_sigma * k / steps);
  return s;
}

Matd diffusion_denoise_step(const Matd& noisy, const Matd& x0_hat, int k, const NoiseSchedule& schedule) {
  if (k < 1 || k > schedule.steps())
    throw Error(ErrorCode::kStepOutOfRange, "denoise step " + std::to_string(k) + " outside the schedule");
  if (noisy.rows() != x0_hat.rows() || noisy.cols() != x0_hat.cols())
    throw Error(ErrorCode::kDimMismatch, "noisy and predicted samples differ in shape");
  const double sk = schedule.sigma[static_cast<std::size_t>(k)];
  const double ratio = sk > 0.0 ? schedule.sigma[static_cast<std::size_t>(k - 1)] / sk : 0.0;
  return x0_hat + ratio * (noisy - x0_hat);
}

PlanOutput diffusion_sample(const Matd& anchors, const NoiseSchedule& schedule, const Denoiser& denoiser,
                            std::uint64_t seed, double dt) {
  if (anchors.rows() == 0) throw Error(ErrorCode::kEmptyAnchors, "diffusion needs at least one anchor");
  schedule.validate();
  const int steps = schedule.steps();
  Rng rng(seed);
  Matd x = anchors;
  const double sk = schedule.sigma.back();
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += sk * rng.normal();
  Eigen::VectorXd logits = Eigen::VectorXd::Zero(anchors.rows());
  for (int k = steps; k >= 1; --k) {
    Denoised d = denoiser(x, k);
    if (d.x0.rows() != x.rows() || d.x0.cols() != x.cols() || d.logits.size() != x.rows())
      throw Error(ErrorCode::kDimMismatch, "denoiser output shape");
    x = diffusion_denoise_step(x, d.x0, k, schedule);
    logits = d.logits;
  }
  Eigen::Index best = 0;
  for (Eigen::Index m = 1; m < logits.size(); ++m)
    if (logits[m] > logits[best]) best = m;
  PlanOutput p;
  p.trajectory = coords_to_plan(x.row(best), dt);
  p.scores.assign(logits.data(), logits.data() + logits.size());
  p.selected = static_cast<int>(best);
  p.modes = std::move(x);
  return p;
}

namespace {

Eigen::Index nearest_row(const Matd& rows, const Eigen::Ref<const Eigen::RowVectorXd>& q) {
  Eigen::Index best = 0;
  (rows.rowwise() - q).rowwise().squaredNorm().minCoeff(&best);
  return best;
}

}  // namespace

double anchor_spread(const Matd& anchors, const Matd& experts) {
  if (anchors.rows() == 0) throw Error(ErrorCode::kEmptyAnchors, "no anchors");
  if (experts.rows() == 0) throw Error(ErrorCode::kTooFewSamples, "no experts");
  double total = 0.0;
  for (Eigen::Index i = 0; i < experts.rows(); ++i)
    total += (experts.row(i) - anchors.row(nearest_row(anchors, experts.row(i)))).squaredNorm();
  return std::sqrt(total / static_cast<double>(experts.size()));
}

void init_diffusion(Params& ps, const DiffusionConfig& cfg, const Matd& anchors, const NoiseSchedule& schedule,
                    std::uint64_t seed) {
  if (anchors.rows() == 0) throw Error(ErrorCode::kEmptyAnchors, "diffusion needs at least one anchor");
  if (anchors.cols() != 2 * cfg.waypoints) throw Error(ErrorCode::kDimMismatch, "anchor width");
  schedule.validate();
  if (schedule.steps() != cfg.steps) throw Error(ErrorCode::kConfigError, "schedule length differs from config");
  ps = Params(seed);
  ps.add("diffusion/anchors", anchors, false);
  Matd sig(1, schedule.sigma.size());
  for (std::size_t i = 0; i < schedule.sigma.size(); ++i) sig(0, static_cast<Eigen::Index>(i)) = schedule.sigma[i];
  ps.add("diffusion/sigma", sig, false);
  init_encoder_impl(ps, cfg.encoder);
  add_scene_context(ps, cfg.encoder);
  ps.add_uniform("diffusion/step_embed", cfg.steps + 1, cfg.step_embed, 1);
  add_linear(ps, "denoiser/query", 2 * cfg.waypoints, cfg.encoder.attn_dim);
  add_attention(ps, cfg.encoder.adapter.dim, cfg.encoder.attn_dim, cfg.encoder.attn_dim, "traj");
  const int in = 4 * cfg.waypoints + cfg.step_embed + cfg.encoder.attn_dim + context_width(cfg.encoder);
  add_linear(ps, "denoiser/l1", in, cfg.hidden);
  add_linear(ps, "denoiser/l2", cfg.hidden, cfg.hidden);
  add_linear(ps, "denoiser/out", cfg.hidden, 2 * cfg.waypoints);
  add_linear(ps, "denoiser/conf", cfg.hidden, 1);
  // A zero offset makes the untrained denoiser return the anchors.
  ps["denoiser/out/w"].value.setZero();
  ps["denoiser/out/b"].value.setZero();
}

Matd diffusion_anchors(const Params& ps) { return ps["diffusion/anchors"].value; }

NoiseSchedule diffusion_schedule(const Params& ps) {
  const Matd& s = ps["diffusion/sigma"].value;
  NoiseSchedule out;
  out.sigma.assign(s.data(), s.data() + s.size());
  return out;
}

DiffusionScene diffusion_context(Tape& t, Params& ps, const Matd& input, const EgoStatus& s,
                                 const DiffusionConfig& cfg) {
  Var z = encode_tokens(t, ps, input, cfg.encoder);
  return {pool_tokens(t, ps, z, s, cfg.encoder), z};
}

std::pair<Var, Var> diffusion_denoise(Tape& t, Params& ps, Var noisy_metres, int k, const DiffusionScene& scene,
                                      const DiffusionConfig& cfg) {
  if (k < 1 || k > cfg.steps) throw Error(ErrorCode::kStepOutOfRange, "denoise step outside the schedule");
  const Eigen::Index modes = t.value(noisy_metres).rows();
  Var scaled = t.scale(noisy_metres, 1.0 / kCoordScale);
  Var step = t.rows(t.param(ps, "diffusion/step_embed"), k, 1);
  // Each noisy mode queries the scene along its own path.
  Var along = attend(t, ps, linear(t, ps, scaled, "denoiser/query"), scene.tokens, "traj");
  // Rows keep their identity: the clean anchor each mode started from is an input.
  Var anchor = t.constant(ps["diffusion/anchors"].value / kCoordScale);
  Var h = t.concat_cols(t.concat_cols(t.concat_cols(scaled, anchor), t.tile_rows(step, modes)), along);
  h = t.concat_cols(h, t.tile_rows(scene.context, modes));
  h = t.relu(linear(t, ps, h, "denoiser/l1"));
  h = t.relu(linear(t, ps, h, "denoiser/l2"));
  // Offsets are relative to each mode's clean anchor; the noisy sample only
  // informs them, so residual noise does not leak into the prediction.
  Var x0 = t.scale(t.add(anchor, linear(t, ps, h, "denoiser/out")), kCoordScale);
  Var conf = linear(t, ps, h, "denoiser/conf");
  return {x0, conf};
}

PlanOutput diffusion_plan(const Matd& input, const EgoStatus& s, Params& ps, const DiffusionConfig& cfg,
                          std::uint64_t seed) {
  Tape ctx_tape;
  const DiffusionScene scene = diffusion_context(ctx_tape, ps, input, s, cfg);
  const Matd ctx = ctx_tape.value(scene.context);
  const Matd tokens = ctx_tape.value(scene.tokens);
  Denoiser net = [&](const Matd& noisy, int k) {
    Tape t;
    auto [x0, conf] = diffusion_denoise(t, ps, t.constant(noisy), k, {t.constant(ctx), t.constant(tokens)}, cfg);
    return Denoised{t.value(x0), t.value(conf).col(0)};
  };
  return diffusion_sample(diffusion_anchors(ps), diffusion_schedule(ps), net, seed, cfg.dt);
}

Var diffusion_loss(Tape& t, Params& ps, const TrainSample& x, const DiffusionConfig& cfg, int k, const Matd& noise) {
  const Matd anchors = diffusion_anchors(ps);
  const NoiseSchedule sched = diffusion_schedule(ps);
  if (k < 1 || k > sched.steps()) throw Error(ErrorCode::kStepOutOfRange, "training step outside the schedule");
  if (noise.rows() != anchors.rows() || noise.cols() != anchors.cols())
    throw Error(ErrorCode::kDimMismatch, "noise shape");
  const Eigen::RowVectorXd expert = plan_coords(x.expert);
  const double sk = sched.sigma[static_cast<std::size_t>(k)];
  const double frac = sched.sigma.back() > 0 ? sk / sched.sigma.back() : 0.0;
  // Each mode starts partway between the expert and its own anchor.
  Matd noisy = (anchors * frac).rowwise() + expert * (1.0 - frac);
  noisy += sk * noise;
  const Eigen::Index positive = nearest_row(anchors, expert);

  const DiffusionScene scene = diffusion_context(t, ps, x.input, x.status, cfg);
  auto [x0, conf] = diffusion_denoise(t, ps, t.constant(noisy), k, scene, cfg);
  Var rec = t.mse(t.scale(t.rows(x0, positive, 1), 1.0 / kCoordScale), Matd(expert / kCoordScale));
  Var ce = t.cross_entropy(t.transpose(conf), {static_cast<int>(positive)});
  Var loss = t.add(rec, t.scale(ce, cfg.confidence_weight));
  if (cfg.anchor_weight > 0.0) {
    // Unmatched modes fall back to their clean anchor so no mode keeps its noise.
    Matd clean = anchors / kCoordScale;
    clean.row(positive) = expert / kCoordScale;
    loss = t.add(loss, t.scale(t.mse(t.scale(x0, 1.0 / kCoordScale), clean), cfg.anchor_weight));
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Scoring

Eigen::SparseMatrix<double> path_sampling(const Matd& candidates, int points, const perception::RasterConfig& raster) {
  const Eigen::Index v = candidates.rows();
  const Eigen::Index n = candidates.cols() / 2;
  if (points < 1 || n < 2 || raster.height < 2 || raster.width < 2)
    throw Error(ErrorCode::kDimMismatch, "path sampling needs two waypoints and a 2x2 grid");
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(4 * v * points));
  for (int p = 0; p < points; ++p) {
    const auto w = static_cast<Eigen::Index>(std::lround(static_cast<double>(p + 1) * (n - 1) / points));
    for (Eigen::Index c = 0; c < v; ++c) {
      // Continuous cell coordinates with cell centres at integers, clamped to the grid.
      const double fi = std::clamp((candidates(c, 2 * w) - raster.x_min) / raster.cell_x() - 0.5, 0.0,
                                   static_cast<double>(raster.height - 1));
      const double fj = std::clamp((candidates(c, 2 * w + 1) - raster.y_min) / raster.cell_y() - 0.5, 0.0,
                                   static_cast<double>(raster.width - 1));
      const int i0 = std::min(static_cast<int>(fi), raster.height - 2);
      const int j0 = std::min(static_cast<int>(fj), raster.width - 2);
      const double a = fi - i0, b = fj - j0;
      const Eigen::Index row = p * v + c;
      entries.emplace_back(row, i0 * raster.width + j0, (1 - a) * (1 - b));
      entries.emplace_back(row, i0 * raster.width + j0 + 1, (1 - a) * b);
      entries.emplace_back(row, (i0 + 1) * raster.width + j0, a * (1 - b));
      entries.emplace_back(row, (i0 + 1) * raster.width + j0 + 1, a * b);
    }
  }
  Eigen::SparseMatrix<double> out(v * points, raster.cells());
  out.setFromTriplets(entries.begin(), entries.end());
  return out;
}

void init_scoring(Params& ps, const ScoringConfig& cfg, int waypoints, std::uint64_t seed) {
  ps = Params(seed);
  init_encoder_impl(ps, cfg.encoder);
  add_scene_context(ps, cfg.encoder);
  vocabulary::init_tokenizer(ps, waypoints, cfg.token_dim, "tokenizer");
  add_attention(ps, cfg.encoder.adapter.dim, cfg.token_dim, cfg.encoder.attn_dim, "cand");
  const int path = cfg.path_points * cfg.encoder.adapter.dim;
  add_linear(ps, "head/l1", cfg.token_dim + cfg.encoder.attn_dim + path + context_width(cfg.encoder), cfg.hidden);
  add_linear(ps, "head/out", cfg.hidden, static_cast<int>(metrics::SubMetricScores::kCount));
}

Var scoring_forward(Tape& t, Params& ps, const Matd& input, const EgoStatus& s, const Matd& candidates,
                    const ScoringConfig& cfg) {
  const Eigen::Index n = candidates.rows();
  Var z = encode_tokens(t, ps, input, cfg.encoder);
  Var tokens = vocabulary::tokenize(t, ps, t.constant(candidates), "tokenizer");
  Var scene = attend(t, ps, tokens, z, "cand");
  // Token features read off at points along each candidate's own path.
  auto sampling = std::make_shared<const Eigen::SparseMatrix<double>>(
      path_sampling(candidates, cfg.path_points, cfg.encoder.extractor.raster));
  Var along = t.sparse_matmul(sampling, z);
  along = t.reshape(along, n, static_cast<Eigen::Index>(cfg.path_points) * cfg.encoder.adapter.dim);
  Var h = t.concat_cols(t.concat_cols(tokens, scene), along);
  h = t.concat_cols(h, t.tile_rows(pool_tokens(t, ps, z, s, cfg.encoder), n));
  h = t.relu(linear(t, ps, h, "head/l1"));
  return linear(t, ps, h, "head/out");
}

Matd scoring_scores(const Matd& input, const EgoStatus& s, Params& ps, const Matd& candidates,
                    const ScoringConfig& cfg) {
  Tape t;
  return t.value(t.sigmoid(scoring_forward(t, ps, input, s, candidates, cfg)));
}

Eigen::VectorXd aggregate_candidate_scores(const Matd& sub, const ScoreWeights& omega) {
  if (sub.cols() != static_cast<Eigen::Index>(omega.size()))
    throw Error(ErrorCode::kDimMismatch, "one weight per sub-score required");
  const Eigen::Map<const Eigen::VectorXd> w(omega.data(), static_cast<Eigen::Index>(omega.size()));
  return sub * w;
}

PlanOutput select_best(const Eigen::VectorXd& scores, const vocabulary::TrajectoryVocabulary& vocab) {
  if (scores.size() == 0 || static_cast<std::size_t>(scores.size()) != vocab.size())
    throw Error(ErrorCode::kDimMismatch, "one score per candidate required");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  PlanOutput p;
  p.trajectory = vocab.candidates[static_cast<std::size_t>(best)];
  p.scores.assign(scores.data(), scores.data() + scores.size());
  p.selected = static_cast<int>(best);
  return p;
}

PlanOutput scoring_plan(const Matd& input, const EgoStatus& s, Params& ps, const vocabulary::TrajectoryVocabulary& vocab,
                        const ScoringConfig& cfg) {
  const Matd sub = scoring_scores(input, s, ps, vocabulary::flatten_xy(vocab.candidates), cfg);
  return select_best(aggregate_candidate_scores(sub, cfg.omega), vocab);
}

Matd scoring_targets(const Scenario& s, const vocabulary::TrajectoryVocabulary& vocab,
                     const metrics::MetricConfig& mcfg) {
  const auto expert = metrics::expert_scores(s, mcfg);
  Matd out(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(metrics::SubMetricScores::kCount));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto r = metrics::evaluate_plan(s, sim::plan_to_world(s, vocab.candidates[i]), expert, mcfg);
    for (std::size_t j = 0; j < metrics::SubMetricScores::kCount; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.scores[j];
  }
  return out;
}

Var scoring_loss(Tape& t, Params& ps, const TrainSample& x, const Matd& candidates, const ScoringConfig& cfg) {
  if (!x.targets) throw Error(ErrorCode::kInvalidArgument, "scoring sample without targets");
  return t.bce_with_logits(scoring_forward(t, ps, x.input, x.status, candidates, cfg), *x.targets);
}

// ---------------------------------------------------------------------------
// Training

namespace {

using SampleLoss = std::function<Var(Tape&, std::size_t index, Rng& rng)>;

TrainLog train_loop(Params& ps, std::size_t n, const TrainConfig& tc, const SampleLoss& loss) {
  if (n == 0) throw Error(ErrorCode::kTooFewSamples, "empty training set");
  if (tc.steps < 0 || tc.batch < 1) throw Error(ErrorCode::kConfigError, "training needs batch >= 1");
  nn::AdamW<double> opt({tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay});
  Rng rng(tc.seed);
  TrainLog log;
  log.loss.reserve(static_cast<std::size_t>(tc.steps));
  std::vector<Matd> acc;
  for (int step = 0; step < tc.steps; ++step) {
    acc.clear();
    for (const auto& p : ps) acc.push_back(Matd::Zero(p.value.rows(), p.value.cols()));
    double total = 0.0;
    for (int b = 0; b < tc.batch; ++b) {
      const std::size_t idx = rng.index(n);
      ps.zero_grad();
      Tape t;
      Var l = loss(t, idx, rng);
      total += t.scalar(l);
      t.backward(l);
      for (std::size_t i = 0; i < ps.size(); ++i) acc[i] += ps[static_cast<int>(i)].grad;
    }
    for (std::size_t i = 0; i < ps.size(); ++i) ps[static_cast<int>(i)].grad = acc[i] / tc.batch;
    const double mean = total / tc.batch;
    if (!std::isfinite(mean)) throw Error(ErrorCode::kNumericFailure, "training loss is not finite");
    log.loss.push_back(mean);
    opt.step(ps);
  }
  ps.zero_grad();
  return log;
}

}  // namespace

TrainLog train_regression(Params& ps, const std::vector<TrainSample>& data, const RegressionConfig& cfg,
                          const TrainConfig& tc) {
  return train_loop(ps, data.size(), tc,
                    [&](Tape& t, std::size_t i, Rng&) { return regression_loss(t, ps, data[i], cfg); });
}

TrainLog train_diffusion(Params& ps, const std::vector<TrainSample>& data, const DiffusionConfig& cfg,
                         const TrainConfig& tc) {
  const Matd anchors = diffusion_anchors(ps);
  return train_loop(ps, data.size(), tc, [&](Tape& t, std::size_t i, Rng& rng) {
    const int k = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(cfg.steps)));
    Matd noise(anchors.rows(), anchors.cols());
    for (Eigen::Index j = 0; j < noise.size(); ++j) noise.data()[j] = rng.normal();
    return diffusion_loss(t, ps, data[i], cfg, k, noise);
  });
}

TrainLog train_scoring(Params& ps, const std::vector<TrainSample>& data, const vocabulary::TrajectoryVocabulary& vocab,
                       const ScoringConfig& cfg, const TrainConfig& tc) {
  const Matd cands = vocabulary::flatten_xy(vocab.candidates);
  return train_loop(ps, data.size(), tc,
                    [&](Tape& t, std::size_t i, Rng&) { return scoring_loss(t, ps, data[i], cands, cfg); });
}

}  // namespace navrobust::planners
