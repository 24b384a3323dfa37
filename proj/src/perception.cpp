#include "navrobust/perception.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace navrobust::perception {

using geom::OrientedBoxd;
using geom::Pose2d;
using geom::Vec2d;
using scenario::Scenario;

geom::Vec2d cell_center(int i, int j, const RasterConfig& cfg) {
  return {cfg.x_min + (i + 0.5) * cfg.cell_x(), cfg.y_min + (j + 0.5) * cfg.cell_y()};
}

namespace {

int cell_of(const Vec2d& local, const RasterConfig& cfg) {
  const int i = static_cast<int>(std::floor((local.x() - cfg.x_min) / cfg.cell_x()));
  const int j = static_cast<int>(std::floor((local.y() - cfg.y_min) / cfg.cell_y()));
  if (i < 0 || i >= cfg.height || j < 0 || j >= cfg.width) return -1;
  return i * cfg.width + j;
}

Vec2d to_world(const Pose2d& frame, const Vec2d& local) {
  return geom::compose(frame, Pose2d{local.x(), local.y(), 0.0}).position();
}

void rasterize_agents(const Scenario& s, const RasterConfig& cfg, Matd& raw) {
  const Pose2d& ego = s.ego_pose();
  const double c = std::cos(ego.heading), sn = std::sin(ego.heading);
  // agents are written in index order; a cell keeps the first agent's velocity
  std::vector<bool> written(static_cast<std::size_t>(cfg.cells() * 2), false);
  for (const auto& a : s.agents) {
    const bool vehicle = a.kind == scenario::AgentKind::kVehicle;
    const int occ = vehicle ? kVehicleOccupancy : kPedestrianOccupancy;
    const OrientedBoxd box{geom::relative(ego, a.logged.front()), a.half_length, a.half_width};
    const Vec2d v_world = (a.logged[1].position() - a.logged[0].position()) / a.logged.dt;
    const Vec2d v_local(c * v_world.x() + sn * v_world.y(), -sn * v_world.x() + c * v_world.y());
    for (int i = 0; i < cfg.height; ++i)
      for (int j = 0; j < cfg.width; ++j) {
        const OrientedBoxd cell{{cell_center(i, j, cfg).x(), cell_center(i, j, cfg).y(), 0.0},
                                cfg.cell_x() / 2, cfg.cell_y() / 2};
        if (!geom::obb_overlap(cell, box)) continue;
        const int r = i * cfg.width + j;
        raw(r, occ) = 1.0;
        const std::size_t slot = static_cast<std::size_t>(r * 2 + (vehicle ? 0 : 1));
        if (written[slot]) continue;
        written[slot] = true;
        raw(r, occ + 1) = v_local.x() / 10.0;
        raw(r, occ + 2) = v_local.y() / 10.0;
      }
  }
}

void rasterize_lights(const Scenario& s, const RasterConfig& cfg, Matd& raw) {
  const Pose2d& ego = s.ego_pose();
  const double dt = s.dt();
  const double horizon = s.expert.duration();
  for (const auto& light : s.lights) {
    const bool red = light.phase.front() == scenario::LightPhase::kRed;
    std::size_t red_steps = 0;
    while (red_steps < light.phase.size() && light.phase[red_steps] == scenario::LightPhase::kRed) ++red_steps;
    const double remaining = red ? std::min(1.0, static_cast<double>(red_steps) * dt / horizon) : 0.0;
    const auto& v = light.stop_line.vertices;
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const double len = (v[k + 1] - v[k]).norm();
      const int n = std::max(1, static_cast<int>(std::ceil(len / 0.25)));
      for (int m = 0; m <= n; ++m) {
        const Vec2d p = v[k] + (v[k + 1] - v[k]) * (static_cast<double>(m) / n);
        const int r = cell_of(geom::relative(ego, Pose2d{p.x(), p.y(), 0.0}).position(), cfg);
        if (r < 0) continue;
        raw(r, red ? kRedLight : kGreenLight) = 1.0;
        raw(r, kRedRemaining) = remaining;
      }
    }
  }
}

}  // namespace

Matd rasterize(const Scenario& s, const RasterConfig& cfg) {
  Matd raw = Matd::Zero(cfg.cells(), kRawChannelCount);
  const Pose2d& ego = s.ego_pose();
  const int ss = cfg.supersample;
  const double inv = 1.0 / (ss * ss);
  const auto& route = s.route();
  for (int i = 0; i < cfg.height; ++i)
    for (int j = 0; j < cfg.width; ++j) {
      const int r = i * cfg.width + j;
      double drivable = 0.0, on_route = 0.0;
      for (int a = 0; a < ss; ++a)
        for (int b = 0; b < ss; ++b) {
          const Vec2d local(cfg.x_min + (i + (a + 0.5) / ss) * cfg.cell_x(),
                            cfg.y_min + (j + (b + 0.5) / ss) * cfg.cell_y());
          const Vec2d p = to_world(ego, local);
          if (std::any_of(s.drivable.begin(), s.drivable.end(),
                          [&](const geom::Polygond& poly) { return geom::point_in_polygon(p, poly); }))
            drivable += inv;
          if (std::abs(geom::project_to_polyline(p, route).lateral) <= cfg.lane_half_width) on_route += inv;
        }
      const Vec2d centre = to_world(ego, cell_center(i, j, cfg));
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& lane : s.lanes)
        nearest = std::min(nearest, std::abs(geom::project_to_polyline(centre, lane.centerline).lateral));
      const auto route_proj = geom::project_to_polyline(centre, route);
      const double rel_heading = route_proj.tangent_heading - ego.heading;
      raw(r, kDrivable) = drivable;
      raw(r, kCenterlineField) = std::exp(-nearest * nearest / 8.0);
      raw(r, kRouteMask) = on_route;
      raw(r, kRouteCos) = on_route * std::cos(rel_heading);
      raw(r, kRouteSin) = on_route * std::sin(rel_heading);
    }
  rasterize_agents(s, cfg, raw);
  rasterize_lights(s, cfg, raw);
  const int goal = s.goal_command == scenario::Command::kLeft       ? kGoalLeft
                   : s.goal_command == scenario::Command::kStraight ? kGoalStraight
                                                                    : kGoalRight;
  raw.col(goal).setOnes();
  raw.col(kTextureDrivable) = raw.col(kDrivable);
  raw.col(kTextureVehicle) = raw.col(kVehicleOccupancy);
  raw.col(kTextureRoute) = raw.col(kRouteMask);
  raw.col(kTextureLight) = raw.col(kRedLight) - raw.col(kGreenLight);
  return raw;
}

Mixing make_mixing(const ExtractorConfig& cfg) {
  Rng rng(cfg.mixing_seed);
  Mixing m;
  m.weight.resize(kRawChannelCount, cfg.channels);
  const double scale = cfg.mixing_gain / std::sqrt(static_cast<double>(kRawChannelCount));
  for (int r = 0; r < kRawChannelCount; ++r)
    for (int c = 0; c < cfg.channels; ++c)
      m.weight(r, c) = rng.normal() * scale * (r >= kGeometryChannels ? cfg.texture_weight : 1.0);
  m.bias.resize(1, cfg.channels);
  for (int c = 0; c < cfg.channels; ++c) m.bias(0, c) = 0.1 * rng.normal();
  return m;
}

bool StyleCorruption::is_identity() const {
  for (std::size_t c = 0; c < gain.size(); ++c)
    if (gain[c] != 1.0 || offset[c] != 0.0 || permutation[c] != static_cast<int>(c)) return false;
  return field_amplitude == 0.0;
}

StyleCorruption style_corruption(int style_id, const CorruptionConfig& cfg) {
  StyleCorruption c;
  c.gain.assign(kRawChannelCount, 1.0);
  c.offset.assign(kRawChannelCount, 0.0);
  c.permutation.resize(kRawChannelCount);
  std::iota(c.permutation.begin(), c.permutation.end(), 0);
  if (style_id == 0) return c;

  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(style_id)));
  auto sign = [&] { return rng.bernoulli(0.5) ? 1.0 : -1.0; };
  for (int ch = 0; ch < kRawChannelCount; ++ch) {
    if (ch < kGeometryChannels) {
      c.gain[ch] = 1.0 + sign() * rng.uniform(cfg.min_gain_delta, cfg.max_gain_delta);
      c.offset[ch] = rng.uniform(-cfg.offset_scale, cfg.offset_scale);
    } else {
      c.gain[ch] = 1.0 + sign() * rng.uniform(0.5 * cfg.texture_gain_delta, cfg.texture_gain_delta);
      c.offset[ch] = rng.uniform(-cfg.texture_offset_scale, cfg.texture_offset_scale);
    }
  }
  for (int k = 0; k < cfg.geometry_swaps; ++k) {
    const auto a = static_cast<int>(rng.index(kGeometryChannels));
    auto b = static_cast<int>(rng.index(kGeometryChannels - 1));
    if (b >= a) ++b;
    std::swap(c.permutation[a], c.permutation[b]);
  }
  // texture channels are always scrambled: a random rotation of their order
  const int texture = kRawChannelCount - kGeometryChannels;
  const auto shift = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(texture - 1)));
  for (int k = 0; k < texture; ++k) c.permutation[kGeometryChannels + k] = kGeometryChannels + (k + shift) % texture;
  c.field_amplitude = cfg.field_amplitude;
  c.field_freq_x = rng.uniform(0.5, 2.0);
  c.field_freq_y = rng.uniform(0.5, 2.0);
  c.field_phase = rng.uniform(0.0, 2.0 * M_PI);
  return c;
}

Matd corrupt(const Matd& raw, const StyleCorruption& c, const RasterConfig& cfg) {
  if (raw.cols() != static_cast<Eigen::Index>(c.gain.size()) || raw.rows() != cfg.cells())
    throw Error(ErrorCode::kDimMismatch, "raster shape does not match the corruption");
  if (c.is_identity()) return raw;
  Matd out(raw.rows(), raw.cols());
  for (int i = 0; i < cfg.height; ++i)
    for (int j = 0; j < cfg.width; ++j) {
      const double u = (i + 0.5) / cfg.height, v = (j + 0.5) / cfg.width;
      const double field =
          1.0 + c.field_amplitude * std::sin(2.0 * M_PI * (c.field_freq_x * u + c.field_freq_y * v) + c.field_phase);
      const int r = i * cfg.width + j;
      for (Eigen::Index ch = 0; ch < raw.cols(); ++ch)
        out(r, ch) = c.gain[static_cast<std::size_t>(ch)] * raw(r, c.permutation[static_cast<std::size_t>(ch)]) * field +
                     c.offset[static_cast<std::size_t>(ch)];
    }
  return out;
}

Matd apply_mixing(const Matd& raster, const Mixing& m) {
  if (raster.cols() != m.weight.rows()) throw Error(ErrorCode::kDimMismatch, "raster width does not match the mixing");
  Matd pre = raster * m.weight;
  pre.rowwise() += m.bias.row(0);
  return pre.array().tanh().matrix();
}

FeatureGrid extract_constant_eye(const Scenario& s, const ExtractorConfig& cfg) {
  // the style field is never read on this path
  return {apply_mixing(rasterize(s, cfg.raster), make_mixing(cfg)), cfg.raster.height, cfg.raster.width,
          "constant_eye", s.style};
}

FeatureGrid extract_brittle(const Scenario& s, const ExtractorConfig& cfg, const CorruptionConfig& corruption) {
  const Matd raw = corrupt(rasterize(s, cfg.raster), style_corruption(s.style.id, corruption), cfg.raster);
  return {apply_mixing(raw, make_mixing(cfg)), cfg.raster.height, cfg.raster.width, "brittle", s.style};
}

// ---------------------------------------------------------------------------

namespace {

std::string layer_name(const std::string& prefix, int l, const char* what) {
  return prefix + "/mlp" + std::to_string(l) + "/" + what;
}

}  // namespace

void init_adapter(nn::ParamSet<double>& ps, const AdapterConfig& cfg, const std::string& prefix) {
  if (cfg.depth < 1 || cfg.dim < 1) throw Error(ErrorCode::kConfigError, "adapter depth and dim must be positive");
  for (int l = 0; l < cfg.depth; ++l) {
    const int in = l == 0 ? cfg.in_channels : cfg.dim;
    ps.add_uniform(layer_name(prefix, l, "w"), in, cfg.dim, in);
    ps.add_uniform(layer_name(prefix, l, "b"), 1, cfg.dim, in);
  }
  if (cfg.cnn) {
    ps.add_uniform(prefix + "/up/k", 9 * cfg.dim, cfg.dim, 9 * cfg.dim);
    ps.add_uniform(prefix + "/up/b", 1, cfg.dim, 9 * cfg.dim);
    ps.add_uniform(prefix + "/down/k", 9 * cfg.dim, cfg.dim, 9 * cfg.dim);
    ps.add_uniform(prefix + "/down/b", 1, cfg.dim, 9 * cfg.dim);
  }
}

nn::Tape<double>::Var adapt(nn::Tape<double>& t, nn::ParamSet<double>& ps, nn::Tape<double>::Var grid,
                            const AdapterConfig& cfg, const std::string& prefix) {
  const Matd& g = t.value(grid);
  if (g.cols() != cfg.in_channels || g.rows() != static_cast<Eigen::Index>(cfg.height) * cfg.width)
    throw Error(ErrorCode::kDimMismatch, "feature grid does not match the adapter");
  auto h = grid;
  for (int l = 0; l < cfg.depth; ++l) {
    h = t.affine(h, t.param(ps, layer_name(prefix, l, "w")), t.param(ps, layer_name(prefix, l, "b")));
    if (l + 1 < cfg.depth) h = t.relu(h);
  }
  if (!cfg.cnn) return h;
  auto up = t.upsample2(h, cfg.height, cfg.width);
  up = t.conv3x3(up, 2 * cfg.height, 2 * cfg.width, t.param(ps, prefix + "/up/k"), t.param(ps, prefix + "/up/b"), 1);
  return t.conv3x3(up, 2 * cfg.height, 2 * cfg.width, t.param(ps, prefix + "/down/k"), t.param(ps, prefix + "/down/b"),
                   2);
}

Matd adapt(const FeatureGrid& f, nn::ParamSet<double>& ps, const AdapterConfig& cfg, const std::string& prefix) {
  nn::Tape<double> t;
  return t.value(adapt(t, ps, t.constant(f.grid), cfg, prefix));
}

// ---------------------------------------------------------------------------

double token_dispersion(const std::vector<Matd>& tokens_per_style) {
  if (tokens_per_style.size() < 2) throw Error(ErrorCode::kTooFewStyles, "dispersion needs at least two styles");
  const Matd& first = tokens_per_style.front();
  for (const auto& t : tokens_per_style)
    if (t.rows() != first.rows() || t.cols() != first.cols())
      throw Error(ErrorCode::kDimMismatch, "token sequences differ in shape");
  const auto styles = static_cast<double>(tokens_per_style.size());
  // Mean as an offset from the first style, so identical inputs give an
  // exactly zero within-style term.
  Matd offset = Matd::Zero(first.rows(), first.cols());
  for (const auto& t : tokens_per_style) offset += t - first;
  const Matd mean = first + offset / styles;
  double within = 0.0;
  for (const auto& t : tokens_per_style) within += (t - mean).squaredNorm();
  within /= styles * static_cast<double>(first.rows());
  const Eigen::RowVectorXd grand = mean.colwise().mean();
  const double between = (mean.rowwise() - grand).squaredNorm() / static_cast<double>(first.rows());
  if (within == 0.0) return 0.0;
  if (!(between > 0.0)) throw Error(ErrorCode::kNumericFailure, "style-mean tokens do not vary across positions");
  return within / between;
}

PcaResult pca_maps(const Matd& features, int k) {
  if (k < 1 || k > features.cols()) throw Error(ErrorCode::kDimMismatch, "k must lie in [1, channels]");
  const Matd centered = features.rowwise() - features.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(features.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index c = cov.rows();
  PcaResult r;
  r.components.resize(c, k);
  r.explained.resize(k);
  const double total = eig.eigenvalues().sum();
  for (int m = 0; m < k; ++m) {
    Eigen::VectorXd v = eig.eigenvectors().col(c - 1 - m);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    r.components.col(m) = v;
    r.explained[m] = total > 0 ? std::max(0.0, eig.eigenvalues()[c - 1 - m]) / total : 0.0;
  }
  r.projection = centered * r.components;
  return r;
}

}  // namespace navrobust::perception
