#pragma once

// Perception surrogates over a bird's-eye raster of the scene.
//
// rasterize() turns scene geometry into raw per-cell channels in the ego
// frame. Two extractors share one fixed nonlinear mixing of those channels:
// the constant eye mixes the raster directly, so its output cannot depend on
// the style field; the brittle extractor first applies a style-keyed
// corruption (gain, offset, channel swaps and a smooth multiplicative field).
// The raster also carries "texture" channels, redundant copies of key layers
// that the corruption hits hardest and the fixed mixing down-weights.

#include <string>
#include <vector>

#include "navrobust/nn.hpp"
#include "navrobust/scenario.hpp"

namespace navrobust::perception {

using nn::Matd;

struct RasterConfig {
  int height = 16;  // cells along ego x (forward)
  int width = 16;   // cells along ego y (left)
  double x_min = -8.0;
  double x_max = 56.0;
  double y_min = -32.0;
  double y_max = 32.0;
  int supersample = 4;  // per axis, for area fractions
  double lane_half_width = 1.75;

  double cell_x() const { return (x_max - x_min) / height; }
  double cell_y() const { return (y_max - y_min) / width; }
  int cells() const { return height * width; }
};

enum RawChannel : int {
  kDrivable = 0,
  kCenterlineField,
  kRouteMask,
  kRouteCos,
  kRouteSin,
  kVehicleOccupancy,
  kVehicleVx,
  kVehicleVy,
  kPedestrianOccupancy,
  kPedestrianVx,
  kPedestrianVy,
  kRedLight,
  kGreenLight,
  kRedRemaining,
  kGoalLeft,
  kGoalStraight,
  kGoalRight,
  kTextureDrivable,
  kTextureVehicle,
  kTextureRoute,
  kTextureLight,
  kRawChannelCount
};

inline constexpr int kGeometryChannels = kTextureDrivable;

/// Raw raster, (height*width, kRawChannelCount), row index i*width + j with
/// cell (i, j) centred at x = x_min + (i+0.5)*cell_x, y = y_min + (j+0.5)*cell_y.
Matd rasterize(const scenario::Scenario& s, const RasterConfig& cfg = {});

/// Cell-centre position in the ego frame.
geom::Vec2d cell_center(int i, int j, const RasterConfig& cfg);

struct ExtractorConfig {
  int channels = 32;
  std::uint64_t mixing_seed = 0x5EED;
  double mixing_gain = 1.6;
  double texture_weight = 0.25;  // relative mixing weight of texture channels
  RasterConfig raster;
};

/// The fixed mixing tanh(raw * weight + bias).
struct Mixing {
  Matd weight;  // (kRawChannelCount, channels)
  Matd bias;    // (1, channels)
};

Mixing make_mixing(const ExtractorConfig& cfg);

/// tanh(raster * weight + bias), row by row.
Matd apply_mixing(const Matd& raster, const Mixing& m);

struct CorruptionConfig {
  std::uint64_t seed = 0xC0FFEE;
  double min_gain_delta = 0.15;  // |gain - 1| lower bound on geometry channels
  double max_gain_delta = 0.45;
  double offset_scale = 0.2;
  int geometry_swaps = 1;         // channel pairs exchanged among geometry channels
  double texture_gain_delta = 1.5;
  double texture_offset_scale = 0.8;
  double field_amplitude = 0.3;   // smooth multiplicative field 1 + A sin(.)
};

/// One style's corruption. The origin style carries the identity.
struct StyleCorruption {
  std::vector<double> gain;
  std::vector<double> offset;
  std::vector<int> permutation;  // output channel c reads raw channel permutation[c]
  double field_amplitude = 0.0;
  double field_freq_x = 0.0;  // cycles across the grid
  double field_freq_y = 0.0;
  double field_phase = 0.0;

  bool is_identity() const;
  bool operator==(const StyleCorruption&) const = default;
};

StyleCorruption style_corruption(int style_id, const CorruptionConfig& cfg);

/// Applies a corruption to a raw raster.
Matd corrupt(const Matd& raw, const StyleCorruption& c, const RasterConfig& cfg);

struct FeatureGrid {
  Matd grid;  // (height*width, channels)
  int height = 0;
  int width = 0;
  std::string extractor_id;
  scenario::StyleId style;
};

FeatureGrid extract_constant_eye(const scenario::Scenario& s, const ExtractorConfig& cfg = {});
FeatureGrid extract_brittle(const scenario::Scenario& s, const ExtractorConfig& cfg = {},
                            const CorruptionConfig& corruption = {});

/// Mixing applied to a raster inside a tape, for the trainable-extractor arm.
template <typename Scalar>
typename nn::Tape<Scalar>::Var mix(nn::Tape<Scalar>& t, typename nn::Tape<Scalar>::Var raster,
                                   typename nn::Tape<Scalar>::Var weight, typename nn::Tape<Scalar>::Var bias) {
  return t.tanh(t.affine(raster, weight, bias));
}

// ---------------------------------------------------------------------------
// Adapter

struct AdapterConfig {
  int in_channels = 32;
  int dim = 16;
  int depth = 4;
  bool cnn = true;  // x2 upsample conv followed by a stride-2 conv
  int height = 16;
  int width = 16;
};

/// Registers adapter parameters under `prefix`.
void init_adapter(nn::ParamSet<double>& ps, const AdapterConfig& cfg, const std::string& prefix = "adapter");

/// MLP over channels, then the optional spatial aggregator; returns
/// (height*width, dim) tokens.
nn::Tape<double>::Var adapt(nn::Tape<double>& t, nn::ParamSet<double>& ps, nn::Tape<double>::Var grid,
                            const AdapterConfig& cfg, const std::string& prefix = "adapter");

Matd adapt(const FeatureGrid& f, nn::ParamSet<double>& ps, const AdapterConfig& cfg,
           const std::string& prefix = "adapter");

// ---------------------------------------------------------------------------
// Diagnostics

/// Mean over positions of the cross-style variance of each token, divided by
/// the variance across positions of the style-mean tokens. Each entry of
/// `tokens_per_style` is (N, d) for one style.
double token_dispersion(const std::vector<Matd>& tokens_per_style);

struct PcaResult {
  Matd projection;             // (N, k)
  Matd components;             // (C, k), unit columns
  Eigen::VectorXd explained;   // variance fraction per component
};

/// Top-k principal components of an (N, C) feature matrix. Component signs
/// make the largest-magnitude loading positive.
PcaResult pca_maps(const Matd& features, int k = 3);

}  // namespace navrobust::perception
