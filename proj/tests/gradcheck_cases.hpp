#pragma once

// Finite-difference cases shared by the unit tests and the acceptance run:
// one loss per differentiable tape operation and one per planner loss.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "navrobust/nn.hpp"
#include "navrobust/planners.hpp"

namespace gradcheck {

using namespace navrobust;
using nn::Matd;
using Tape = nn::Tape<double>;
using Params = nn::ParamSet<double>;
using Var = Tape::Var;

struct Case {
  std::string name;
  std::shared_ptr<Params> params;
  nn::LossBuilder<double> build;
  double tolerance = 1e-4;
};

inline Matd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

inline std::vector<Case> op_cases() {
  Rng rng(11);
  const Matd x = random_matrix(rng, 6, 4);
  const Matd target = random_matrix(rng, 6, 3);
  auto ps = std::make_shared<Params>(9);
  ps->add_uniform("w1", 4, 4, 4);
  ps->add_uniform("b1", 1, 4, 4);
  ps->add_uniform("w2", 4, 3, 4);
  ps->add_uniform("g", 1, 4, 1);
  ps->add_uniform("beta", 1, 4, 1);
  ps->add_uniform("q", 2, 4, 4);
  ps->add_uniform("kernel", 36, 4, 36);
  ps->add_uniform("kb", 1, 4, 1);

  // a fixed sparse operator with two entries per row
  Eigen::SparseMatrix<double> s(5, 6);
  for (int r = 0; r < 5; ++r) {
    s.insert(r, r) = 0.5 + 0.1 * r;
    s.insert(r, (r + 3) % 6) = -0.7;
  }
  auto sparse = std::make_shared<const Eigen::SparseMatrix<double>>(std::move(s));

  std::vector<Case> out;
  auto add = [&](std::string name, nn::LossBuilder<double> build, double tol = 1e-4) {
    out.push_back({std::move(name), ps, std::move(build), tol});
  };
  add("quadratic", [=](Tape& t, Params& p) { return t.mse(t.param(p, "w2"), target.topRows(4)); }, 1e-8);
  add("affine+relu", [=](Tape& t, Params& p) {
    Var h = t.relu(t.affine(t.constant(x), t.param(p, "w1"), t.param(p, "b1")));
    return t.mse(t.matmul(h, t.param(p, "w2")), target);
  });
  add("tanh+sigmoid", [=](Tape& t, Params& p) {
    Var h = t.tanh(t.matmul(t.constant(x), t.param(p, "w1")));
    return t.mean(t.sigmoid(t.matmul(h, t.param(p, "w2"))));
  });
  add("layer_norm", [=](Tape& t, Params& p) {
    Var h = t.layer_norm(t.matmul(t.constant(x), t.param(p, "w1")), t.param(p, "g"), t.param(p, "beta"));
    return t.mse(t.matmul(h, t.param(p, "w2")), target);
  });
  add("attention", [=](Tape& t, Params& p) {
    Var kv = t.matmul(t.constant(x), t.param(p, "w1"));
    Var y = t.softmax_attention(t.param(p, "q"), kv, t.tanh(kv));
    return t.mse(t.matmul(y, t.param(p, "w2")), target.topRows(2));
  });
  add("conv+upsample", [=](Tape& t, Params& p) {
    Var g = t.matmul(t.constant(x), t.param(p, "w1"));  // 2x3 grid
    Var up = t.upsample2(g, 2, 3);
    Var c1 = t.conv3x3(up, 4, 6, t.param(p, "kernel"), t.param(p, "kb"), 1);
    Var c2 = t.conv3x3(c1, 4, 6, t.param(p, "kernel"), t.param(p, "kb"), 2);
    return t.mse(t.matmul(c2, t.param(p, "w2")), target);
  });
  add("shape ops", [=](Tape& t, Params& p) {
    Var a = t.matmul(t.constant(x), t.param(p, "w1"));
    Var b = t.concat_cols(t.rows(a, 1, 3), t.rows(t.transpose(t.transpose(a)), 0, 3));
    Var c = t.concat_rows(t.reshape(b, 6, 4), t.tile_rows(t.param(p, "b1"), 2));
    Var d = t.hadamard(t.sub(c, t.scale(c, 0.3)), t.add(c, c));
    return t.add(t.mean(t.mean_rows(d)), t.sum(t.mean_rows(c)));
  });
  add("sparse_matmul", [=](Tape& t, Params& p) {
    Var a = t.tanh(t.matmul(t.constant(x), t.param(p, "w1")));
    return t.mse(t.matmul(t.sparse_matmul(sparse, a), t.param(p, "w2")), target.topRows(5));
  });
  add("bce", [=](Tape& t, Params& p) {
    Matd tgt = (target.array() > 0).cast<double>();
    return t.bce_with_logits(t.matmul(t.constant(x), t.param(p, "w2")), tgt);
  });
  add("cross_entropy", [=](Tape& t, Params& p) {
    return t.cross_entropy(t.matmul(t.constant(x), t.param(p, "w2")), {0, 2, 1, 1, 0, 2});
  });
  return out;
}

// Arcs with endpoints spread laterally over +-12 m, as (count, 2 * waypoints).
inline Matd arc_fan(int count, int waypoints, double length, double dt) {
  Matd out(count, 2 * waypoints);
  for (int m = 0; m < count; ++m) {
    const double lateral = count == 1 ? 0.0 : -12.0 + 24.0 * m / (count - 1);
    geom::Trajectoryd t{dt, {}};
    for (int k = 0; k <= waypoints; ++k) {
      const double u = static_cast<double>(k) / waypoints;
      t.waypoints.push_back({length * u, lateral * u * u, 0.0});
    }
    out.row(m) = planners::plan_coords(t);
  }
  return out;
}

inline planners::EncoderConfig small_encoder() {
  planners::EncoderConfig e;
  e.adapter.depth = 2;
  e.adapter.cnn = true;
  return e;
}

/// Full planner losses on one generated scene, each with its own parameters.
inline std::vector<Case> planner_cases() {
  using namespace planners;
  const scenario::StyleRegistry reg;
  const auto s = scenario::generate_scenario(31, reg.style(0), scenario::GeneratorConfig{});
  auto x = std::make_shared<TrainSample>();
  x->input = perception::extract_constant_eye(s).grid;
  x->status = ego_status(s);
  x->expert = expert_in_ego_frame(s, 0.5);
  std::vector<Case> out;

  {
    RegressionConfig cfg;
    cfg.encoder = small_encoder();
    auto ps = std::make_shared<Params>(1);
    init_regression(*ps, cfg, 5);
    out.push_back({"regression loss", ps, [=](Tape& t, Params& p) { return regression_loss(t, p, *x, cfg); }});
  }
  {
    RegressionConfig cfg;
    cfg.encoder = small_encoder();
    cfg.encoder.trainable_extractor = true;
    auto raw = std::make_shared<TrainSample>(*x);
    raw->input = perception::rasterize(s);
    auto ps = std::make_shared<Params>(1);
    init_regression(*ps, cfg, 6);
    out.push_back({"regression loss, trainable extractor", ps,
                   [=](Tape& t, Params& p) { return regression_loss(t, p, *raw, cfg); }});
  }
  {
    DiffusionConfig cfg;
    cfg.encoder = small_encoder();
    const Matd anchors = arc_fan(6, cfg.waypoints, 30.0, cfg.dt);
    auto ps = std::make_shared<Params>(1);
    init_diffusion(*ps, cfg, anchors, truncated_schedule(cfg.steps, 1.0), 7);
    // the zero-initialised output head would leave part of the graph untested
    Rng rng(3);
    for (auto* name : {"denoiser/out/w", "denoiser/out/b"})
      for (Eigen::Index i = 0; i < (*ps)[name].value.size(); ++i) (*ps)[name].value.data()[i] = 0.1 * rng.normal();
    Matd noise(anchors.rows(), anchors.cols());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.normal();
    out.push_back({"diffusion loss", ps, [=](Tape& t, Params& p) { return diffusion_loss(t, p, *x, cfg, 2, noise); }});
  }
  {
    ScoringConfig cfg;
    cfg.encoder = small_encoder();
    vocabulary::TrajectoryVocabulary v;
    const Matd cand = arc_fan(10, 8, 25.0, 0.5);
    for (Eigen::Index c = 0; c < cand.rows(); ++c) v.candidates.push_back(coords_to_plan(cand.row(c), 0.5));
    auto targets = std::make_shared<const Matd>(scoring_targets(s, v));
    auto scored = std::make_shared<TrainSample>(*x);
    scored->targets = targets.get();
    auto ps = std::make_shared<Params>(1);
    init_scoring(*ps, cfg, 9, 8);
    const Matd flat = vocabulary::flatten_xy(v.candidates);
    out.push_back({"scoring loss", ps, [=](Tape& t, Params& p) {
                     (void)targets;  // keeps the targets alive with the case
                     return scoring_loss(t, p, *scored, flat, cfg);
                   }});
  }
  return out;
}

}  // namespace gradcheck
