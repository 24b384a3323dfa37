#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records one forward pass. Every op returns a Var handle whose value
// is fixed once recorded; backward() walks the tape in reverse and accumulates
// parameter gradients into the owning ParamSet. Grids of shape (h, w, c) are
// stored as (h*w, c) matrices with row index i*w + j, so flattening a grid
// into a token sequence is the identity.

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "navrobust/error.hpp"
#include "navrobust/random.hpp"

namespace navrobust::nn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matd = Mat<double>;

template <typename Scalar>
struct Parameter {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;
  bool trainable = true;
};

/// Named parameters with same-shaped gradient slots.
template <typename Scalar>
class ParamSet {
 public:
  explicit ParamSet(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  int add(const std::string& name, Mat<Scalar> value, bool trainable = true) {
    if (index_.count(name)) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
    const int id = static_cast<int>(params_.size());
    Mat<Scalar> grad = Mat<Scalar>::Zero(value.rows(), value.cols());
    params_.push_back({name, std::move(value), std::move(grad), trainable});
    index_[name] = id;
    return id;
  }

  /// Uniform in +-1/sqrt(fan_in), drawn from this set's seeded stream.
  int add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
    Mat<Scalar> v(rows, cols);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<Scalar>(rng_.uniform(-bound, bound));
    return add(name, std::move(v));
  }

  int add_constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, Scalar c) {
    return add(name, Mat<Scalar>::Constant(rows, cols, c));
  }

  int id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Parameter<Scalar>& operator[](int id) { return params_.at(static_cast<std::size_t>(id)); }
  const Parameter<Scalar>& operator[](int id) const { return params_.at(static_cast<std::size_t>(id)); }
  Parameter<Scalar>& operator[](const std::string& name) { return (*this)[id(name)]; }
  const Parameter<Scalar>& operator[](const std::string& name) const { return (*this)[id(name)]; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  /// Content hash over names, shapes and values.
  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a(nullptr, 0);
    for (const auto& p : params_) {
      h = fnv1a(p.name.data(), p.name.size(), h);
      const Eigen::Index shape[2] = {p.value.rows(), p.value.cols()};
      h = fnv1a(shape, sizeof(shape), h);
      h = fnv1a(p.value.data(), sizeof(Scalar) * static_cast<std::size_t>(p.value.size()), h);
    }
    return h;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Parameter<Scalar>> params_;
  std::map<std::string, int> index_;
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;

  struct Var {
    int index = -1;
  };

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  /// Leaf bound to a parameter; its gradient lands in the parameter's slot.
  Var param(ParamSet<Scalar>& ps, int id) {
    const bool trainable = ps[id].trainable;
    Var v = push(ps[id].value, trainable, nullptr);
    if (trainable) {
      Parameter<Scalar>* target = &ps[id];
      node(v).backward = [target](Tape& t, int self) { target->grad += t.nodes_[self].grad; };
    }
    return v;
  }
  Var param(ParamSet<Scalar>& ps, const std::string& name) { return param(ps, ps.id(name)); }

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.index)).value; }
  Scalar scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  // ---- linear algebra ---------------------------------------------------

  Var matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "matmul inner dimensions differ");
    Matrix out = value(a) * value(b);
    return op(std::move(out), {a, b}, [a, b](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a)) t.grad(a).noalias() += g * t.value(b).transpose();
      if (t.needs(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
    });
  }

  /// Constant sparse left factor times a variable, for gathers and pooling.
  Var sparse_matmul(std::shared_ptr<const Eigen::SparseMatrix<Scalar>> s, Var a) {
    require(s->cols() == value(a).rows(), "sparse_matmul inner dimensions differ");
    Matrix out = (*s) * value(a);
    return op(std::move(out), {a}, [s, a](Tape& t, int self) {
      if (t.needs(a)) t.grad(a).noalias() += s->transpose() * t.nodes_[self].grad;
    });
  }

  Var transpose(Var a) {
    return op(value(a).transpose(), {a}, [a](Tape& t, int self) { t.grad(a) += t.nodes_[self].grad.transpose(); });
  }

  Var add(Var a, Var b) {
    require(same_shape(a, b), "add shapes differ");
    return op(value(a) + value(b), {a, b}, [a, b](Tape& t, int self) {
      if (t.needs(a)) t.grad(a) += t.nodes_[self].grad;
      if (t.needs(b)) t.grad(b) += t.nodes_[self].grad;
    });
  }

  Var sub(Var a, Var b) {
    require(same_shape(a, b), "sub shapes differ");
    return op(value(a) - value(b), {a, b}, [a, b](Tape& t, int self) {
      if (t.needs(a)) t.grad(a) += t.nodes_[self].grad;
      if (t.needs(b)) t.grad(b) -= t.nodes_[self].grad;
    });
  }

  Var hadamard(Var a, Var b) {
    require(same_shape(a, b), "hadamard shapes differ");
    return op(value(a).cwiseProduct(value(b)), {a, b}, [a, b](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a)) t.grad(a) += g.cwiseProduct(t.value(b));
      if (t.needs(b)) t.grad(b) += g.cwiseProduct(t.value(a));
    });
  }

  Var scale(Var a, Scalar c) {
    return op(value(a) * c, {a}, [a, c](Tape& t, int self) { t.grad(a) += t.nodes_[self].grad * c; });
  }

  /// Adds a (1, n) row to every row of `a`.
  Var add_row(Var a, Var row) {
    require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "bias row shape mismatch");
    Matrix out = value(a).rowwise() + value(row).row(0);
    return op(std::move(out), {a, row}, [a, row](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a)) t.grad(a) += g;
      if (t.needs(row)) t.grad(row) += g.colwise().sum();
    });
  }

  /// x W + b for a (n, in) input, (in, out) weight and (1, out) bias.
  Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

  // ---- elementwise nonlinearities --------------------------------------

  Var relu(Var a) {
    relu_inputs_.push_back(a.index);
    Matrix out = value(a).cwiseMax(Scalar(0));
    return op(std::move(out), {a}, [a](Tape& t, int self) {
      const Matrix& x = t.value(a);
      t.grad(a) += (x.array() > Scalar(0)).select(t.nodes_[self].grad.array(), Scalar(0)).matrix();
    });
  }

  Var tanh(Var a) {
    Matrix out = value(a).array().tanh().matrix();
    return op(std::move(out), {a}, [a](Tape& t, int self) {
      const Matrix& y = t.nodes_[self].value;
      t.grad(a) += t.nodes_[self].grad.cwiseProduct((Scalar(1) - y.array().square()).matrix());
    });
  }

  Var sigmoid(Var a) {
    Matrix out = value(a).unaryExpr([](Scalar x) { return sigmoid_value(x); });
    return op(std::move(out), {a}, [a](Tape& t, int self) {
      const Matrix& y = t.nodes_[self].value;
      t.grad(a) += t.nodes_[self].grad.cwiseProduct((y.array() * (Scalar(1) - y.array())).matrix());
    });
  }

  /// Row-wise normalization with (1, n) gain and shift rows.
  Var layer_norm(Var x, Var gamma, Var beta, Scalar eps = Scalar(1e-5)) {
    const Matrix& in = value(x);
    const Eigen::Index n = in.cols();
    require(value(gamma).rows() == 1 && value(gamma).cols() == n && same_shape(gamma, beta),
            "layer_norm gain/shift shape mismatch");
    auto xhat = std::make_shared<Matrix>(in.rows(), n);
    auto inv_std = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(in.rows());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      const Scalar mu = in.row(r).mean();
      const Scalar var = (in.row(r).array() - mu).square().mean();
      (*inv_std)[r] = Scalar(1) / std::sqrt(var + eps);
      xhat->row(r) = (in.row(r).array() - mu) * (*inv_std)[r];
    }
    Matrix out = (xhat->array().rowwise() * value(gamma).row(0).array()).matrix();
    out.rowwise() += value(beta).row(0);
    return op(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, n](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(gamma)) t.grad(gamma) += g.cwiseProduct(*xhat).colwise().sum();
      if (t.needs(beta)) t.grad(beta) += g.colwise().sum();
      if (!t.needs(x)) return;
      const Matrix dxhat = (g.array().rowwise() * t.value(gamma).row(0).array()).matrix();
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const Scalar m1 = dxhat.row(r).mean();
        const Scalar m2 = dxhat.row(r).cwiseProduct(xhat->row(r)).sum() / static_cast<Scalar>(n);
        t.grad(x).row(r) += ((dxhat.row(r).array() - m1 - xhat->row(r).array() * m2) * (*inv_std)[r]).matrix();
      }
    });
  }

  // ---- attention and spatial ops ---------------------------------------

  /// softmax(Q K^T / sqrt(d)) V with Q (n_q, d), K and V (n_kv, d_k), (n_kv, d_v).
  Var softmax_attention(Var q, Var k, Var v) {
    const Matrix& Q = value(q);
    const Matrix& K = value(k);
    const Matrix& V = value(v);
    if (Q.cols() != K.cols() || K.rows() != V.rows() || K.rows() == 0)
      throw Error(ErrorCode::kDimMismatch, "attention operand shapes are incompatible");
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(Q.cols()));
    auto attn = std::make_shared<Matrix>(Q * K.transpose() * scale);
    for (Eigen::Index r = 0; r < attn->rows(); ++r) {
      const Scalar m = attn->row(r).maxCoeff();
      attn->row(r) = (attn->row(r).array() - m).exp().matrix();
      attn->row(r) /= attn->row(r).sum();
    }
    Matrix out = (*attn) * V;
    return op(std::move(out), {q, k, v}, [q, k, v, attn, scale](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      const Matrix& A = *attn;
      if (t.needs(v)) t.grad(v).noalias() += A.transpose() * g;
      if (!t.needs(q) && !t.needs(k)) return;
      const Matrix dA = g * t.value(v).transpose();
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inner = dA.cwiseProduct(A).rowwise().sum();
      const Matrix dS = (A.array() * (dA.colwise() - inner).array()).matrix() * scale;
      if (t.needs(q)) t.grad(q).noalias() += dS * t.value(k);
      if (t.needs(k)) t.grad(k).noalias() += dS.transpose() * t.value(q);
    });
  }

  /// Nearest-neighbour x2 upsampling of an (h*w, c) grid to (2h*2w, c).
  Var upsample2(Var x, int h, int w) {
    const Matrix& in = value(x);
    require(in.rows() == static_cast<Eigen::Index>(h) * w, "grid rows differ from h*w");
    const int W = 2 * w;
    Matrix out(static_cast<Eigen::Index>(4) * h * w, in.cols());
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < W; ++j) out.row(i * W + j) = in.row((i / 2) * w + j / 2);
    return op(std::move(out), {x}, [x, h, w, W](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      Matrix& gx = t.grad(x);
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < W; ++j) gx.row((i / 2) * w + j / 2) += g.row(i * W + j);
    });
  }

  /// 3x3 convolution with zero padding of one cell. The kernel is (9*c_in,
  /// c_out) with tap (di, dj) in rows [((di+1)*3 + dj+1)*c_in, ...). Output
  /// cell (i, j) is centred on input cell (i*stride, j*stride).
  Var conv3x3(Var x, int h, int w, Var kernel, Var bias, int stride) {
    const Matrix& in = value(x);
    const Eigen::Index c = in.cols();
    require(in.rows() == static_cast<Eigen::Index>(h) * w, "grid rows differ from h*w");
    if (value(kernel).rows() != 9 * c) throw Error(ErrorCode::kDimMismatch, "kernel rows must be 9 * channels");
    require(stride == 1 || stride == 2, "stride must be 1 or 2");
    const int ho = (h + stride - 1) / stride;
    const int wo = (w + stride - 1) / stride;
    auto cols = std::make_shared<Matrix>(Matrix::Zero(static_cast<Eigen::Index>(ho) * wo, 9 * c));
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j)
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const int si = i * stride + di, sj = j * stride + dj;
            if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
            cols->block(i * wo + j, ((di + 1) * 3 + dj + 1) * c, 1, c) = in.row(si * w + sj);
          }
    Matrix out = (*cols) * value(kernel);
    out.rowwise() += value(bias).row(0);
    return op(std::move(out), {x, kernel, bias}, [x, kernel, bias, cols, h, w, ho, wo, c, stride](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(kernel)) t.grad(kernel).noalias() += cols->transpose() * g;
      if (t.needs(bias)) t.grad(bias) += g.colwise().sum();
      if (!t.needs(x)) return;
      const Matrix dcols = g * t.value(kernel).transpose();
      Matrix& gx = t.grad(x);
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int si = i * stride + di, sj = j * stride + dj;
              if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
              gx.row(si * w + sj) += dcols.block(i * wo + j, ((di + 1) * 3 + dj + 1) * c, 1, c);
            }
    });
  }

  // ---- shape ops --------------------------------------------------------

  Var concat_cols(Var a, Var b) {
    require(value(a).rows() == value(b).rows(), "concat_cols row counts differ");
    const Eigen::Index ca = value(a).cols();
    Matrix out(value(a).rows(), ca + value(b).cols());
    out << value(a), value(b);
    return op(std::move(out), {a, b}, [a, b, ca](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a)) t.grad(a) += g.leftCols(ca);
      if (t.needs(b)) t.grad(b) += g.rightCols(g.cols() - ca);
    });
  }

  Var concat_rows(Var a, Var b) {
    require(value(a).cols() == value(b).cols(), "concat_rows column counts differ");
    const Eigen::Index ra = value(a).rows();
    Matrix out(ra + value(b).rows(), value(a).cols());
    out << value(a), value(b);
    return op(std::move(out), {a, b}, [a, b, ra](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.needs(a)) t.grad(a) += g.topRows(ra);
      if (t.needs(b)) t.grad(b) += g.bottomRows(g.rows() - ra);
    });
  }

  Var rows(Var a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= value(a).rows(), "row slice out of range");
    return op(value(a).middleRows(start, count), {a}, [a, start, count](Tape& t, int self) {
      t.grad(a).middleRows(start, count) += t.nodes_[self].grad;
    });
  }

  /// Reinterprets the row-major data with a new shape.
  Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    require(rows * cols == value(a).size(), "reshape changes the element count");
    Matrix out = Eigen::Map<const Matrix>(value(a).data(), rows, cols);
    return op(std::move(out), {a}, [a](Tape& t, int self) {
      const Matrix& g = t.nodes_[self].grad;
      Matrix& ga = t.grad(a);
      Eigen::Map<Matrix>(ga.data(), g.rows(), g.cols()) += g;
    });
  }

  /// Repeats a (1, n) row `count` times.
  Var tile_rows(Var row, Eigen::Index count) {
    require(value(row).rows() == 1, "tile_rows needs a single row");
    Matrix out = value(row).replicate(count, 1);
    return op(std::move(out), {row}, [row](Tape& t, int self) { t.grad(row) += t.nodes_[self].grad.colwise().sum(); });
  }

  Var mean_rows(Var a) {
    const auto n = static_cast<Scalar>(value(a).rows());
    return op(value(a).colwise().mean(), {a}, [a, n](Tape& t, int self) {
      t.grad(a).rowwise() += t.nodes_[self].grad.row(0) / n;
    });
  }

  // ---- reductions and losses -------------------------------------------

  Var sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).sum();
    return op(std::move(out), {a}, [a](Tape& t, int self) { t.grad(a).array() += t.nodes_[self].grad(0, 0); });
  }

  Var mean(Var a) { return scale(sum(a), Scalar(1) / static_cast<Scalar>(value(a).size())); }

  /// Mean squared error against a constant target.
  Var mse(Var a, const Matrix& target) {
    require(value(a).rows() == target.rows() && value(a).cols() == target.cols(), "mse target shape mismatch");
    auto diff = std::make_shared<Matrix>(value(a) - target);
    const auto n = static_cast<Scalar>(diff->size());
    Matrix out(1, 1);
    out(0, 0) = diff->squaredNorm() / n;
    return op(std::move(out), {a}, [a, diff, n](Tape& t, int self) {
      t.grad(a) += (*diff) * (Scalar(2) * t.nodes_[self].grad(0, 0) / n);
    });
  }

  /// Mean binary cross-entropy of sigmoid(logits) against targets in [0, 1].
  Var bce_with_logits(Var logits, const Matrix& targets) {
    const Matrix& x = value(logits);
    require(x.rows() == targets.rows() && x.cols() == targets.cols(), "bce target shape mismatch");
    const auto n = static_cast<Scalar>(x.size());
    Matrix out(1, 1);
    out(0, 0) = (x.array().max(Scalar(0)) - x.array() * targets.array() + (-x.array().abs()).exp().log1p()).sum() / n;
    auto tgt = std::make_shared<Matrix>(targets);
    return op(std::move(out), {logits}, [logits, tgt, n](Tape& t, int self) {
      const Matrix p = t.value(logits).unaryExpr([](Scalar v) { return sigmoid_value(v); });
      t.grad(logits) += (p - *tgt) * (t.nodes_[self].grad(0, 0) / n);
    });
  }

  /// Mean over rows of the softmax cross-entropy with integer class labels.
  Var cross_entropy(Var logits, const std::vector<int>& labels) {
    const Matrix& x = value(logits);
    require(static_cast<Eigen::Index>(labels.size()) == x.rows(), "one label per row required");
    auto prob = std::make_shared<Matrix>(x.rows(), x.cols());
    Scalar total(0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const int label = labels[static_cast<std::size_t>(r)];
      require(label >= 0 && label < x.cols(), "label out of range");
      const Scalar m = x.row(r).maxCoeff();
      prob->row(r) = (x.row(r).array() - m).exp().matrix();
      const Scalar z = prob->row(r).sum();
      prob->row(r) /= z;
      total += -(x(r, label) - m - std::log(z));
    }
    const auto n = static_cast<Scalar>(x.rows());
    Matrix out(1, 1);
    out(0, 0) = total / n;
    return op(std::move(out), {logits}, [logits, prob, labels, n](Tape& t, int self) {
      Matrix g = *prob;
      for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, labels[static_cast<std::size_t>(r)]) -= Scalar(1);
      t.grad(logits) += g * (t.nodes_[self].grad(0, 0) / n);
    });
  }

  // ---- backward ---------------------------------------------------------

  /// Accumulates d(loss)/d(param) into every reachable trainable parameter.
  void backward(Var loss) {
    require(value(loss).size() == 1, "backward needs a scalar loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[static_cast<std::size_t>(loss.index)].needs_grad) return;
    grad(loss).setOnes();
    for (int i = loss.index; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Sign pattern of every relu input recorded so far, with the smallest
  /// pre-activation magnitude. Used to mask kinks in gradient checks.
  struct KinkState {
    std::vector<bool> signs;
    std::vector<Scalar> magnitudes;
  };
  KinkState kink_state() const {
    KinkState k;
    for (int idx : relu_inputs_)
      for (Eigen::Index i = 0; i < nodes_[static_cast<std::size_t>(idx)].value.size(); ++i) {
        const Scalar v = nodes_[static_cast<std::size_t>(idx)].value.data()[i];
        k.signs.push_back(v > Scalar(0));
        k.magnitudes.push_back(std::abs(v));
      }
    return k;
  }

  static Scalar sigmoid_value(Scalar x) {
    if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(Tape&, int)> backward;
  };

  static void require(bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kDimMismatch, what);
  }

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.index)]; }
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.index)].needs_grad; }
  bool same_shape(Var a, Var b) const {
    return value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols();
  }

  Matrix& grad(Var v) {
    Node& n = node(v);
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, int)> backward) {
    nodes_.push_back({std::move(value), Matrix(), needs_grad, std::move(backward)});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var op(Matrix value, std::initializer_list<Var> inputs, std::function<void(Tape&, int)> backward) {
    const bool needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](Var v) { return needs(v); });
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
  }

  std::vector<Node> nodes_;
  std::vector<int> relu_inputs_;
};

// ---------------------------------------------------------------------------
// Optimizer

template <typename Scalar>
struct AdamWConfig {
  Scalar lr = Scalar(3e-4);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  Scalar weight_decay = Scalar(0.01);
};

/// Adaptive moments with decoupled weight decay: each step first shrinks the
/// parameters by (1 - lr * weight_decay), then applies the bias-corrected
/// moment update.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(AdamWConfig<Scalar> cfg = {}) : cfg_(cfg) {}

  void step(ParamSet<Scalar>& ps) {
    if (m_.size() != ps.size()) {
      m_.clear();
      v_.clear();
      for (const auto& p : ps) {
        m_.push_back(Mat<Scalar>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Mat<Scalar>::Zero(p.value.rows(), p.value.cols()));
      }
    }
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(cfg_.beta1, static_cast<Scalar>(t_));
    const Scalar c2 = Scalar(1) - std::pow(cfg_.beta2, static_cast<Scalar>(t_));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps[static_cast<int>(i)];
      if (!p.trainable) continue;
      p.value *= Scalar(1) - cfg_.lr * cfg_.weight_decay;
      m_[i] = cfg_.beta1 * m_[i] + (Scalar(1) - cfg_.beta1) * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (Scalar(1) - cfg_.beta2) * p.grad.cwiseAbs2();
      p.value.array() -= cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
  }

  AdamWConfig<Scalar>& config() { return cfg_; }
  long steps() const { return t_; }

 private:
  AdamWConfig<Scalar> cfg_;
  std::vector<Mat<Scalar>> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient checking

template <typename Scalar>
using LossBuilder = std::function<typename Tape<Scalar>::Var(Tape<Scalar>&, ParamSet<Scalar>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int masked = 0;
};

/// Central differences on randomly sampled trainable coordinates, compared to
/// backward(). A coordinate is skipped when the perturbation moves any relu
/// input across zero or when a relu input it moves sits within 10 * step of
/// the kink. Relative error is |a - n| / max(|a| + |n|, 1e-6).
template <typename Scalar>
GradCheckResult finite_diff_check(const LossBuilder<Scalar>& build, ParamSet<Scalar>& ps, Scalar step = Scalar(1e-5),
                                  int samples = 50, std::uint64_t seed = 7) {
  Tape<Scalar> base;
  auto loss = build(base, ps);
  ps.zero_grad();
  base.backward(loss);
  const auto base_kinks = base.kink_state();

  std::vector<std::pair<int, Eigen::Index>> coords;
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[static_cast<int>(i)].trainable)
      for (Eigen::Index j = 0; j < ps[static_cast<int>(i)].value.size(); ++j) coords.emplace_back(static_cast<int>(i), j);
  Rng rng(seed);
  for (std::size_t i = coords.size(); i > 1; --i) std::swap(coords[i - 1], coords[rng.index(i)]);

  auto evaluate = [&](typename Tape<Scalar>::KinkState* kinks) {
    Tape<Scalar> t;
    auto l = build(t, ps);
    if (kinks) *kinks = t.kink_state();
    return t.scalar(l);
  };

  GradCheckResult r;
  for (const auto& [pid, j] : coords) {
    if (r.checked >= samples) break;
    Scalar& x = ps[pid].value.data()[j];
    const Scalar saved = x;
    typename Tape<Scalar>::KinkState kp, km;
    x = saved + step;
    const Scalar lp = evaluate(&kp);
    x = saved - step;
    const Scalar lm = evaluate(&km);
    x = saved;
    bool kink = kp.signs != base_kinks.signs || km.signs != base_kinks.signs;
    if (!kink && kp.signs.size() == base_kinks.signs.size()) {
      for (std::size_t u = 0; u < base_kinks.magnitudes.size() && !kink; ++u) {
        const bool moved = std::abs(kp.magnitudes[u] - km.magnitudes[u]) > Scalar(0);
        kink = moved && base_kinks.magnitudes[u] <= Scalar(10) * step;
      }
    }
    if (kink) {
      ++r.masked;
      continue;
    }
    const double numeric = static_cast<double>((lp - lm) / (Scalar(2) * step));
    const double analytic = static_cast<double>(ps[pid].grad.data()[j]);
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    r.max_rel_error = std::max(r.max_rel_error, rel);
    ++r.checked;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

/// JSON checkpoint: name -> shape -> values; doubles round-trip exactly.
void save_checkpoint(const ParamSet<double>& ps, const std::filesystem::path& path);
ParamSet<double> load_checkpoint(const std::filesystem::path& path);

}  // namespace navrobust::nn
