#pragma once

// Tape-based reverse-mode differentiation over row-major Eigen matrices.
//
// Every activation in the network is a 2-D matrix whose rows are tokens laid
// out as ((batch * steps) + step) * parcels + parcel and whose columns are
// features. Ops record a closure that maps the output gradient back onto the
// gradients of their inputs; Tape::backward replays them in reverse.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace wednet {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// A named trainable matrix and its accumulated gradient.
template <typename S>
struct Parameter {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

template <typename S>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<S>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Mat<S>& value() const;
  const Mat<S>& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool needs_grad() const;

 private:
  Tape<S>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename S>
class Tape {
 public:
  using Backward = std::function<void(const Mat<S>&)>;

  /// `training` enables dropout; `seed` drives every dropout mask drawn on this tape.
  explicit Tape(bool training = false, std::uint64_t seed = 0) : training_(training), rng_(seed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool training() const { return training_; }
  std::mt19937_64& rng() { return rng_; }

  Var<S> constant(Mat<S> value) { return push(std::move(value), false, nullptr); }

  /// Leaf bound to a Parameter. Gradients are added into `param.grad` on backward.
  Var<S> parameter(Parameter<S>& param) {
    if (auto it = bound_.find(&param); it != bound_.end()) return Var<S>(this, it->second);
    Parameter<S>* target = &param;
    Var<S> v = push(param.value, true, [target](const Mat<S>& g) {
      if (target->grad.size() != g.size()) target->grad.setZero(g.rows(), g.cols());
      target->grad += g;
    });
    bound_.emplace(&param, v.id());
    return v;
  }

  Var<S> push(Mat<S> value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), needs_grad, std::move(backward)});
    return Var<S>(this, nodes_.size() - 1);
  }

  const Mat<S>& value(std::size_t id) const { return nodes_[id].value; }
  const Mat<S>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Adds `contribution` into the gradient of `v` (no-op for constants).
  template <typename Expr>
  void accumulate(const Var<S>& v, const Expr& contribution) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = contribution;
    } else {
      n.grad += contribution;
    }
  }

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1.
  void backward(const Var<S>& root) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw std::invalid_argument("backward: root must be a scalar");
    }
    nodes_[root.id()].grad = Mat<S>::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool needs_grad;
    Backward backward;
  };

  bool training_;
  std::mt19937_64 rng_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<S>*, std::size_t> bound_;
};

template <typename S>
const Mat<S>& Var<S>::value() const {
  return tape_->value(id_);
}
template <typename S>
const Mat<S>& Var<S>::grad() const {
  return tape_->grad(id_);
}
template <typename S>
bool Var<S>::needs_grad() const {
  return tape_->needs_grad(id_);
}

namespace detail {

template <typename S>
bool any_grad(std::initializer_list<Var<S>> vars) {
  for (const auto& v : vars)
    if (v.needs_grad()) return true;
  return false;
}

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape<S>& tape = a.tape();
  Mat<S> out;
  out.noalias() = a.value() * b.value();
  return tape.push(std::move(out), detail::any_grad({a, b}), [a, b, &tape](const Mat<S>& g) {
    if (a.needs_grad()) tape.accumulate(a, g * b.value().transpose());
    if (b.needs_grad()) tape.accumulate(b, a.value().transpose() * g);
  });
}

/// a * b^T
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Tape<S>& tape = a.tape();
  Mat<S> out;
  out.noalias() = a.value() * b.value().transpose();
  return tape.push(std::move(out), detail::any_grad({a, b}), [a, b, &tape](const Mat<S>& g) {
    if (a.needs_grad()) tape.accumulate(a, g * b.value());
    if (b.needs_grad()) tape.accumulate(b, g.transpose() * a.value());
  });
}

/// x * W + bias, with `bias` a 1 x out row broadcast over rows.
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  if (x.cols() != weight.rows()) {
    throw std::invalid_argument("linear: input width " + std::to_string(x.cols()) + " does not match weight rows " +
                                std::to_string(weight.rows()));
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols()) throw std::invalid_argument("linear: bias shape mismatch");
  Tape<S>& tape = x.tape();
  Mat<S> out;
  out.noalias() = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return tape.push(std::move(out), detail::any_grad({x, weight, bias}), [x, weight, bias, &tape](const Mat<S>& g) {
    if (x.needs_grad()) tape.accumulate(x, g * weight.value().transpose());
    if (weight.needs_grad()) tape.accumulate(weight, x.value().transpose() * g);
    if (bias.needs_grad()) tape.accumulate(bias, g.colwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tape<S>& tape = a.tape();
  return tape.push(a.value() + b.value(), detail::any_grad({a, b}), [a, b, &tape](const Mat<S>& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "sub");
  Tape<S>& tape = a.tape();
  return tape.push(a.value() - b.value(), detail::any_grad({a, b}), [a, b, &tape](const Mat<S>& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, -g);
  });
}

template <typename S>
Var<S> hadamard(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "hadamard");
  Tape<S>& tape = a.tape();
  return tape.push(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}), [a, b, &tape](const Mat<S>& g) {
    if (a.needs_grad()) tape.accumulate(a, g.cwiseProduct(b.value()));
    if (b.needs_grad()) tape.accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tape<S>& tape = a.tape();
  return tape.push(a.value() * factor, a.needs_grad(), [a, factor, &tape](const Mat<S>& g) { tape.accumulate(a, g * factor); });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Tape<S>& tape = a.tape();
  auto y = std::make_shared<Mat<S>>(a.value().unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); }));
  return tape.push(Mat<S>(*y), a.needs_grad(), [a, y, &tape](const Mat<S>& g) {
    tape.accumulate(a, g.cwiseProduct(y->cwiseProduct(y->unaryExpr([](S v) { return S(1) - v; }))));
  });
}

/// Gaussian error linear unit, x * Phi(x), with the exact erf form.
template <typename S>
Var<S> gelu(const Var<S>& a) {
  Tape<S>& tape = a.tape();
  const S inv_sqrt2 = S(0.70710678118654752440);
  Mat<S> out = a.value().unaryExpr([inv_sqrt2](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); });
  return tape.push(std::move(out), a.needs_grad(), [a, inv_sqrt2, &tape](const Mat<S>& g) {
    const S inv_sqrt2pi = S(0.39894228040143267794);
    Mat<S> d = a.value().unaryExpr([&](S x) {
      return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(S(-0.5) * x * x);
    });
    tape.accumulate(a, g.cwiseProduct(d));
  });
}

/// Inverted dropout; identity when the tape is not in training mode or rate is 0.
template <typename S>
Var<S> dropout(const Var<S>& a, double rate) {
  Tape<S>& tape = a.tape();
  if (!tape.training() || rate <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const S inv = S(1.0 / (1.0 - rate));
  auto mask = std::make_shared<Mat<S>>(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = keep(tape.rng()) ? inv : S(0);
  return tape.push(a.value().cwiseProduct(*mask), a.needs_grad(),
                   [a, mask, &tape](const Mat<S>& g) { tape.accumulate(a, g.cwiseProduct(*mask)); });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

/// Normalizes every row to zero mean / unit variance, then applies gain and bias (1 x cols each).
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias, S eps = S(1e-5)) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  if (gain.cols() != cols || bias.cols() != cols) throw std::invalid_argument("layer_norm: width mismatch");
  Tape<S>& tape = x.tape();
  auto xhat = std::make_shared<Mat<S>>(rows, cols);
  auto inv_std = std::make_shared<std::vector<S>>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = x.value().row(r);
    const S mean = row.mean();
    const S var = (row.array() - mean).square().mean();
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    xhat->row(r) = (row.array() - mean) * is;
  }
  Mat<S> out = xhat->array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return tape.push(std::move(out), detail::any_grad({x, gain, bias}), [x, gain, bias, xhat, inv_std, &tape](const Mat<S>& g) {
    if (gain.needs_grad()) tape.accumulate(gain, (g.cwiseProduct(*xhat)).colwise().sum());
    if (bias.needs_grad()) tape.accumulate(bias, g.colwise().sum());
    if (!x.needs_grad()) return;
    const Eigen::Index n = xhat->cols();
    Mat<S> dxhat = g.array().rowwise() * gain.value().row(0).array();
    Mat<S> dx(xhat->rows(), n);
    for (Eigen::Index r = 0; r < xhat->rows(); ++r) {
      const S mean_d = dxhat.row(r).mean();
      const S mean_dx = dxhat.row(r).dot(xhat->row(r)) / S(n);
      dx.row(r) = (dxhat.row(r).array() - mean_d - xhat->row(r).array() * mean_dx) * (*inv_std)[r];
    }
    tape.accumulate(x, dx);
  });
}

template <typename S>
Mat<S> softmax_rows_value(const Mat<S>& logits) {
  Mat<S> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename S>
Var<S> softmax_rows(const Var<S>& x) {
  Tape<S>& tape = x.tape();
  auto y = std::make_shared<Mat<S>>(softmax_rows_value(x.value()));
  return tape.push(Mat<S>(*y), x.needs_grad(), [x, y, &tape](const Mat<S>& g) {
    Mat<S> gy = g.cwiseProduct(*y);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dots = gy.rowwise().sum();
    Mat<S> dx = gy - (y->array().colwise() * dots.array()).matrix();
    tape.accumulate(x, dx);
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape<S>& tape = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.cols();
    needs = needs || p.needs_grad();
  }
  Mat<S> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return tape.push(std::move(out), needs, [parts, &tape](const Mat<S>& g) {
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      if (p.needs_grad()) tape.accumulate(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

/// Rows of `table` selected by `indices` (an embedding lookup).
template <typename S>
Var<S> gather_rows(const Var<S>& table, std::shared_ptr<const std::vector<int>> indices) {
  Tape<S>& tape = table.tape();
  const auto& idx = *indices;
  Mat<S> out(static_cast<Eigen::Index>(idx.size()), table.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= table.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[r]) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(r)) = table.value().row(idx[r]);
  }
  return tape.push(std::move(out), table.needs_grad(), [table, indices, &tape](const Mat<S>& g) {
    Mat<S> dt = Mat<S>::Zero(table.rows(), table.cols());
    const auto& ix = *indices;
    for (std::size_t r = 0; r < ix.size(); ++r) dt.row(ix[r]) += g.row(static_cast<Eigen::Index>(r));
    tape.accumulate(table, dt);
  });
}

/// Token-major (b, t, n) rows to parcel-major (b, n) rows with the T step vectors
/// laid side by side: out[b*N + n][t*C + c] = x[(b*T + t)*N + n][c].
template <typename S>
Var<S> flatten_steps(const Var<S>& x, int batch, int steps, int parcels) {
  const Eigen::Index c = x.cols();
  if (x.rows() != static_cast<Eigen::Index>(batch) * steps * parcels) {
    throw std::invalid_argument("flatten_steps: row count does not match batch*steps*parcels");
  }
  Tape<S>& tape = x.tape();
  Mat<S> out(static_cast<Eigen::Index>(batch) * parcels, steps * c);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < steps; ++t)
      for (int n = 0; n < parcels; ++n)
        out.block(b * parcels + n, t * c, 1, c) = x.value().row((b * steps + t) * parcels + n);
  return tape.push(std::move(out), x.needs_grad(), [x, batch, steps, parcels, c, &tape](const Mat<S>& g) {
    Mat<S> dx(x.rows(), c);
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < steps; ++t)
        for (int n = 0; n < parcels; ++n)
          dx.row((b * steps + t) * parcels + n) = g.block(b * parcels + n, t * c, 1, c);
    tape.accumulate(x, dx);
  });
}

/// Mean over consecutive blocks of `group_rows` rows: (G*group_rows) x C -> G x C.
template <typename S>
Var<S> group_mean_rows(const Var<S>& x, Eigen::Index group_rows) {
  if (group_rows <= 0 || x.rows() % group_rows != 0) throw std::invalid_argument("group_mean_rows: bad group size");
  const Eigen::Index groups = x.rows() / group_rows;
  Tape<S>& tape = x.tape();
  Mat<S> out(groups, x.cols());
  for (Eigen::Index gi = 0; gi < groups; ++gi)
    out.row(gi) = x.value().middleRows(gi * group_rows, group_rows).colwise().sum() / S(group_rows);
  return tape.push(std::move(out), x.needs_grad(), [x, group_rows, groups, &tape](const Mat<S>& g) {
    Mat<S> dx(x.rows(), x.cols());
    for (Eigen::Index gi = 0; gi < groups; ++gi)
      dx.middleRows(gi * group_rows, group_rows).rowwise() = g.row(gi) / S(group_rows);
    tape.accumulate(x, dx);
  });
}

// ---------------------------------------------------------------------------
// Gradient reversal

/// Identity forward; backward multiplies the incoming gradient by -lambda.
template <typename S>
Var<S> grl(const Var<S>& x, S lambda) {
  if (!(lambda >= S(0))) throw std::invalid_argument("grl: lambda must be >= 0");
  Tape<S>& tape = x.tape();
  return tape.push(x.value(), x.needs_grad(), [x, lambda, &tape](const Mat<S>& g) { tape.accumulate(x, g * (-lambda)); });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean absolute error against a constant target; subgradient 0 at ties.
template <typename S>
Var<S> mae_loss(const Var<S>& pred, const Mat<S>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw std::invalid_argument("mae_loss: shape mismatch");
  Tape<S>& tape = pred.tape();
  const S count = S(target.size());
  Mat<S> out(1, 1);
  out(0, 0) = (pred.value() - target).cwiseAbs().sum() / count;
  auto diff_sign = std::make_shared<Mat<S>>((pred.value() - target).unaryExpr([](S d) {
    return d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
  }));
  return tape.push(std::move(out), pred.needs_grad(),
                   [pred, diff_sign, count, &tape](const Mat<S>& g) { tape.accumulate(pred, *diff_sign * (g(0, 0) / count)); });
}

/// Mean cross-entropy of `logits` (B x C) against integer class labels.
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw std::invalid_argument("cross_entropy: label count mismatch");
  for (int l : labels)
    if (l < 0 || l >= logits.cols()) throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " out of range");
  Tape<S>& tape = logits.tape();
  auto probs = std::make_shared<Mat<S>>(softmax_rows_value(logits.value()));
  const S batch = S(labels.size());
  S total = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto row = logits.value().row(static_cast<Eigen::Index>(r));
    const S m = row.maxCoeff();
    const S lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(labels[r]);
  }
  Mat<S> out(1, 1);
  out(0, 0) = total / batch;
  return tape.push(std::move(out), logits.needs_grad(), [logits, probs, labels, batch, &tape](const Mat<S>& g) {
    Mat<S> d = *probs;
    for (std::size_t r = 0; r < labels.size(); ++r) d(static_cast<Eigen::Index>(r), labels[r]) -= S(1);
    tape.accumulate(logits, d * (g(0, 0) / batch));
  });
}

}  // namespace ad
}  // namespace wednet
