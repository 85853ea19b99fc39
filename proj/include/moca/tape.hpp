#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "moca/ops.hpp"
#include "moca/tensor.hpp"

namespace moca {

/// Kind tag of a recorded operation. Used for diagnostics and for the
/// backward-rule fault injection that the gradient-check canary relies on.
enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  ScaleBy,
  MatMul,
  Transpose,
  Softmax,
  RowMean,
  AddRow,
  ConcatRows,
  SliceRows,
  ConcatCols,
  SliceCols,
  Element,
  SumSquares,
  Sqrt,
  Silu,
  RmsNorm,
  TemporalPool,
  TemporalUnpool,
  Conv3x3,
};

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;

  const Matrix<Scalar>& value() const { return tape_->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }
  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape<Scalar>;
  Var(Tape<Scalar>* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape<Scalar>* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Eager reverse-mode tape (Wengert list).
///
/// Every op computes its value immediately and records a closure mapping the
/// output gradient onto its inputs. backward() walks the list once in reverse
/// record order, so replaying the same forward yields bit-identical gradients.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  /// (tape, gradient of the output, value of the output)
  using BackwardFn = std::function<void(Tape&, const Mat&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf; receives a gradient.
  Var<Scalar> variable(Mat value) { return push(OpKind::Leaf, std::move(value), true, {}); }

  /// Leaf that never receives a gradient.
  Var<Scalar> constant(Mat value) { return push(OpKind::Leaf, std::move(value), false, {}); }

  /// Record an op whose output requires a gradient iff any input does.
  Var<Scalar> record(OpKind kind, Mat value, std::initializer_list<Var<Scalar>> inputs,
                     BackwardFn backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v);
    return push(kind, std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  Var<Scalar> record(OpKind kind, Mat value, const std::vector<Var<Scalar>>& inputs,
                     BackwardFn backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v);
    return push(kind, std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Mat& value(const Var<Scalar>& v) const { return nodes_.at(v.index_).value; }
  bool requires_grad(const Var<Scalar>& v) const { return nodes_.at(v.index_).requires_grad; }

  /// Add `g` into the gradient slot of `v` (no-op for constants).
  void accumulate(const Var<Scalar>& v, const Mat& g) {
    Node& n = nodes_.at(v.index_);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seed d(root)/d(root) = 1 and propagate. `root` must be 1x1.
  void backward(const Var<Scalar>& root) {
    if (root.tape_ != this) throw std::logic_error("backward: variable belongs to another tape");
    if (backward_done_) throw std::logic_error("backward: tape already consumed");
    const Node& r = nodes_.at(root.index_);
    if (r.value.rows() != 1 || r.value.cols() != 1) {
      throw ShapeError("backward: root must be a scalar");
    }
    backward_done_ = true;
    accumulate(root, Mat::Ones(1, 1));
    for (std::size_t i = root.index_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      if (flipped_ && *flipped_ == n.kind) {
        n.backward(*this, -n.grad, n.value);
      } else {
        n.backward(*this, n.grad, n.value);
      }
    }
  }

  /// Gradient of the last backward() root with respect to `v`; zeros if unreached.
  Mat grad(const Var<Scalar>& v) const {
    const Node& n = nodes_.at(v.index_);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Negate the upstream gradient of every op of `kind` during backward().
  /// Only meant for mutation tests of the gradient checker.
  void inject_sign_flip(OpKind kind) { flipped_ = kind; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    Mat value;
    bool requires_grad;
    BackwardFn backward;
    Mat grad;
  };

  Var<Scalar> push(OpKind kind, Mat value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{kind, std::move(value), requires_grad, std::move(backward), Mat()});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::optional<OpKind> flipped_;
  bool backward_done_ = false;
};

namespace ad {

namespace detail {

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes [" + std::to_string(a.rows()) + "," +
                     std::to_string(a.cols()) + "] and [" + std::to_string(b.rows()) + "," +
                     std::to_string(b.cols()) + "] differ");
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return a.tape().record(OpKind::Add, a.value() + b.value(), {a, b},
                         [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           t.accumulate(a, g);
                           t.accumulate(b, g);
                         });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape().record(OpKind::Sub, a.value() - b.value(), {a, b},
                         [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           t.accumulate(a, g);
                           t.accumulate(b, -g);
                         });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  return a.tape().record(OpKind::Mul, a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           t.accumulate(a, g.cwiseProduct(b.value()));
                           t.accumulate(b, g.cwiseProduct(a.value()));
                         });
}

/// Multiply by a constant.
template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  return a.tape().record(OpKind::Scale, a.value() * s, {a},
                         [a, s](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           t.accumulate(a, g * s);
                         });
}

/// Multiply `a` by the 1x1 variable `s`.
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& s, const Var<Scalar>& a) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("scale_by: factor must be 1x1");
  const Scalar k = s.value()(0, 0);
  return a.tape().record(OpKind::ScaleBy, a.value() * k, {s, a},
                         [s, a, k](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           Matrix<Scalar> gs(1, 1);
                           gs(0, 0) = g.cwiseProduct(a.value()).sum();
                           t.accumulate(s, gs);
                           t.accumulate(a, g * k);
                         });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  return a.tape().record(OpKind::MatMul, moca::matmul(a.value(), b.value()), {a, b},
                         [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
                           if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
                         });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  return a.tape().record(OpKind::Transpose, a.value().transpose(), {a},
                         [a](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           t.accumulate(a, g.transpose());
                         });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
  return x.tape().record(OpKind::Softmax, moca::softmax_rows(x.value()), {x},
                         [x](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>& y) {
                           Matrix<Scalar> dx = g.cwiseProduct(y);
                           for (Eigen::Index r = 0; r < y.rows(); ++r) {
                             const Scalar dot = dx.row(r).sum();
                             dx.row(r) -= dot * y.row(r);
                           }
                           t.accumulate(x, dx);
                         });
}

/// Mean over rows: [m,n] -> [1,n].
template <typename Scalar>
Var<Scalar> row_mean(const Var<Scalar>& x) {
  const auto m = static_cast<Scalar>(x.rows());
  Matrix<Scalar> mean = x.value().colwise().sum() / m;
  return x.tape().record(OpKind::RowMean, std::move(mean), {x},
                         [x, m](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           t.accumulate(x, (g / m).replicate(x.rows(), 1));
                         });
}

/// Add the [1,n] row `r` to every row of `x`.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& x, const Var<Scalar>& r) {
  if (r.rows() != 1 || r.cols() != x.cols()) throw ShapeError("add_row: row width mismatch");
  Matrix<Scalar> out = x.value();
  out.rowwise() += r.value().row(0);
  return x.tape().record(OpKind::AddRow, std::move(out), {x, r},
                         [x, r](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           t.accumulate(x, g);
                           t.accumulate(r, g.colwise().sum());
                         });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().tape().record(
      OpKind::ConcatRows, std::move(out), parts,
      [parts](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
        Eigen::Index pos = 0;
        for (const auto& p : parts) {
          t.accumulate(p, g.middleRows(pos, p.rows()));
          pos += p.rows();
        }
      });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) throw ShapeError("slice_rows: out of range");
  return x.tape().record(OpKind::SliceRows, x.value().middleRows(begin, count), {x},
                         [x, begin, count](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           Matrix<Scalar> full = Matrix<Scalar>::Zero(x.rows(), x.cols());
                           full.middleRows(begin, count) = g;
                           t.accumulate(x, full);
                         });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape().record(
      OpKind::ConcatCols, std::move(out), parts,
      [parts](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
        Eigen::Index pos = 0;
        for (const auto& p : parts) {
          t.accumulate(p, g.middleCols(pos, p.cols()));
          pos += p.cols();
        }
      });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) throw ShapeError("slice_cols: out of range");
  return x.tape().record(OpKind::SliceCols, x.value().middleCols(begin, count), {x},
                         [x, begin, count](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           Matrix<Scalar> full = Matrix<Scalar>::Zero(x.rows(), x.cols());
                           full.middleCols(begin, count) = g;
                           t.accumulate(x, full);
                         });
}

/// Single entry as a 1x1 variable.
template <typename Scalar>
Var<Scalar> element(const Var<Scalar>& x, Eigen::Index r, Eigen::Index c) {
  if (r < 0 || c < 0 || r >= x.rows() || c >= x.cols()) throw ShapeError("element: out of range");
  Matrix<Scalar> v(1, 1);
  v(0, 0) = x.value()(r, c);
  return x.tape().record(OpKind::Element, std::move(v), {x},
                         [x, r, c](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           Matrix<Scalar> full = Matrix<Scalar>::Zero(x.rows(), x.cols());
                           full(r, c) = g(0, 0);
                           t.accumulate(x, full);
                         });
}

/// Σ x² as a 1x1 variable.
template <typename Scalar>
Var<Scalar> sum_squares(const Var<Scalar>& x) {
  Matrix<Scalar> v(1, 1);
  v(0, 0) = x.value().squaredNorm();
  return x.tape().record(OpKind::SumSquares, std::move(v), {x},
                         [x](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           t.accumulate(x, x.value() * (Scalar(2) * g(0, 0)));
                         });
}

/// Elementwise sqrt(x + eps).
template <typename Scalar>
Var<Scalar> sqrt_eps(const Var<Scalar>& x, Scalar eps) {
  Matrix<Scalar> y = (x.value().array() + eps).sqrt().matrix();
  return x.tape().record(OpKind::Sqrt, std::move(y), {x},
                         [x](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>& y) {
                           t.accumulate(x, (g.array() / (Scalar(2) * y.array())).matrix());
                         });
}

/// x * sigmoid(x)
template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& x) {
  const Matrix<Scalar> sig = (Scalar(1) / (Scalar(1) + (-x.value().array()).exp())).matrix();
  Matrix<Scalar> y = x.value().cwiseProduct(sig);
  return x.tape().record(OpKind::Silu, std::move(y), {x},
                         [x, sig](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                           const auto s = sig.array();
                           const auto d = s * (Scalar(1) + x.value().array() * (Scalar(1) - s));
                           t.accumulate(x, (g.array() * d).matrix());
                         });
}

/// Row-wise RMS normalization with a learned [1,n] gain.
template <typename Scalar>
Var<Scalar> rms_norm(const Var<Scalar>& x, const Var<Scalar>& gain, Scalar eps = Scalar(1e-6)) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) throw ShapeError("rms_norm: gain width mismatch");
  const Eigen::Index n = x.cols();
  Matrix<Scalar> inv_rms(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    inv_rms(r, 0) = Scalar(1) / std::sqrt(x.value().row(r).squaredNorm() / static_cast<Scalar>(n) + eps);
  }
  Matrix<Scalar> normed = x.value();
  for (Eigen::Index r = 0; r < x.rows(); ++r) normed.row(r) *= inv_rms(r, 0);
  Matrix<Scalar> y = normed;
  y.array().rowwise() *= gain.value().row(0).array();
  return x.tape().record(
      OpKind::RmsNorm, std::move(y), {x, gain},
      [x, gain, inv_rms, normed, n](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
        t.accumulate(gain, g.cwiseProduct(normed).colwise().sum());
        if (!x.requires_grad()) return;
        Matrix<Scalar> dn = g;
        dn.array().rowwise() *= gain.value().row(0).array();
        Matrix<Scalar> dx(dn.rows(), dn.cols());
        for (Eigen::Index r = 0; r < dn.rows(); ++r) {
          const Scalar proj = dn.row(r).dot(normed.row(r)) / static_cast<Scalar>(n);
          dx.row(r) = (dn.row(r) - proj * normed.row(r)) * inv_rms(r, 0);
        }
        t.accumulate(x, dx);
      });
}

/// softmax(q kᵀ / sqrt(d)) v recorded as its primitive ops.
template <typename Scalar>
Var<Scalar> scaled_dot_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v) {
  if (q.cols() != k.cols()) throw ShapeError("attention: query/key widths differ");
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value counts differ");
  const Scalar s = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), s)), v);
}

}  // namespace ad

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return ad::add(a, b);
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  return ad::sub(a, b);
}

}  // namespace moca
