#pragma once

#include <cmath>
#include <string>

#include "moca/tensor.hpp"

namespace moca {

template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  return a * b;
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar peak = x.row(r).maxCoeff();
    Scalar total = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      y(r, c) = std::exp(x(r, c) - peak);
      total += y(r, c);
    }
    y.row(r) /= total;
  }
  return y;
}

/// softmax(q kᵀ / sqrt(d)) v
template <typename Scalar>
Matrix<Scalar> scaled_dot_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                    const Matrix<Scalar>& v) {
  if (q.cols() != k.cols()) throw ShapeError("attention: query/key widths differ");
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value counts differ");
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  const Matrix<Scalar> scores = (q * k.transpose()) * scale;
  return softmax_rows(scores) * v;
}

}  // namespace moca
