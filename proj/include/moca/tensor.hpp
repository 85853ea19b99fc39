#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moca/errors.hpp"

namespace moca {

/// Dense row-major matrix; the working type of every numeric kernel.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// N-dimensional row-major array with an explicit shape.
///
/// Rank-2 tensors convert to and from Matrix without reordering. Higher ranks
/// (pixel masks [F,H,W]) and rank-1 vectors are carried for I/O and indexing.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), Scalar(0)) {}

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor from_matrix(const Matrix<Scalar>& m) {
    const auto rows = static_cast<std::size_t>(m.rows());
    const auto cols = static_cast<std::size_t>(m.cols());
    return Tensor({rows, cols}, std::vector<Scalar>(m.data(), m.data() + m.size()));
  }

  Matrix<Scalar> to_matrix() const {
    if (shape_.size() != 2) {
      throw ShapeError("to_matrix needs a rank-2 tensor, got " + shape_string(shape_));
    }
    Matrix<Scalar> m(static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1]));
    std::copy(data_.begin(), data_.end(), m.data());
    return m;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::span<const Scalar> data() const { return data_; }
  std::span<Scalar> data() { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  /// Flat offset of a multi-index; bounds are checked.
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) throw ShapeError("index rank mismatch");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) throw ShapeError("index out of range");
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Scalar& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  Scalar at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

template <typename Scalar>
bool all_finite(const Eigen::MatrixBase<Scalar>& m) {
  return m.allFinite();
}

/// Exact elementwise equality including shape.
template <typename Scalar>
bool bit_equal(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::equal(a.data(), a.data() + a.size(), b.data(),
                    [](Scalar x, Scalar y) { return std::memcmp(&x, &y, sizeof(Scalar)) == 0; });
}

}  // namespace moca
