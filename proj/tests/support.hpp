#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "moca/gradcheck.hpp"
#include "moca/rng.hpp"
#include "moca/tape.hpp"

namespace moca::test {

using Mat = Matrix<double>;

inline Mat randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed, 99);
  return rng.normal_matrix<double>(r, c, stddev);
}

// Oracles below enumerate every term with explicit loops and long double
// accumulators; they share no code with the library.
inline Mat softmax_oracle(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    long double denom = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) denom += std::exp(static_cast<long double>(x(r, c)));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      y(r, c) = static_cast<double>(std::exp(static_cast<long double>(x(r, c))) / denom);
    }
  }
  return y;
}

inline Mat attention_oracle(const Mat& q, const Mat& k, const Mat& v) {
  Mat out = Mat::Zero(q.rows(), v.cols());
  const long double scale = 1.0L / std::sqrt(static_cast<long double>(q.cols()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<long double> s(static_cast<std::size_t>(k.rows()));
    long double denom = 0;
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      long double dot = 0;
      for (Eigen::Index d = 0; d < q.cols(); ++d) dot += static_cast<long double>(q(i, d)) * k(j, d);
      s[static_cast<std::size_t>(j)] = std::exp(dot * scale);
      denom += s[static_cast<std::size_t>(j)];
    }
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      long double acc = 0;
      for (Eigen::Index j = 0; j < k.rows(); ++j) acc += s[static_cast<std::size_t>(j)] / denom * v(j, c);
      out(i, c) = static_cast<double>(acc);
    }
  }
  return out;
}

// Mean over each group of `p` frames; the last group may be short.
inline Mat pool_oracle(const Mat& x, Eigen::Index frames, Eigen::Index spatial, Eigen::Index p) {
  const Eigen::Index groups = (frames + p - 1) / p;
  Mat out = Mat::Zero(groups * spatial, x.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index s = 0; s < spatial; ++s) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        long double acc = 0;
        int n = 0;
        for (Eigen::Index f = g * p; f < std::min(frames, (g + 1) * p); ++f, ++n) acc += x(f * spatial + s, c);
        out(g * spatial + s, c) = static_cast<double>(acc / n);
      }
    }
  }
  return out;
}

inline Mat unpool_oracle(const Mat& pooled, Eigen::Index frames, Eigen::Index spatial, Eigen::Index p) {
  Mat out(frames * spatial, pooled.cols());
  for (Eigen::Index f = 0; f < frames; ++f)
    for (Eigen::Index s = 0; s < spatial; ++s) out.row(f * spatial + s) = pooled.row((f / p) * spatial + s);
  return out;
}

inline Mat router_oracle(const Mat& x, const Mat& wr) {
  Mat mean = Mat::Zero(1, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    long double acc = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) acc += x(r, c);
    mean(0, c) = static_cast<double>(acc / x.rows());
  }
  Mat logits = Mat::Zero(1, wr.cols());
  for (Eigen::Index j = 0; j < wr.cols(); ++j) {
    long double acc = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) acc += static_cast<long double>(mean(0, c)) * wr(c, j);
    logits(0, j) = static_cast<double>(acc);
  }
  return softmax_oracle(logits);
}

/// Max relative error of d/dx <w, f(x)> for a fixed random projection w:
/// tape vs central differences.
inline double op_grad_error(const std::function<Var<double>(const Var<double>&)>& f, const Mat& x,
                            std::uint64_t seed = 5) {
  Mat w;
  {
    Tape<double> probe;
    const Mat out = f(probe.constant(x)).value();
    w = randn(out.rows(), out.cols(), seed);
  }
  const auto project = [&](Tape<double>& t, const Var<double>& y) {
    return ad::sum_squares(ad::add(y, t.constant(w)));
  };
  Tape<double> tape;
  const auto vx = tape.variable(x);
  tape.backward(project(tape, f(vx)));
  const Mat analytic = tape.grad(vx);
  const std::function<double(const Mat&)> scalar = [&](const Mat& p) {
    Tape<double> t;
    return project(t, f(t.constant(p))).value()(0, 0);
  };
  return max_relative_error(analytic, finite_diff_grad(scalar, x, 1e-6));
}

}  // namespace moca::test
