#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "moca/params.hpp"

namespace moca {

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every entry of x.
template <typename Scalar>
Matrix<Scalar> finite_diff_grad(const std::function<Scalar(const Matrix<Scalar>&)>& f,
                                const Matrix<Scalar>& x, Scalar h) {
  Matrix<Scalar> probe = x;
  Matrix<Scalar> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar saved = probe.data()[i];
    probe.data()[i] = saved + h;
    const Scalar up = f(probe);
    probe.data()[i] = saved - h;
    const Scalar down = f(probe);
    probe.data()[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value");
    }
    g.data()[i] = (up - down) / (Scalar(2) * h);
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i|, floor)
template <typename Scalar>
Scalar max_relative_error(const Matrix<Scalar>& analytic, const Matrix<Scalar>& numeric,
                          Scalar floor = Scalar(1e-8)) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw ShapeError("max_relative_error: shape mismatch");
  }
  Scalar worst = 0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const Scalar a = analytic.data()[i];
    const Scalar n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max(std::abs(a), floor));
  }
  return worst;
}

struct ParamGradCheck {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0;
  double max_abs_grad = 0;
  bool finite = true;
};

/// Compare tape gradients of a scalar loss against central differences for
/// every tensor in `params`. `loss` builds the objective on the given tape
/// from the bound parameters and returns the 1x1 loss variable.
template <typename Scalar>
std::vector<ParamGradCheck> check_param_gradients(
    const ParamSet<Scalar>& params,
    const std::function<Var<Scalar>(const Bound<Scalar>&)>& loss, Scalar h,
    const std::function<void(Tape<Scalar>&)>& prepare = {}) {
  std::map<std::string, Matrix<Scalar>> analytic;
  {
    Tape<Scalar> tape;
    if (prepare) prepare(tape);
    Bound<Scalar> bound(tape, params);
    tape.backward(loss(bound));
    analytic = bound.gradients();
  }

  ParamSet<Scalar> probe = params;
  std::vector<ParamGradCheck> out;
  for (const auto& [name, value] : params) {
    const std::function<Scalar(const Matrix<Scalar>&)> f = [&](const Matrix<Scalar>& x) {
      probe.at(name) = x;
      Tape<Scalar> tape;
      Bound<Scalar> bound(tape, probe);
      return loss(bound).value()(0, 0);
    };
    const Matrix<Scalar> numeric = finite_diff_grad(f, value, h);
    probe.at(name) = value;
    const Matrix<Scalar>& a = analytic.at(name);
    ParamGradCheck c;
    c.name = name;
    c.count = static_cast<std::size_t>(value.size());
    c.finite = a.allFinite() && numeric.allFinite();
    c.max_rel_error = static_cast<double>(max_relative_error(a, numeric));
    c.max_abs_grad = a.size() ? static_cast<double>(a.cwiseAbs().maxCoeff()) : 0.0;
    out.push_back(c);
  }
  return out;
}

}  // namespace moca
