#pragma once

#include <cmath>
#include <map>
#include <string>

#include "moca/params.hpp"

namespace moca {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  long step = 0;
  std::map<std::string, Matrix<Scalar>> m;
  std::map<std::string, Matrix<Scalar>> v;
};

/// One bias-corrected Adam update of every tensor in `params`. Gradients are
/// validated before anything is modified.
template <typename Scalar>
void optimizer_step(ParamSet<Scalar>& params, const std::map<std::string, Matrix<Scalar>>& grads,
                    AdamState<Scalar>& state, const AdamConfig& cfg) {
  for (const auto& [name, value] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ConfigError("optimizer_step: missing gradient for '" + name + "'");
    if (it->second.rows() != value.rows() || it->second.cols() != value.cols()) {
      throw ShapeError("optimizer_step: gradient shape mismatch for '" + name + "'");
    }
    if (!it->second.allFinite()) throw NumericError("optimizer_step: non-finite gradient for '" + name + "'");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  for (auto& [name, value] : params) {
    const Matrix<Scalar>& g = grads.at(name);
    auto [mit, fresh] = state.m.try_emplace(name, Matrix<Scalar>::Zero(value.rows(), value.cols()));
    auto& m = mit->second;
    auto& v = state.v.try_emplace(name, Matrix<Scalar>::Zero(value.rows(), value.cols())).first->second;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    const auto m_hat = m.array() / static_cast<Scalar>(c1);
    const auto v_hat = v.array() / static_cast<Scalar>(c2);
    value.array() -= static_cast<Scalar>(cfg.lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(cfg.eps));
  }
}

}  // namespace moca
