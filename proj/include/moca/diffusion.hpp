#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "moca/tape.hpp"

namespace moca {

/// Linear β schedule with cumulative products ᾱ_t, t = 1..T.
struct DiffusionSchedule {
  std::vector<double> beta;       ///< beta[t-1]
  std::vector<double> alpha_bar;  ///< alpha_bar[t-1]

  int steps() const { return static_cast<int>(beta.size()); }

  /// ᾱ_t for t in [0, T]; ᾱ_0 = 1.
  double alpha_bar_at(int t) const {
    check(t, 0);
    return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
  }

  void check(int t, int lowest = 1) const {
    if (t < lowest || t > steps()) {
      throw NumericError("timestep " + std::to_string(t) + " outside [" + std::to_string(lowest) + ", " +
                         std::to_string(steps()) + "]");
    }
  }
};

inline DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.beta.resize(static_cast<std::size_t>(steps));
  s.alpha_bar.resize(static_cast<std::size_t>(steps));
  double cumulative = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.beta[static_cast<std::size_t>(i)] = b;
    cumulative *= 1.0 - b;
    s.alpha_bar[static_cast<std::size_t>(i)] = cumulative;
  }
  return s;
}

/// z_t = sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) ε
template <typename Scalar>
Matrix<Scalar> forward_diffuse(const Matrix<Scalar>& z0, int t, const Matrix<Scalar>& eps,
                               const DiffusionSchedule& sched) {
  sched.check(t);
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) throw ShapeError("forward_diffuse: shape mismatch");
  const double ab = sched.alpha_bar_at(t);
  return z0 * static_cast<Scalar>(std::sqrt(ab)) + eps * static_cast<Scalar>(std::sqrt(1.0 - ab));
}

/// ẑ0 = (z_t - sqrt(1 - ᾱ_t) ε̂) / sqrt(ᾱ_t)
template <typename Scalar>
Matrix<Scalar> predict_z0(const Matrix<Scalar>& z_t, int t, const Matrix<Scalar>& eps_hat,
                          const DiffusionSchedule& sched) {
  sched.check(t);
  if (z_t.rows() != eps_hat.rows() || z_t.cols() != eps_hat.cols()) throw ShapeError("predict_z0: shape mismatch");
  const double ab = sched.alpha_bar_at(t);
  if (!(ab > 0.0)) throw NumericError("predict_z0: degenerate alpha_bar");
  return (z_t - eps_hat * static_cast<Scalar>(std::sqrt(1.0 - ab))) / static_cast<Scalar>(std::sqrt(ab));
}

/// Tape version; gradients flow into ε̂ only.
template <typename Scalar>
Var<Scalar> predict_z0(const Matrix<Scalar>& z_t, int t, const Var<Scalar>& eps_hat, const DiffusionSchedule& sched) {
  sched.check(t);
  if (z_t.rows() != eps_hat.rows() || z_t.cols() != eps_hat.cols()) throw ShapeError("predict_z0: shape mismatch");
  const double ab = sched.alpha_bar_at(t);
  if (!(ab > 0.0)) throw NumericError("predict_z0: degenerate alpha_bar");
  const auto root = static_cast<Scalar>(std::sqrt(ab));
  const auto noise = static_cast<Scalar>(std::sqrt(1.0 - ab));
  Tape<Scalar>& tape = eps_hat.tape();
  return ad::scale(tape.constant(z_t) - ad::scale(eps_hat, noise), Scalar(1) / root);
}

}  // namespace moca
