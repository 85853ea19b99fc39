#pragma once

#include <cmath>
#include <functional>

#include "moca/diffusion.hpp"
#include "moca/rng.hpp"

namespace moca {

/// Denoiser callback: (z_t, t) -> ε̂.
template <typename Scalar>
using Denoiser = std::function<Matrix<Scalar>(const Matrix<Scalar>&, int)>;

/// Respaced timesteps t_k = round(T k / steps), k = steps..1 (descending).
inline std::vector<int> sampling_timesteps(int total, int steps) {
  if (steps < 1 || steps > total) throw ConfigError("sampling steps must lie in [1, T]");
  std::vector<int> ts;
  for (int k = steps; k >= 1; --k) {
    ts.push_back(static_cast<int>(std::lround(static_cast<double>(total) * k / steps)));
  }
  return ts;
}

/// Ancestral (DDPM posterior) sampling from `z_start` at t = T down to a z0
/// estimate. The final step returns the posterior mean, which equals
/// predict_z0 at that step.
template <typename Scalar>
Matrix<Scalar> sample_ancestral(const Denoiser<Scalar>& model, const Matrix<Scalar>& z_start,
                                const DiffusionSchedule& sched, Rng& rng, int steps) {
  const std::vector<int> ts = sampling_timesteps(sched.steps(), steps);
  Matrix<Scalar> z = z_start;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int prev = k + 1 < ts.size() ? ts[k + 1] : 0;
    const double ab = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(prev);
    const double beta = 1.0 - ab / ab_prev;

    const Matrix<Scalar> z0_hat = predict_z0(z, t, model(z, t), sched);
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    Matrix<Scalar> next = z0_hat * static_cast<Scalar>(c0) + z * static_cast<Scalar>(ct);
    if (prev > 0) {
      const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
      next += rng.normal_matrix<Scalar>(z.rows(), z.cols(), sigma);
    }
    if (!next.allFinite()) throw NumericError("sample_ancestral: non-finite latent at t=" + std::to_string(t));
    z = std::move(next);
  }
  return z;
}

}  // namespace moca
