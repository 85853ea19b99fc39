#pragma once

#include <cstdint>
#include <vector>

#include "moca/diffusion.hpp"
#include "moca/dit.hpp"
#include "moca/objective.hpp"

namespace moca::harness {

/// Pixel masks are drawn at this many pixels per latent cell along each axis.
inline constexpr Eigen::Index kPixelsPerCell = 4;
/// Reference portraits kept per identity.
inline constexpr std::size_t kFacePoolSize = 5;
inline constexpr double kMinMaskCoverage = 0.10;
inline constexpr double kMaxMaskCoverage = 0.40;

template <typename Scalar>
struct SyntheticIdentity {
  std::uint64_t identity_id = 0;
  Matrix<Scalar> identity;     ///< [1, identity_dim]
  Matrix<Scalar> base_latent;  ///< [S, D_lat]
  FacePool<Scalar> pool;
};

template <typename Scalar>
struct SyntheticSample {
  SyntheticIdentity<Scalar> identity;
  Matrix<Scalar> z0;           ///< [F*S, D_lat]
  Matrix<Scalar> text;         ///< [L_txt, D]
  Tensor<Scalar> pixel_mask;   ///< [F, H, W] in {0, 1}
  Matrix<Scalar> latent_mask;  ///< [F*S, 1]
  Matrix<Scalar> reference;    ///< sampled pool entry (f_image)
};

/// Deterministic per (config, batch size, rng stream).
template <typename Scalar>
std::vector<SyntheticSample<Scalar>> gen_synthetic_batch(const ModelConfig& cfg, std::size_t batch, Rng rng);

/// Fraction of frame `f` covered by the mask.
template <typename Scalar>
double mask_coverage(const Tensor<Scalar>& pixel_mask, std::size_t frame);

/// Draws t ~ U{1..T} and ε ~ N(0, I) for each sample.
template <typename Scalar>
std::vector<TrainingSample<Scalar>> attach_noise(const std::vector<SyntheticSample<Scalar>>& samples,
                                                 const DiffusionSchedule& sched, Rng rng);

}  // namespace moca::harness
