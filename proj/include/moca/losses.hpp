#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "moca/diffusion.hpp"
#include "moca/rng.hpp"
#include "moca/tensor.hpp"

namespace moca {

/// mean((ε̂ - ε)²)
template <typename Scalar>
Var<Scalar> diffusion_loss(const Var<Scalar>& eps_hat, const Matrix<Scalar>& eps) {
  if (eps_hat.rows() != eps.rows() || eps_hat.cols() != eps.cols()) throw ShapeError("diffusion_loss: shape mismatch");
  const auto n = static_cast<Scalar>(eps.size());
  return ad::scale(ad::sum_squares(eps_hat - eps_hat.tape().constant(eps)), Scalar(1) / n);
}

/// w(t) = cos(t/T · π/2), evaluated as sin((T - t)/T · π/2) so both endpoints are exact.
inline double cosine_weight(double t, double total) {
  if (!(total > 0.0) || t < 0.0 || t > total) {
    throw NumericError("cosine_weight: t must lie in [0, T]");
  }
  return std::sin((total - t) / total * (std::numbers::pi / 2.0));
}

/// Nearest-neighbour downsample of a binary pixel mask [F, H, W] onto the
/// latent grid; cell (i, j) reads pixel (i*H/gh, j*W/gw). Output [F*gh*gw, 1].
template <typename Scalar>
Matrix<Scalar> interpolate_mask(const Tensor<Scalar>& pixel_mask, Eigen::Index grid_h, Eigen::Index grid_w) {
  if (pixel_mask.rank() != 3) throw ShapeError("interpolate_mask: pixel mask must be [F, H, W]");
  const auto F = static_cast<Eigen::Index>(pixel_mask.shape()[0]);
  const auto H = static_cast<Eigen::Index>(pixel_mask.shape()[1]);
  const auto W = static_cast<Eigen::Index>(pixel_mask.shape()[2]);
  if (grid_h < 1 || grid_w < 1 || grid_h > H || grid_w > W) {
    throw ShapeError("interpolate_mask: latent grid does not fit the pixel mask");
  }
  const Eigen::Index S = grid_h * grid_w;
  Matrix<Scalar> m(F * S, 1);
  for (Eigen::Index f = 0; f < F; ++f) {
    for (Eigen::Index i = 0; i < grid_h; ++i) {
      for (Eigen::Index j = 0; j < grid_w; ++j) {
        const auto y = static_cast<std::size_t>(i * H / grid_h);
        const auto x = static_cast<std::size_t>(j * W / grid_w);
        const Scalar v = pixel_mask.at({static_cast<std::size_t>(f), y, x});
        m(f * S + i * grid_w + j, 0) = v > Scalar(0.5) ? Scalar(1) : Scalar(0);
      }
    }
  }
  return m;
}

/// Fixed 3x3 convolution over the per-frame latent grid (zero padding, no
/// bias). Stands in for the first convolution of a VAE decoder.
template <typename Scalar>
class FeatureProjector {
 public:
  FeatureProjector(Matrix<Scalar> kernel, Eigen::Index grid_h, Eigen::Index grid_w)
      : kernel_(std::move(kernel)), grid_h_(grid_h), grid_w_(grid_w) {
    if (kernel_.rows() % 9 != 0) throw ShapeError("FeatureProjector: kernel rows must be 9 * in_channels");
  }

  /// Seeded projector with out_channels = 2 * in_channels.
  static FeatureProjector seeded(Eigen::Index in_channels, Eigen::Index grid_h, Eigen::Index grid_w,
                                 std::uint64_t seed) {
    Rng rng(seed, 0);
    Rng r = rng.split("feature-projector");
    return FeatureProjector(
        r.normal_matrix<Scalar>(9 * in_channels, 2 * in_channels, 1.0 / std::sqrt(9.0 * static_cast<double>(in_channels))),
        grid_h, grid_w);
  }

  /// Center tap = identity; f(x) = x.
  static FeatureProjector identity(Eigen::Index channels, Eigen::Index grid_h, Eigen::Index grid_w) {
    Matrix<Scalar> k = Matrix<Scalar>::Zero(9 * channels, channels);
    k.middleRows(4 * channels, channels).setIdentity();
    return FeatureProjector(std::move(k), grid_h, grid_w);
  }

  Eigen::Index in_channels() const { return kernel_.rows() / 9; }
  Eigen::Index out_channels() const { return kernel_.cols(); }
  const Matrix<Scalar>& kernel() const { return kernel_; }

  /// [F*S, C_in] -> [F*S, 9*C_in] patches in (ky, kx, channel) order.
  Matrix<Scalar> im2col(const Matrix<Scalar>& x) const {
    const Eigen::Index S = grid_h_ * grid_w_;
    const Eigen::Index C = in_channels();
    if (x.cols() != C || x.rows() % S != 0) throw ShapeError("FeatureProjector: input does not match the grid");
    Matrix<Scalar> cols = Matrix<Scalar>::Zero(x.rows(), 9 * C);
    for (Eigen::Index f = 0; f < x.rows() / S; ++f) {
      for (Eigen::Index i = 0; i < grid_h_; ++i) {
        for (Eigen::Index j = 0; j < grid_w_; ++j) {
          for (Eigen::Index ky = 0; ky < 3; ++ky) {
            for (Eigen::Index kx = 0; kx < 3; ++kx) {
              const Eigen::Index y = i + ky - 1, xx = j + kx - 1;
              if (y < 0 || y >= grid_h_ || xx < 0 || xx >= grid_w_) continue;
              cols.block(f * S + i * grid_w_ + j, (ky * 3 + kx) * C, 1, C) = x.row(f * S + y * grid_w_ + xx);
            }
          }
        }
      }
    }
    return cols;
  }

  /// Adjoint of im2col.
  Matrix<Scalar> col2im(const Matrix<Scalar>& cols) const {
    const Eigen::Index S = grid_h_ * grid_w_;
    const Eigen::Index C = in_channels();
    Matrix<Scalar> x = Matrix<Scalar>::Zero(cols.rows(), C);
    for (Eigen::Index f = 0; f < cols.rows() / S; ++f) {
      for (Eigen::Index i = 0; i < grid_h_; ++i) {
        for (Eigen::Index j = 0; j < grid_w_; ++j) {
          for (Eigen::Index ky = 0; ky < 3; ++ky) {
            for (Eigen::Index kx = 0; kx < 3; ++kx) {
              const Eigen::Index y = i + ky - 1, xx = j + kx - 1;
              if (y < 0 || y >= grid_h_ || xx < 0 || xx >= grid_w_) continue;
              x.row(f * S + y * grid_w_ + xx) += cols.block(f * S + i * grid_w_ + j, (ky * 3 + kx) * C, 1, C);
            }
          }
        }
      }
    }
    return x;
  }

  Matrix<Scalar> apply(const Matrix<Scalar>& x) const { return im2col(x) * kernel_; }

  Var<Scalar> apply(const Var<Scalar>& x) const {
    return x.tape().record(OpKind::Conv3x3, apply(x.value()), {x},
                           [self = *this, x](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
                             t.accumulate(x, self.col2im(g * self.kernel_.transpose()));
                           });
  }

 private:
  Matrix<Scalar> kernel_;  ///< [9*C_in, C_out]
  Eigen::Index grid_h_;
  Eigen::Index grid_w_;
};

inline constexpr double kNormGuard = 1e-12;

namespace detail {

template <typename Scalar>
Matrix<Scalar> broadcast_mask(const Matrix<Scalar>& mask, Eigen::Index rows, Eigen::Index cols) {
  if (mask.cols() != 1 || mask.rows() != rows) throw ShapeError("latent mask must be [rows, 1]");
  return mask.replicate(1, cols);
}

}  // namespace detail

/// w(t) · sqrt(‖M ⊙ (f(ẑ0) - f(z̃0))‖² + 1e-12)
template <typename Scalar>
Var<Scalar> face_loss(const Var<Scalar>& z0_hat, const Matrix<Scalar>& z0_true, const Matrix<Scalar>& mask,
                      const FeatureProjector<Scalar>& projector, double weight) {
  if (z0_hat.rows() != z0_true.rows() || z0_hat.cols() != z0_true.cols()) throw ShapeError("face_loss: shape mismatch");
  Tape<Scalar>& tape = z0_hat.tape();
  const Var<Scalar> feat_hat = projector.apply(z0_hat);
  const Var<Scalar> feat_true = tape.constant(projector.apply(z0_true));
  const Var<Scalar> m = tape.constant(detail::broadcast_mask(mask, feat_hat.rows(), feat_hat.cols()));
  const Var<Scalar> norm = ad::sqrt_eps(ad::sum_squares(ad::mul(m, feat_hat - feat_true)), Scalar(kNormGuard));
  return ad::scale(norm, static_cast<Scalar>(weight));
}

/// w(t) · ‖(1 - M) ⊙ (ẑ0 - z̃0)‖²
template <typename Scalar>
Var<Scalar> back_loss(const Var<Scalar>& z0_hat, const Matrix<Scalar>& z0_true, const Matrix<Scalar>& mask,
                      double weight) {
  if (z0_hat.rows() != z0_true.rows() || z0_hat.cols() != z0_true.cols()) throw ShapeError("back_loss: shape mismatch");
  Tape<Scalar>& tape = z0_hat.tape();
  const Matrix<Scalar> keep =
      (Matrix<Scalar>::Ones(mask.rows(), 1) - mask).eval();
  const Var<Scalar> m = tape.constant(detail::broadcast_mask(keep, z0_hat.rows(), z0_hat.cols()));
  const Var<Scalar> sq = ad::sum_squares(ad::mul(m, z0_hat - tape.constant(z0_true)));
  return ad::scale(sq, static_cast<Scalar>(weight));
}

struct LossWeights {
  double alpha = 2.0;  ///< face
  double beta = 0.5;   ///< background

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights must be >= 0");
  }
};

/// α L_face + β L_back
template <typename Scalar>
Var<Scalar> perceptual_loss(const Var<Scalar>& face, const Var<Scalar>& back, const LossWeights& w) {
  w.validate();
  return ad::scale(face, static_cast<Scalar>(w.alpha)) + ad::scale(back, static_cast<Scalar>(w.beta));
}

template <typename Scalar>
Var<Scalar> total_loss(const Var<Scalar>& diffusion, const Var<Scalar>& perceptual) {
  return diffusion + perceptual;
}

}  // namespace moca
