#include "moca/harness/synthetic.hpp"

namespace moca::harness {

namespace {

// Frozen latent stand-in for the VAE encoder: identity vector -> [S, D_lat].
template <typename Scalar>
Matrix<Scalar> identity_latent(const ModelConfig& cfg, const Matrix<Scalar>& identity) {
  Rng rng(splitmix64(cfg.seed ^ 0x1A7E47ULL), 0);
  const Matrix<Scalar> map = rng.normal_matrix<Scalar>(cfg.identity_dim, cfg.spatial() * cfg.latent_channels,
                                                      1.0 / std::sqrt(static_cast<double>(cfg.identity_dim)));
  const Matrix<Scalar> flat = identity * map;
  return Eigen::Map<const Matrix<Scalar>>(flat.data(), cfg.spatial(), cfg.latent_channels);
}

// Axis-aligned rectangle covering 10-40% of the frame that contains the
// sampling pixel of one latent cell, so the face always reaches the latent mask.
template <typename Scalar>
void draw_face_box(Tensor<Scalar>& mask, std::size_t frame, const ModelConfig& cfg, Rng& rng) {
  const auto H = static_cast<Eigen::Index>(mask.shape()[1]);
  const auto W = static_cast<Eigen::Index>(mask.shape()[2]);
  const double area = static_cast<double>(H * W);
  Eigen::Index h = 0, w = 0;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 10000) throw ConfigError("cannot place a face box of the required coverage");
    h = 1 + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(H)));
    w = 1 + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(W)));
    const double frac = static_cast<double>(h * w) / area;
    if (frac >= kMinMaskCoverage && frac <= kMaxMaskCoverage) break;
  }
  const auto ci = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(cfg.grid_h)));
  const auto cj = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(cfg.grid_w)));
  const Eigen::Index py = ci * H / cfg.grid_h;
  const Eigen::Index px = cj * W / cfg.grid_w;
  const Eigen::Index y_lo = std::max<Eigen::Index>(0, py - h + 1), y_hi = std::min(py, H - h);
  const Eigen::Index x_lo = std::max<Eigen::Index>(0, px - w + 1), x_hi = std::min(px, W - w);
  const Eigen::Index y0 = y_lo + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(y_hi - y_lo + 1)));
  const Eigen::Index x0 = x_lo + static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(x_hi - x_lo + 1)));
  for (Eigen::Index y = y0; y < y0 + h; ++y) {
    for (Eigen::Index x = x0; x < x0 + w; ++x) {
      mask.at({frame, static_cast<std::size_t>(y), static_cast<std::size_t>(x)}) = Scalar(1);
    }
  }
}

}  // namespace

template <typename Scalar>
std::vector<SyntheticSample<Scalar>> gen_synthetic_batch(const ModelConfig& cfg, std::size_t batch, Rng rng) {
  cfg.validate();
  const Eigen::Index S = cfg.spatial();
  const auto F = static_cast<std::size_t>(cfg.frames);
  std::vector<SyntheticSample<Scalar>> out;
  for (std::size_t b = 0; b < batch; ++b) {
    Rng r = rng.split(b);
    SyntheticSample<Scalar> s;
    auto& id = s.identity;
    id.identity_id = b;
    id.identity = r.split("identity").normal_matrix<Scalar>(1, cfg.identity_dim);
    id.base_latent = identity_latent(cfg, id.identity);
    Rng pool_rng = r.split("pool");
    for (std::size_t k = 0; k < kFacePoolSize; ++k) {
      // Perturbed crops stand in for varied angles and expressions.
      id.pool.add(id.base_latent + pool_rng.normal_matrix<Scalar>(S, cfg.latent_channels, 0.1),
                  static_cast<std::size_t>(pool_rng.uniform_index(F)));
    }
    Rng ref_rng = r.split("reference");
    s.reference = sample_reference(id.pool, ref_rng);

    Rng video = r.split("video");
    s.z0 = id.base_latent.replicate(cfg.frames, 1) + video.normal_matrix<Scalar>(cfg.frames * S, cfg.latent_channels, 0.5);
    s.text = r.split("text").normal_matrix<Scalar>(cfg.text_tokens, cfg.width);

    s.pixel_mask = Tensor<Scalar>({F, static_cast<std::size_t>(cfg.grid_h * kPixelsPerCell),
                                   static_cast<std::size_t>(cfg.grid_w * kPixelsPerCell)});
    Rng mask_rng = r.split("mask");
    for (std::size_t f = 0; f < F; ++f) draw_face_box(s.pixel_mask, f, cfg, mask_rng);
    s.latent_mask = interpolate_mask(s.pixel_mask, cfg.grid_h, cfg.grid_w);
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Scalar>
double mask_coverage(const Tensor<Scalar>& pixel_mask, std::size_t frame) {
  const std::size_t per_frame = pixel_mask.shape()[1] * pixel_mask.shape()[2];
  double on = 0;
  for (std::size_t i = 0; i < per_frame; ++i) on += static_cast<double>(pixel_mask[frame * per_frame + i]);
  return on / static_cast<double>(per_frame);
}

template <typename Scalar>
std::vector<TrainingSample<Scalar>> attach_noise(const std::vector<SyntheticSample<Scalar>>& samples,
                                                 const DiffusionSchedule& sched, Rng rng) {
  std::vector<TrainingSample<Scalar>> out;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto& s = samples[b];
    Rng r = rng.split(b);
    TrainingSample<Scalar> ts;
    ts.z0 = s.z0;
    ts.text = s.text;
    ts.identity = s.identity.identity;
    ts.reference = s.reference;
    ts.latent_mask = s.latent_mask;
    ts.t = 1 + static_cast<int>(r.uniform_index(static_cast<std::uint64_t>(sched.steps())));
    ts.eps = r.split("eps").normal_matrix<Scalar>(s.z0.rows(), s.z0.cols());
    out.push_back(std::move(ts));
  }
  return out;
}

template std::vector<SyntheticSample<float>> gen_synthetic_batch<float>(const ModelConfig&, std::size_t, Rng);
template std::vector<SyntheticSample<double>> gen_synthetic_batch<double>(const ModelConfig&, std::size_t, Rng);
template double mask_coverage<float>(const Tensor<float>&, std::size_t);
template double mask_coverage<double>(const Tensor<double>&, std::size_t);
template std::vector<TrainingSample<float>> attach_noise<float>(const std::vector<SyntheticSample<float>>&,
                                                                const DiffusionSchedule&, Rng);
template std::vector<TrainingSample<double>> attach_noise<double>(const std::vector<SyntheticSample<double>>&,
                                                                  const DiffusionSchedule&, Rng);

}  // namespace moca::harness
