#pragma once

#include <span>
#include <vector>

#include "moca/dit.hpp"
#include "moca/losses.hpp"

namespace moca {

/// One training example with its drawn timestep and noise.
template <typename Scalar>
struct TrainingSample {
  Matrix<Scalar> z0;          ///< clean video latent [F*S, D_lat]
  Matrix<Scalar> text;        ///< [L_txt, D]
  Matrix<Scalar> identity;    ///< [1, identity_dim]
  Matrix<Scalar> reference;   ///< f_image [S, D_lat]
  Matrix<Scalar> latent_mask; ///< [F*S, 1] binary
  Matrix<Scalar> eps;         ///< [F*S, D_lat]
  int t = 1;
};

/// Frozen pieces shared by every forward: encoder stand-ins and f(·).
template <typename Scalar>
struct FrozenModules {
  SyntheticEncoders<Scalar> encoders;
  FeatureProjector<Scalar> projector;

  static FrozenModules make(const ModelConfig& cfg) {
    return {SyntheticEncoders<Scalar>(cfg.encoders()),
            FeatureProjector<Scalar>::seeded(cfg.latent_channels, cfg.grid_h, cfg.grid_w, splitmix64(cfg.seed ^ 0xF00DULL))};
  }
};

template <typename Scalar>
struct LossTerms {
  Var<Scalar> diffusion, face, back, perceptual, total;
  std::vector<Var<Scalar>> eps_hat;  ///< per sample
  std::vector<int> t;
  std::vector<double> w;
};

/// Batch-mean of L = L_diff + α L_face + β L_back, each term per sample with its own t.
template <typename Scalar>
LossTerms<Scalar> batch_objective(const Bound<Scalar>& bound, const FrozenModules<Scalar>& frozen,
                                  const ModelConfig& cfg, const DiffusionSchedule& sched, const LossWeights& weights,
                                  std::span<const TrainingSample<Scalar>> batch, const ForwardHooks<Scalar>& hooks = {}) {
  if (batch.empty()) throw ConfigError("batch_objective: empty batch");
  Tape<Scalar>& tape = bound.tape();
  LossTerms<Scalar> out;
  std::vector<Var<Scalar>> diff, face, back;
  for (const auto& s : batch) {
    sched.check(s.t);
    const EncodedIdentity<Scalar> enc = frozen.encoders.encode(s.identity);
    const Var<Scalar> f_id = qformer_lite(tape.constant(enc.image_tokens), tape.constant(enc.face_tokens), bound, "qformer.");
    const Matrix<Scalar> z_t = forward_diffuse(s.z0, s.t, s.eps, sched);
    const Var<Scalar> eps_hat = model_forward(tape.constant(z_t), s.t, tape.constant(s.text), tape.constant(s.reference),
                                              f_id, bound, cfg, hooks);
    const double w = cosine_weight(s.t, sched.steps());
    const Var<Scalar> z0_hat = predict_z0(z_t, s.t, eps_hat, sched);
    diff.push_back(diffusion_loss(eps_hat, s.eps));
    face.push_back(face_loss(z0_hat, s.z0, s.latent_mask, frozen.projector, w));
    back.push_back(back_loss(z0_hat, s.z0, s.latent_mask, w));
    out.eps_hat.push_back(eps_hat);
    out.t.push_back(s.t);
    out.w.push_back(w);
  }
  const auto mean = [&](const std::vector<Var<Scalar>>& v) {
    Var<Scalar> acc = v.front();
    for (std::size_t i = 1; i < v.size(); ++i) acc = acc + v[i];
    return v.size() == 1 ? acc : ad::scale(acc, Scalar(1) / static_cast<Scalar>(v.size()));
  };
  out.diffusion = mean(diff);
  out.face = mean(face);
  out.back = mean(back);
  out.perceptual = perceptual_loss(out.face, out.back, weights);
  out.total = total_loss(out.diffusion, out.perceptual);
  return out;
}

}  // namespace moca
