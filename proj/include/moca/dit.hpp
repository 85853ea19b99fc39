#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>

#include "moca/id_embedding.hpp"
#include "moca/moca_layer.hpp"

namespace moca {

/// Toy DiT noise predictor with a MoCA layer in every block.
struct ModelConfig {
  Eigen::Index depth = 2;
  Eigen::Index width = 16;  ///< D; also the identity embedding width D_id
  Eigen::Index heads = 1;
  Eigen::Index frames = 4;  ///< F
  Eigen::Index grid_h = 2;  ///< latent grid; S = grid_h * grid_w
  Eigen::Index grid_w = 2;
  Eigen::Index latent_channels = 4;  ///< D_lat
  Eigen::Index text_tokens = 4;      ///< L_txt
  Eigen::Index experts = 2;          ///< C; must equal pool_sizes.size()
  std::vector<Eigen::Index> pool_sizes{2, 4};
  Eigen::Index attn_width = 16;
  Eigen::Index id_tokens = 8;  ///< L_id
  Eigen::Index identity_dim = 8;
  Eigen::Index encoder_width = 16;
  Eigen::Index image_tokens = 4;
  Eigen::Index face_tokens = 2;
  Eigen::Index mlp_ratio = 4;
  std::uint64_t seed = 0;

  Eigen::Index spatial() const { return grid_h * grid_w; }

  void validate() const {
    const Eigen::Index positive[] = {depth,      width,        heads,         frames,       grid_h,      grid_w,
                                     latent_channels, attn_width, id_tokens, identity_dim, encoder_width,
                                     image_tokens, face_tokens, mlp_ratio};
    for (Eigen::Index v : positive) {
      if (v < 1) throw ConfigError("model dimensions must be positive");
    }
    if (text_tokens < 0) throw ConfigError("text_tokens must be >= 0");
    if (width % heads != 0) throw ConfigError("width must be divisible by heads");
    if (experts != static_cast<Eigen::Index>(pool_sizes.size())) {
      throw ConfigError("experts must equal the number of pool sizes");
    }
    moca().validate();
  }

  MocaConfig moca() const { return MocaConfig{width, width, attn_width, pool_sizes}; }
  QFormerConfig qformer() const { return QFormerConfig{id_tokens, width, encoder_width}; }
  EncoderConfig encoders() const {
    return EncoderConfig{identity_dim, encoder_width, image_tokens, face_tokens, splitmix64(seed ^ 0xE5C0DE5ULL)};
  }
  /// Token layout of the visual stream inside the backbone (reference frame included).
  TokenLayout visual_layout() const { return TokenLayout{frames + 1, spatial(), width}; }
};

inline std::string block_prefix(Eigen::Index block) { return "block" + std::to_string(block) + "."; }

/// All trainable parameters: backbone, MoCA layers and the Q-Former-lite.
template <typename Scalar>
ParamSet<Scalar> init_dit(const ModelConfig& cfg) {
  cfg.validate();
  ParamSet<Scalar> p;
  Rng rng(cfg.seed, 1);
  const auto fan = [](Eigen::Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  const Eigen::Index D = cfg.width;
  const Eigen::Index hidden = cfg.mlp_ratio * D;
  const Matrix<Scalar> ones = Matrix<Scalar>::Ones(1, D);

  p.add("in_proj", rng.split("in_proj").normal_matrix<Scalar>(cfg.latent_channels, D, fan(cfg.latent_channels)));
  for (Eigen::Index b = 0; b < cfg.depth; ++b) {
    const std::string pre = block_prefix(b);
    Rng r = rng.split(pre);
    p.add(pre + "norm1", ones);
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      p.add(pre + "attn." + w, r.split(w).normal_matrix<Scalar>(D, D, fan(D)));
    }
    init_moca(p, pre + "moca.", cfg.moca(), r.split("moca"));
    p.add(pre + "norm2", ones);
    p.add(pre + "mlp.w1", r.split("w1").normal_matrix<Scalar>(D, hidden, fan(D)));
    p.add(pre + "mlp.w2", r.split("w2").normal_matrix<Scalar>(hidden, D, fan(hidden)));
  }
  p.add("final_norm", ones);
  p.add("head", rng.split("head").normal_matrix<Scalar>(D, cfg.latent_channels, fan(D)));
  init_qformer(p, "qformer.", cfg.qformer(), rng.split("qformer"));
  return p;
}

/// Sinusoidal embedding of timestep t into `width` channels: sin half then cos half.
template <typename Scalar>
Matrix<Scalar> timestep_embedding(double t, Eigen::Index width) {
  Matrix<Scalar> e = Matrix<Scalar>::Zero(1, width);
  const Eigen::Index half = width / 2;
  for (Eigen::Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e(0, i) = static_cast<Scalar>(std::sin(t * freq));
    e(0, half + i) = static_cast<Scalar>(std::cos(t * freq));
  }
  return e;
}

/// [text; z_v W_in] + t_embed on every row
template <typename Scalar>
Var<Scalar> assemble_tokens(const Var<Scalar>& z_v, const Var<Scalar>& text, const Var<Scalar>& t_embed,
                            const Var<Scalar>& in_proj) {
  if (z_v.cols() != in_proj.rows()) throw ShapeError("assemble_tokens: latent width != input projection rows");
  if (t_embed.rows() != 1 || t_embed.cols() != in_proj.cols()) throw ShapeError("assemble_tokens: t_embed width");
  const Var<Scalar> visual = ad::matmul(z_v, in_proj);
  if (text.rows() == 0) return ad::add_row(visual, t_embed);
  if (text.cols() != visual.cols()) throw ShapeError("assemble_tokens: text width != model width");
  return ad::add_row(ad::concat_rows<Scalar>({text, visual}), t_embed);
}

/// Multi-head self-attention over all rows.
template <typename Scalar>
Var<Scalar> self_attention(const Var<Scalar>& x, const Bound<Scalar>& bound, const std::string& prefix,
                           Eigen::Index heads) {
  using namespace ad;
  const Var<Scalar> q = matmul(x, bound[prefix + "wq"]);
  const Var<Scalar> k = matmul(x, bound[prefix + "wk"]);
  const Var<Scalar> v = matmul(x, bound[prefix + "wv"]);
  Var<Scalar> mixed;
  if (heads == 1) {
    mixed = scaled_dot_attention(q, k, v);
  } else {
    const Eigen::Index dh = q.cols() / heads;
    std::vector<Var<Scalar>> parts;
    for (Eigen::Index h = 0; h < heads; ++h) {
      parts.push_back(scaled_dot_attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                           slice_cols(v, h * dh, dh)));
    }
    mixed = concat_cols(parts);
  }
  return matmul(mixed, bound[prefix + "wo"]);
}

template <typename Scalar>
struct BlockTrace {
  Eigen::Index block = 0;
  const Matrix<Scalar>* before_moca = nullptr;  ///< all rows after self-attention
  const Matrix<Scalar>* after_moca = nullptr;   ///< all rows after the MoCA residual
  const Matrix<Scalar>* lambda = nullptr;
};

template <typename Scalar>
struct ForwardHooks {
  std::function<void(const BlockTrace<Scalar>&)> on_block;
  MocaOptions<Scalar> moca;
};

/// x + attn(norm(x)); visual rows += MoCA(visual rows); x + mlp(norm(x)).
/// Text rows never enter the MoCA layer.
template <typename Scalar>
Var<Scalar> dit_block(const Var<Scalar>& tokens, const Var<Scalar>& f_id, const Bound<Scalar>& bound,
                      Eigen::Index block, const ModelConfig& cfg, const ForwardHooks<Scalar>& hooks = {}) {
  using namespace ad;
  const std::string pre = block_prefix(block);
  const Var<Scalar> h = tokens + self_attention(rms_norm(tokens, bound[pre + "norm1"]), bound, pre + "attn.", cfg.heads);

  const Eigen::Index text = cfg.text_tokens;
  const TokenLayout layout = cfg.visual_layout();
  if (h.rows() != text + layout.rows()) throw ShapeError("dit_block: token count does not match the config");
  const Var<Scalar> visual = text > 0 ? slice_rows(h, text, layout.rows()) : h;

  Matrix<Scalar> lambda;
  MocaOptions<Scalar> opts = hooks.moca;
  opts.on_lambda = [&](const Matrix<Scalar>& l) {
    lambda = l;
    if (hooks.moca.on_lambda) hooks.moca.on_lambda(l);
  };
  const auto weights = MocaWeights<Scalar>::bind(bound, pre + "moca.", cfg.moca());
  const Var<Scalar> visual_out = visual + moca_forward(visual, f_id, weights, cfg.moca(), layout, opts);
  const Var<Scalar> mixed = text > 0 ? concat_rows<Scalar>({slice_rows(h, 0, text), visual_out}) : visual_out;

  if (hooks.on_block) hooks.on_block({block, &h.value(), &mixed.value(), &lambda});

  const Var<Scalar> hidden = silu(matmul(rms_norm(mixed, bound[pre + "norm2"]), bound[pre + "mlp.w1"]));
  return mixed + matmul(hidden, bound[pre + "mlp.w2"]);
}

/// ε̂(z_t, t, text, f_image, f_id): [F*S, D_lat] -> [F*S, D_lat].
template <typename Scalar>
Var<Scalar> model_forward(const Var<Scalar>& z_t, int t, const Var<Scalar>& text, const Var<Scalar>& f_image,
                          const Var<Scalar>& f_id, const Bound<Scalar>& bound, const ModelConfig& cfg,
                          const ForwardHooks<Scalar>& hooks = {}) {
  if (t < 0) throw NumericError("model_forward: negative timestep");
  const Eigen::Index S = cfg.spatial();
  if (z_t.rows() != cfg.frames * S || z_t.cols() != cfg.latent_channels) {
    throw ShapeError("model_forward: z_t must be [F*S, D_lat]");
  }
  if (text.rows() != cfg.text_tokens) throw ShapeError("model_forward: text token count");
  if (f_id.cols() != cfg.width) throw ShapeError("model_forward: identity embedding width");

  Tape<Scalar>& tape = z_t.tape();
  const Var<Scalar> z_v = concat_global(z_t, f_image);
  Var<Scalar> x = assemble_tokens(z_v, text, tape.constant(timestep_embedding<Scalar>(t, cfg.width)), bound["in_proj"]);
  for (Eigen::Index b = 0; b < cfg.depth; ++b) x = dit_block(x, f_id, bound, b, cfg, hooks);

  // Drop text rows and the reference frame.
  const Var<Scalar> video = ad::slice_rows(x, cfg.text_tokens + S, cfg.frames * S);
  return ad::matmul(ad::rms_norm(video, bound["final_norm"]), bound["head"]);
}

}  // namespace moca
