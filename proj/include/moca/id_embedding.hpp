#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moca/params.hpp"
#include "moca/rng.hpp"

namespace moca {

/// Reference-face latents ([S, D_lat] each) collected for one identity.
template <typename Scalar>
struct FacePool {
  std::vector<Matrix<Scalar>> entries;
  std::vector<std::size_t> source_frames;  ///< frame each crop came from

  void add(Matrix<Scalar> latent, std::size_t frame) {
    if (!entries.empty() && (latent.rows() != entries.front().rows() || latent.cols() != entries.front().cols())) {
      throw ShapeError("face pool entries must share one shape");
    }
    entries.push_back(std::move(latent));
    source_frames.push_back(frame);
  }
  std::size_t size() const { return entries.size(); }
};

/// Uniform draw of one pool entry.
template <typename Scalar>
const Matrix<Scalar>& sample_reference(const FacePool<Scalar>& pool, Rng& rng) {
  if (pool.entries.empty()) throw ConfigError("sample_reference: face pool is empty");
  return pool.entries[rng.uniform_index(pool.entries.size())];
}

/// Frozen stand-ins for the image and face encoders: bias-free seeded linear
/// maps from an identity vector to token grids.
struct EncoderConfig {
  Eigen::Index identity_dim = 8;
  Eigen::Index encoder_width = 16;
  Eigen::Index image_tokens = 4;
  Eigen::Index face_tokens = 2;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct EncodedIdentity {
  Matrix<Scalar> image_tokens;  ///< [L_img, D_enc]
  Matrix<Scalar> face_tokens;   ///< [L_face, D_enc]
};

template <typename Scalar>
class SyntheticEncoders {
 public:
  explicit SyntheticEncoders(const EncoderConfig& cfg) : cfg_(cfg) {
    Rng rng(cfg.seed, 0);
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg.identity_dim));
    image_map_ = rng.split("image-encoder").normal_matrix<Scalar>(cfg.identity_dim, cfg.image_tokens * cfg.encoder_width, s);
    face_map_ = rng.split("face-encoder").normal_matrix<Scalar>(cfg.identity_dim, cfg.face_tokens * cfg.encoder_width, s);
  }

  /// `identity` is a [1, identity_dim] row.
  EncodedIdentity<Scalar> encode(const Matrix<Scalar>& identity) const {
    if (identity.rows() != 1 || identity.cols() != cfg_.identity_dim) {
      throw ShapeError("encode: identity vector must be [1, " + std::to_string(cfg_.identity_dim) + "]");
    }
    return {tokens(identity * image_map_, cfg_.image_tokens), tokens(identity * face_map_, cfg_.face_tokens)};
  }

  const EncoderConfig& config() const { return cfg_; }

 private:
  Matrix<Scalar> tokens(const Matrix<Scalar>& flat, Eigen::Index count) const {
    return Eigen::Map<const Matrix<Scalar>>(flat.data(), count, cfg_.encoder_width);
  }

  EncoderConfig cfg_;
  Matrix<Scalar> image_map_;
  Matrix<Scalar> face_map_;
};

template <typename Scalar>
EncodedIdentity<Scalar> synth_encoders(const Matrix<Scalar>& identity, const EncoderConfig& cfg) {
  return SyntheticEncoders<Scalar>(cfg).encode(identity);
}

/// Q-Former-lite: learned queries cross-attend to the encoder tokens through a
/// single attention block followed by an output projection.
struct QFormerConfig {
  Eigen::Index id_tokens = 8;   ///< L_id
  Eigen::Index id_width = 16;   ///< D_id
  Eigen::Index encoder_width = 16;
};

template <typename Scalar>
void init_qformer(ParamSet<Scalar>& params, const std::string& prefix, const QFormerConfig& cfg, Rng rng) {
  if (cfg.id_tokens < 1) throw ConfigError("Q-Former needs at least one query");
  const auto fan = [](Eigen::Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  params.add(prefix + "queries", rng.split("queries").normal_matrix<Scalar>(cfg.id_tokens, cfg.id_width, 1.0));
  params.add(prefix + "wq", rng.split("wq").normal_matrix<Scalar>(cfg.id_width, cfg.id_width, fan(cfg.id_width)));
  params.add(prefix + "wk", rng.split("wk").normal_matrix<Scalar>(cfg.encoder_width, cfg.id_width, fan(cfg.encoder_width)));
  params.add(prefix + "wv", rng.split("wv").normal_matrix<Scalar>(cfg.encoder_width, cfg.id_width, fan(cfg.encoder_width)));
  params.add(prefix + "wo", rng.split("wo").normal_matrix<Scalar>(cfg.id_width, cfg.id_width, fan(cfg.id_width)));
}

/// f_id = Attention(queries W_q, X W_k, X W_v) W_o with X = [image_tokens; face_tokens].
template <typename Scalar>
Var<Scalar> qformer_lite(const Var<Scalar>& image_tokens, const Var<Scalar>& face_tokens, const Bound<Scalar>& bound,
                         const std::string& prefix) {
  const Var<Scalar> wk = bound[prefix + "wk"];
  if (image_tokens.cols() != wk.rows() || face_tokens.cols() != wk.rows()) {
    throw ShapeError("qformer_lite: encoder token width does not match the key projection");
  }
  using namespace ad;
  const Var<Scalar> tokens = concat_rows<Scalar>({image_tokens, face_tokens});
  const Var<Scalar> q = matmul(bound[prefix + "queries"], bound[prefix + "wq"]);
  const Var<Scalar> k = matmul(tokens, wk);
  const Var<Scalar> v = matmul(tokens, bound[prefix + "wv"]);
  return matmul(scaled_dot_attention(q, k, v), bound[prefix + "wo"]);
}

template <typename Scalar>
struct IdentityEmbedding {
  Matrix<Scalar> f_id;  ///< [L_id, D_id]
  std::uint64_t seed = 0;
};

/// Value-only evaluation of the Q-Former on plain matrices.
template <typename Scalar>
IdentityEmbedding<Scalar> embed_identity(const EncodedIdentity<Scalar>& encoded, const ParamSet<Scalar>& params,
                                         const std::string& prefix, std::uint64_t seed = 0) {
  Tape<Scalar> tape;
  Bound<Scalar> bound(tape, params);
  const auto f = qformer_lite(tape.constant(encoded.image_tokens), tape.constant(encoded.face_tokens), bound, prefix);
  return {f.value(), seed};
}

/// Prepend the reference latent as frame 0: [F*S, D] -> [(F+1)*S, D].
template <typename Scalar>
Matrix<Scalar> concat_global(const Matrix<Scalar>& video_latent, const Matrix<Scalar>& f_image) {
  if (f_image.cols() != video_latent.cols() || f_image.rows() == 0 || video_latent.rows() % f_image.rows() != 0) {
    throw ShapeError("concat_global: reference latent [" + std::to_string(f_image.rows()) + "," +
                     std::to_string(f_image.cols()) + "] does not fit the video latent");
  }
  Matrix<Scalar> out(video_latent.rows() + f_image.rows(), video_latent.cols());
  out.topRows(f_image.rows()) = f_image;
  out.bottomRows(video_latent.rows()) = video_latent;
  return out;
}

template <typename Scalar>
Var<Scalar> concat_global(const Var<Scalar>& video_latent, const Var<Scalar>& f_image) {
  if (f_image.cols() != video_latent.cols() || f_image.rows() == 0 || video_latent.rows() % f_image.rows() != 0) {
    throw ShapeError("concat_global: reference latent does not fit the video latent");
  }
  return ad::concat_rows<Scalar>({f_image, video_latent});
}

}  // namespace moca
