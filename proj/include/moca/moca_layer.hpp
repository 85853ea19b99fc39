#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moca/params.hpp"
#include "moca/rng.hpp"
#include "moca/temporal.hpp"

namespace moca {

/// Shape of one MoCA layer: a shared cross-attention branch on raw visual
/// tokens plus one temporal expert per pool size, mixed by a softmax router.
struct MocaConfig {
  Eigen::Index width = 16;       ///< visual token width D
  Eigen::Index id_width = 16;    ///< identity embedding width D_id
  Eigen::Index attn_width = 16;  ///< attention width d_attn
  std::vector<Eigen::Index> pool_sizes{2, 4, 8};

  Eigen::Index experts() const { return static_cast<Eigen::Index>(pool_sizes.size()); }

  void validate() const {
    if (width < 1 || id_width < 1 || attn_width < 1) throw ConfigError("MoCA widths must be positive");
    if (pool_sizes.empty()) throw ConfigError("MoCA needs at least one expert");
    for (std::size_t i = 0; i < pool_sizes.size(); ++i) {
      if (pool_sizes[i] < 1) throw ConfigError("pool sizes must be >= 1");
      if (i > 0 && pool_sizes[i] <= pool_sizes[i - 1]) {
        throw ConfigError("pool sizes must be strictly increasing");
      }
    }
  }
};

inline std::string branch_prefix(const std::string& prefix, Eigen::Index branch) {
  return prefix + "branch" + std::to_string(branch) + ".";
}

/// Registers W_q, per-branch {W_k, W_v, W_o} (branch 0 = shared) and the router.
template <typename Scalar>
void init_moca(ParamSet<Scalar>& params, const std::string& prefix, const MocaConfig& cfg, Rng rng) {
  cfg.validate();
  const auto fan = [](Eigen::Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  params.add(prefix + "wq", rng.split("wq").normal_matrix<Scalar>(cfg.width, cfg.attn_width, fan(cfg.width)));
  for (Eigen::Index b = 0; b <= cfg.experts(); ++b) {
    const std::string p = branch_prefix(prefix, b);
    Rng r = rng.split(p);
    params.add(p + "wk", r.split("wk").normal_matrix<Scalar>(cfg.id_width, cfg.attn_width, fan(cfg.id_width)));
    params.add(p + "wv", r.split("wv").normal_matrix<Scalar>(cfg.id_width, cfg.attn_width, fan(cfg.id_width)));
    params.add(p + "wo", r.split("wo").normal_matrix<Scalar>(cfg.attn_width, cfg.width, fan(cfg.attn_width)));
  }
  params.add(prefix + "router", rng.split("router").normal_matrix<Scalar>(cfg.width, cfg.experts(), fan(cfg.width)));
}

template <typename Scalar>
struct BranchWeights {
  Var<Scalar> wk, wv, wo;
};

template <typename Scalar>
struct MocaWeights {
  Var<Scalar> wq;
  std::vector<BranchWeights<Scalar>> branches;  ///< [0] shared, [1..C] experts
  Var<Scalar> router;

  static MocaWeights bind(const Bound<Scalar>& bound, const std::string& prefix, const MocaConfig& cfg) {
    MocaWeights w;
    w.wq = bound[prefix + "wq"];
    for (Eigen::Index b = 0; b <= cfg.experts(); ++b) {
      const std::string p = branch_prefix(prefix, b);
      w.branches.push_back({bound[p + "wk"], bound[p + "wv"], bound[p + "wo"]});
    }
    w.router = bound[prefix + "router"];
    return w;
  }
};

/// Attention(tokens W_q, f_id W_k, f_id W_v) W_o
template <typename Scalar>
Var<Scalar> branch_attention(const Var<Scalar>& tokens, const Var<Scalar>& f_id, const Var<Scalar>& wq,
                             const BranchWeights<Scalar>& branch) {
  if (tokens.cols() != wq.rows()) throw ShapeError("branch_attention: token width != W_q rows");
  if (f_id.cols() != branch.wk.rows() || f_id.cols() != branch.wv.rows()) {
    throw ShapeError("branch_attention: identity width != W_k/W_v rows");
  }
  using namespace ad;
  const Var<Scalar> q = matmul(tokens, wq);
  const Var<Scalar> k = matmul(f_id, branch.wk);
  const Var<Scalar> v = matmul(f_id, branch.wv);
  return matmul(scaled_dot_attention(q, k, v), branch.wo);
}

/// λ = softmax(mean_rows(tokens) W_r), shape [1, C].
template <typename Scalar>
Var<Scalar> router(const Var<Scalar>& tokens, const Var<Scalar>& w_router) {
  if (tokens.cols() != w_router.rows()) throw ShapeError("router: token width != W_r rows");
  return ad::softmax_rows(ad::matmul(ad::row_mean(tokens), w_router));
}

template <typename Scalar>
struct MocaOptions {
  /// Replaces the router output when set ([1, C]); used to test degenerate gates.
  std::optional<Matrix<Scalar>> lambda_override;
  /// Receives the router output of each call.
  std::function<void(const Matrix<Scalar>&)> on_lambda;
};

/// shared(tokens) + Σ_i λ_i · unpool_i(expert_i(pool_i(tokens)))
///
/// Terms are summed in fixed order: shared first, then experts 1..C.
template <typename Scalar>
Var<Scalar> moca_forward(const Var<Scalar>& tokens, const Var<Scalar>& f_id, const MocaWeights<Scalar>& w,
                         const MocaConfig& cfg, const TokenLayout& layout,
                         const MocaOptions<Scalar>& options = {}) {
  if (static_cast<Eigen::Index>(w.branches.size()) != cfg.experts() + 1) {
    throw ShapeError("moca_forward: weights do not match expert count");
  }
  Var<Scalar> lambda;
  if (options.lambda_override) {
    if (options.lambda_override->rows() != 1 || options.lambda_override->cols() != cfg.experts()) {
      throw ShapeError("moca_forward: lambda override must be [1, C]");
    }
    lambda = tokens.tape().constant(*options.lambda_override);
  } else {
    lambda = router(tokens, w.router);
  }
  if (options.on_lambda) options.on_lambda(lambda.value());

  Var<Scalar> out = branch_attention(tokens, f_id, w.wq, w.branches[0]);
  for (Eigen::Index i = 0; i < cfg.experts(); ++i) {
    const Eigen::Index pool = cfg.pool_sizes[static_cast<std::size_t>(i)];
    const Var<Scalar> pooled = ad::temporal_pool(tokens, layout, pool);
    const Var<Scalar> expert = branch_attention(pooled, f_id, w.wq, w.branches[static_cast<std::size_t>(i + 1)]);
    TokenLayout pooled_layout{layout.frames, layout.spatial, expert.cols()};
    const Var<Scalar> restored = ad::temporal_unpool(expert, pooled_layout, pool);
    out = out + ad::scale_by(ad::element(lambda, 0, i), restored);
  }
  return out;
}

}  // namespace moca
