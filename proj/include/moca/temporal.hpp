#pragma once

#include <string>

#include "moca/tape.hpp"

namespace moca {

/// Visual token block: row index = frame * spatial + position.
struct TokenLayout {
  Eigen::Index frames = 1;
  Eigen::Index spatial = 1;
  Eigen::Index width = 1;

  Eigen::Index rows() const { return frames * spatial; }
};

inline Eigen::Index pooled_frames(Eigen::Index frames, Eigen::Index pool) {
  return (frames + pool - 1) / pool;
}

namespace detail {

inline void check_pool_args(Eigen::Index rows, Eigen::Index cols, const TokenLayout& layout,
                            Eigen::Index pool) {
  if (pool < 1) throw ShapeError("temporal pool size must be >= 1");
  if (rows != layout.rows() || cols != layout.width) {
    throw ShapeError("token block is [" + std::to_string(rows) + "," + std::to_string(cols) +
                     "], layout expects [" + std::to_string(layout.rows()) + "," +
                     std::to_string(layout.width) + "]");
  }
}

}  // namespace detail

/// Mean over groups of `pool` consecutive frames, per spatial position. A final
/// partial group is averaged over its own size. pool == 1 returns the input.
template <typename Scalar>
Matrix<Scalar> htp_pool(const Matrix<Scalar>& tokens, const TokenLayout& layout, Eigen::Index pool) {
  detail::check_pool_args(tokens.rows(), tokens.cols(), layout, pool);
  if (pool == 1) return tokens;
  const Eigen::Index groups = pooled_frames(layout.frames, pool);
  const Eigen::Index S = layout.spatial;
  Matrix<Scalar> out(groups * S, tokens.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    const Eigen::Index first = g * pool;
    const Eigen::Index last = std::min(first + pool, layout.frames);
    // Running mean: exact when every frame in the group is equal.
    out.middleRows(g * S, S) = tokens.middleRows(first * S, S);
    for (Eigen::Index f = first + 1; f < last; ++f) {
      const auto k = static_cast<Scalar>(f - first + 1);
      out.middleRows(g * S, S) += (tokens.middleRows(f * S, S) - out.middleRows(g * S, S)) / k;
    }
  }
  return out;
}

/// Nearest-neighbour temporal repeat: frame f takes pooled group f / pool.
template <typename Scalar>
Matrix<Scalar> htp_unpool(const Matrix<Scalar>& pooled, const TokenLayout& layout, Eigen::Index pool) {
  if (pool < 1) throw ShapeError("temporal pool size must be >= 1");
  const Eigen::Index groups = pooled_frames(layout.frames, pool);
  if (pooled.rows() != groups * layout.spatial || pooled.cols() != layout.width) {
    throw ShapeError("unpool: pooled block has " + std::to_string(pooled.rows()) + " rows, expected " +
                     std::to_string(groups * layout.spatial));
  }
  if (pool == 1) return pooled;
  const Eigen::Index S = layout.spatial;
  Matrix<Scalar> out(layout.rows(), layout.width);
  for (Eigen::Index f = 0; f < layout.frames; ++f) {
    out.middleRows(f * S, S) = pooled.middleRows((f / pool) * S, S);
  }
  return out;
}

namespace ad {

template <typename Scalar>
Var<Scalar> temporal_pool(const Var<Scalar>& tokens, const TokenLayout& layout, Eigen::Index pool) {
  Matrix<Scalar> out = htp_pool(tokens.value(), layout, pool);
  return tokens.tape().record(
      OpKind::TemporalPool, std::move(out), {tokens},
      [tokens, layout, pool](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
        const Eigen::Index S = layout.spatial;
        Matrix<Scalar> dx(layout.rows(), layout.width);
        for (Eigen::Index f = 0; f < layout.frames; ++f) {
          const Eigen::Index group = f / pool;
          const Eigen::Index size = std::min((group + 1) * pool, layout.frames) - group * pool;
          dx.middleRows(f * S, S) = g.middleRows(group * S, S) / static_cast<Scalar>(size);
        }
        t.accumulate(tokens, dx);
      });
}

template <typename Scalar>
Var<Scalar> temporal_unpool(const Var<Scalar>& pooled, const TokenLayout& layout, Eigen::Index pool) {
  Matrix<Scalar> out = htp_unpool(pooled.value(), layout, pool);
  return pooled.tape().record(
      OpKind::TemporalUnpool, std::move(out), {pooled},
      [pooled, layout, pool](Tape<Scalar>& t, const Matrix<Scalar>& g, const Matrix<Scalar>&) {
        const Eigen::Index S = layout.spatial;
        Matrix<Scalar> dp = Matrix<Scalar>::Zero(pooled.rows(), pooled.cols());
        for (Eigen::Index f = 0; f < layout.frames; ++f) {
          dp.middleRows((f / pool) * S, S) += g.middleRows(f * S, S);
        }
        t.accumulate(pooled, dp);
      });
}

}  // namespace ad

}  // namespace moca
