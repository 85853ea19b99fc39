#pragma once

#include <cstdint>
#include <string_view>

#include "moca/tensor.hpp"

namespace moca {

/// Counter-based generator: draw k of stream s under seed n is a pure function
/// of (n, s, k), built from the SplitMix64 finalizer. Streams are split by key,
/// so independent consumers never share state and results do not depend on
/// call interleaving between streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  /// Child stream keyed by an integer or a label; does not advance this stream.
  Rng split(std::uint64_t key) const;
  Rng split(std::string_view label) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n); rejection sampling, no modulo bias.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box-Muller (one value per pair of uniforms).
  double normal();

  template <typename Scalar>
  Matrix<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Matrix<Scalar> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * normal());
    return m;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace moca
