#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "moca/id_embedding.hpp"
#include "moca/moca_layer.hpp"
#include "moca/params.hpp"
#include "moca/serialize.hpp"

namespace moca {

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Directory of tensor files plus manifest.json:
///   {"format": "moca-checkpoint", "dtype": "f64", "config": {...},
///    "tensors": {name: {"file": "...", "sha256": "..."}}}
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const ParamSet<Scalar>& params, const nlohmann::json& config);

/// Loads and verifies every tensor hash. Throws FormatError on any mismatch.
template <typename Scalar>
ParamSet<Scalar> load_checkpoint(const std::filesystem::path& dir, nlohmann::json* config = nullptr);

/// One MoCA layer's tensors (names relative to `prefix`) with a manifest
/// {"C": .., "pool_sizes": [..], "d_attn": ..}.
template <typename Scalar>
void save_moca_params(const std::filesystem::path& dir, const ParamSet<Scalar>& params, const std::string& prefix,
                      const MocaConfig& cfg);

template <typename Scalar>
ParamSet<Scalar> load_moca_params(const std::filesystem::path& dir, MocaConfig* cfg = nullptr);

/// Identity fixture: identity vector, reference pool entries and the
/// sidecar identity.json {"identity_id", "seed", "pool_size"}.
template <typename Scalar>
struct IdentityFixture {
  std::uint64_t identity_id = 0;
  std::uint64_t seed = 0;
  Matrix<Scalar> identity;
  FacePool<Scalar> pool;
};

template <typename Scalar>
void save_identity_fixture(const std::filesystem::path& dir, const IdentityFixture<Scalar>& fixture);

template <typename Scalar>
IdentityFixture<Scalar> load_identity_fixture(const std::filesystem::path& dir);

}  // namespace moca
