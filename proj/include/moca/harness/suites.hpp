#pragma once

#include <filesystem>
#include <optional>

#include "moca/harness/config.hpp"
#include "moca/harness/report.hpp"
#include "moca/tape.hpp"

namespace moca::harness {

/// Finite-difference step and pass threshold of the gradient suite.
inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-3;
/// Overfit pass condition: final L <= ratio * initial L.
inline constexpr double kOverfitDescentRatio = 0.5;
inline constexpr int kOverfitMinSteps = 50;

struct GradcheckOptions {
  /// Mutation canary: negate the backward rule of this op on the analytic pass.
  std::optional<OpKind> sign_flip;
};

/// Tape gradients vs central differences for every parameter of the full
/// objective, plus component checks (softmax, MoCA layer, Q-Former). 64-bit only.
Report run_gradcheck(const RunConfig& cfg, const GradcheckOptions& options = {});

/// Every algebraic invariant of the numerics, identity, MoCA, backbone, loss
/// and data modules. 64-bit only.
Report run_invariants(const RunConfig& cfg);

/// Trains on one fixed batch and checks descent (or constancy when lr == 0).
/// Writes one JSON line per step to `log_path` when non-empty.
Report run_overfit(const RunConfig& cfg, const std::filesystem::path& log_path = {});

enum class AblationAxis { Experts, Pools };

/// C in {1,2,3,4} with pools [2,4,8,16][:C], or pools in
/// {[2,4,8],[2,4,16],[2,8,16],[4,8,16]}. Cells with a pool size above F are skipped.
Report run_ablation(const RunConfig& cfg, AblationAxis axis);

/// Writes the default fixtures, a checkpoint and one MoCA layer under `dir`,
/// reloads each and checks bit equality.
Report run_dump(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace moca::harness
