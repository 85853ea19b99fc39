#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "moca/dit.hpp"
#include "moca/losses.hpp"

namespace moca::harness {

enum class Precision { F32, F64 };

struct ScheduleConfig {
  int steps = 1000;  ///< T; the shipped presets use 50
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

/// Everything a suite needs; serialized verbatim into every report.
struct RunConfig {
  ModelConfig model;
  ScheduleConfig schedule;
  LossWeights loss;
  double lr = 1e-3;
  int train_steps = 300;
  int batch_size = 1;
  std::uint64_t seed = 0;
  Precision precision = Precision::F64;
  std::string out_dir = "moca-out";

  /// Throws ConfigError on the first violated constraint.
  void validate() const;

  /// N=1, D=8, F=2, S=2, C=2, pools [1,2], L_id=2, L_txt=2.
  static RunConfig micro();
  /// N=2, D=16, F=4, S=4; pools [2,4,8] minus entries larger than F.
  static RunConfig toy();
  /// Base for the expert/pool sweeps: F=16 so every swept pool size fits.
  static RunConfig ablation();
};

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);

/// Strict parse: unknown keys are rejected; absent keys keep `base` values.
RunConfig config_from_json(const nlohmann::json& j, const RunConfig& base = RunConfig::toy());
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = RunConfig::toy());

std::string precision_name(Precision p);
Precision parse_precision(const std::string& s);

}  // namespace moca::harness
