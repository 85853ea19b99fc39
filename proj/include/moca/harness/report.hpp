#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace moca::harness {

struct Check {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Machine-readable outcome of one suite; schema in schemas/report.schema.json.
class Report {
 public:
  Report(std::string suite, nlohmann::json config) : suite_(std::move(suite)), config_(std::move(config)) {}

  /// Adds a check; names must be unique within a report.
  void add(Check check);
  /// measured <= tolerance
  void at_most(const std::string& name, double measured, double tolerance, std::string detail = {});
  /// Boolean outcome recorded as measured 1/0 against tolerance 1.
  void expect(const std::string& name, bool ok, std::string detail = {});

  bool passed() const;
  const std::vector<Check>& checks() const { return checks_; }
  const std::string& suite() const { return suite_; }
  nlohmann::json& extra() { return extra_; }
  const nlohmann::json& extra() const { return extra_; }
  void set_wall_time(double seconds) { wall_time_s_ = seconds; }

  /// SHA-256 over the config echo, the checks and the extra payload
  /// (timing fields and the output directory excluded).
  std::string content_hash() const;
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string suite_;
  nlohmann::json config_;
  std::vector<Check> checks_;
  nlohmann::json extra_ = nlohmann::json::object();
  double wall_time_s_ = 0.0;
};

}  // namespace moca::harness
