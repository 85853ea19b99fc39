#include "moca/harness/report.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "moca/errors.hpp"

namespace moca::harness {

using nlohmann::json;

namespace {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

// JSON has no NaN/Inf; non-finite measurements are reported as strings.
json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace

void Report::add(Check check) {
  for (const auto& c : checks_) {
    if (c.name == check.name) throw std::logic_error("duplicate check name '" + check.name + "'");
  }
  checks_.push_back(std::move(check));
}

void Report::at_most(const std::string& name, double measured, double tolerance, std::string detail) {
  add({name, std::isfinite(measured) && measured <= tolerance, measured, tolerance, std::move(detail)});
}

void Report::expect(const std::string& name, bool ok, std::string detail) {
  add({name, ok, ok ? 1.0 : 0.0, 1.0, std::move(detail)});
}

bool Report::passed() const {
  for (const auto& c : checks_) {
    if (!c.passed) return false;
  }
  return true;
}

std::string Report::content_hash() const {
  // Where the report is written does not change what it says.
  json config = config_;
  if (config.is_object()) config.erase("out_dir");
  json body = {{"suite", suite_}, {"config", config}, {"extra", extra_}};
  json checks = json::array();
  for (const auto& c : checks_) {
    checks.push_back({{"name", c.name}, {"status", c.passed}, {"measured", number(c.measured)}, {"tolerance", c.tolerance}});
  }
  body["checks"] = checks;
  return sha256_hex(body.dump());
}

json Report::to_json() const {
  json checks = json::array();
  for (const auto& c : checks_) {
    json e = {{"name", c.name},
              {"status", c.passed ? "pass" : "fail"},
              {"measured", number(c.measured)},
              {"tolerance", number(c.tolerance)}};
    if (!c.detail.empty()) e["detail"] = c.detail;
    checks.push_back(std::move(e));
  }
  return {{"suite", suite_},
          {"status", passed() ? "pass" : "fail"},
          {"config", config_},
          {"checks", checks},
          {"extra", extra_},
          {"wall_time_s", wall_time_s_},
          {"timestamp", utc_timestamp()},
          {"content_hash", content_hash()}};
}

void Report::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write report " + path.string());
  out << to_json().dump(2) << "\n";
}

}  // namespace moca::harness
