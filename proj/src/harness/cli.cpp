#include "moca/harness/cli.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "moca/errors.hpp"
#include "moca/harness/suites.hpp"

namespace moca::harness {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, OpKind>& op_names() {
  static const std::map<std::string, OpKind> names = {
      {"add", OpKind::Add},         {"sub", OpKind::Sub},           {"mul", OpKind::Mul},
      {"scale", OpKind::Scale},     {"matmul", OpKind::MatMul},     {"transpose", OpKind::Transpose},
      {"softmax", OpKind::Softmax}, {"row_mean", OpKind::RowMean},  {"add_row", OpKind::AddRow},
      {"silu", OpKind::Silu},       {"rms_norm", OpKind::RmsNorm},  {"sqrt", OpKind::Sqrt},
      {"sum_squares", OpKind::SumSquares}, {"temporal_pool", OpKind::TemporalPool},
      {"temporal_unpool", OpKind::TemporalUnpool}, {"conv3x3", OpKind::Conv3x3},
  };
  return names;
}

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string precision;
  std::string out;
  std::string axis = "both";
  std::string sign_flip;
};

RunConfig resolve(const Args& a, const RunConfig& preset) {
  RunConfig cfg = a.config.empty() ? preset : load_config(a.config, preset);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.model.seed = *a.seed;
  }
  if (!a.precision.empty()) cfg.precision = parse_precision(a.precision);
  if (!a.out.empty()) cfg.out_dir = a.out;
  cfg.validate();
  return cfg;
}

int finish(const Report& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const fs::path path = out_dir / (report.suite() + ".json");
  report.write(path);
  std::size_t failed = 0;
  for (const auto& c : report.checks()) {
    if (!c.passed) {
      ++failed;
      std::cerr << "FAIL " << c.name << "  measured=" << c.measured << " tol=" << c.tolerance
                << (c.detail.empty() ? "" : "  " + c.detail) << '\n';
    }
  }
  std::cout << report.suite() << ": " << (report.passed() ? "pass" : "FAIL") << " (" << report.checks().size() - failed
            << "/" << report.checks().size() << " checks)  -> " << path.string() << '\n';
  return report.passed() ? kExitPass : kExitFail;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Identity-preserving video diffusion toolkit: verification suites and toy runs"};
  app.require_subcommand(1, 1);
  Args a;
  app.add_option("--config", a.config, "RunConfig JSON (unknown keys are rejected)");
  app.add_option("--seed", a.seed, "override the run and model seed");
  app.add_option("--precision", a.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", a.out, "output directory for reports and artifacts");

  auto* gradcheck = app.add_subcommand("gradcheck", "tape gradients vs central differences (micro config)");
  gradcheck->add_option("--sign-flip", a.sign_flip, "negate one backward rule (mutation canary)")
      ->check(CLI::IsMember([] {
        std::vector<std::string> keys;
        for (const auto& [k, v] : op_names()) keys.push_back(k);
        return keys;
      }()));
  auto* invariants = app.add_subcommand("invariants", "algebraic invariants of every module");
  auto* overfit = app.add_subcommand("overfit", "train on one fixed batch and check descent");
  auto* ablate = app.add_subcommand("ablate", "sweep the expert count and the pool sizes");
  ablate->add_option("--axis", a.axis, "experts, pools or both")->check(CLI::IsMember({"experts", "pools", "both"}));
  auto* dump = app.add_subcommand("dump", "write and reload fixtures, a checkpoint and one MoCA layer");
  for (auto* sub : {gradcheck, invariants, overfit, ablate, dump}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (gradcheck->parsed()) {
      const RunConfig cfg = resolve(a, RunConfig::micro());
      GradcheckOptions opts;
      if (!a.sign_flip.empty()) opts.sign_flip = op_names().at(a.sign_flip);
      return finish(run_gradcheck(cfg, opts), cfg.out_dir);
    }
    if (invariants->parsed()) {
      const RunConfig cfg = resolve(a, RunConfig::toy());
      return finish(run_invariants(cfg), cfg.out_dir);
    }
    if (overfit->parsed()) {
      const RunConfig cfg = resolve(a, RunConfig::toy());
      fs::create_directories(cfg.out_dir);
      return finish(run_overfit(cfg, fs::path(cfg.out_dir) / "overfit.log.jsonl"), cfg.out_dir);
    }
    if (ablate->parsed()) {
      const RunConfig cfg = resolve(a, RunConfig::ablation());
      int code = kExitPass;
      if (a.axis != "pools") code = std::max(code, finish(run_ablation(cfg, AblationAxis::Experts), cfg.out_dir));
      if (a.axis != "experts") code = std::max(code, finish(run_ablation(cfg, AblationAxis::Pools), cfg.out_dir));
      return code;
    }
    const RunConfig cfg = resolve(a, RunConfig::toy());
    return finish(run_dump(cfg, fs::path(cfg.out_dir) / "dump"), cfg.out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFail;
  }
}

}  // namespace moca::harness
