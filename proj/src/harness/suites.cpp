#include "moca/harness/suites.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "moca/checkpoint.hpp"
#include "moca/gradcheck.hpp"
#include "moca/harness/training.hpp"
#include "moca/serialize.hpp"

namespace moca::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void require_f64(const RunConfig& cfg, const char* suite) {
  if (cfg.precision != Precision::F64) {
    throw ConfigError(std::string(suite) + " runs in 64-bit mode only (--precision f64)");
  }
}

void add_grad_checks(Report& report, const std::string& group, const std::vector<ParamGradCheck>& checks) {
  for (const auto& c : checks) {
    std::ostringstream detail;
    detail << c.count << " entries, max |g| = " << c.max_abs_grad;
    report.at_most(group + c.name, c.finite ? c.max_rel_error : INFINITY, kGradcheckTolerance, detail.str());
  }
}

}  // namespace

Report run_gradcheck(const RunConfig& cfg, const GradcheckOptions& options) {
  cfg.validate();
  require_f64(cfg, "gradcheck");
  Stopwatch clock;
  Report report("gradcheck", to_json(cfg));
  const auto prepare = [&](Tape<double>& tape) {
    if (options.sign_flip) tape.inject_sign_flip(*options.sign_flip);
  };
  const double h = kGradcheckStep;

  // Softmax-weighted cross term on a 2x2 input.
  {
    Rng rng(cfg.seed, 11);
    ParamSet<double> p;
    p.add("x", rng.normal_matrix<double>(2, 2));
    const Matrix<double> c = rng.normal_matrix<double>(2, 2);
    const auto loss = [&](const Bound<double>& b) {
      return ad::sum_squares(ad::mul(ad::softmax_rows(b["x"]), b.tape().constant(c)));
    };
    for (const auto& r : check_param_gradients<double>(p, loss, h, prepare)) {
      report.at_most("softmax_cross_2x2", r.max_rel_error, 1e-5);
    }
  }

  // MoCA layer alone: Σ out².
  {
    const ModelConfig& m = cfg.model;
    Rng rng(cfg.seed, 12);
    ParamSet<double> p;
    init_moca(p, "", m.moca(), rng.split("moca"));
    const TokenLayout layout{m.frames, m.spatial(), m.width};
    const Matrix<double> tokens = rng.normal_matrix<double>(layout.rows(), m.width);
    const Matrix<double> f_id = rng.normal_matrix<double>(m.id_tokens, m.width);
    const auto loss = [&](const Bound<double>& b) {
      Tape<double>& t = b.tape();
      const auto w = MocaWeights<double>::bind(b, "", m.moca());
      return ad::sum_squares(moca_forward(t.constant(tokens), t.constant(f_id), w, m.moca(), layout));
    };
    add_grad_checks(report, "moca:", check_param_gradients<double>(p, loss, h, prepare));
  }

  // Q-Former-lite alone: Σ f_id².
  {
    const ModelConfig& m = cfg.model;
    Rng rng(cfg.seed, 13);
    ParamSet<double> p;
    init_qformer(p, "", m.qformer(), rng.split("qformer"));
    const auto enc = synth_encoders<double>(rng.normal_matrix<double>(1, m.identity_dim), m.encoders());
    const auto loss = [&](const Bound<double>& b) {
      Tape<double>& t = b.tape();
      return ad::sum_squares(qformer_lite(t.constant(enc.image_tokens), t.constant(enc.face_tokens), b, ""));
    };
    add_grad_checks(report, "qformer:", check_param_gradients<double>(p, loss, h, prepare));
  }

  // Full objective L = L_diff + α L_face + β L_back through the whole model.
  {
    const DiffusionSchedule sched = make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
    const auto batch = fixed_training_batch<double>(cfg, sched);
    const auto frozen = FrozenModules<double>::make(cfg.model);
    const ParamSet<double> params = init_dit<double>(cfg.model);
    const auto loss = [&](const Bound<double>& b) {
      return batch_objective<double>(b, frozen, cfg.model, sched, cfg.loss, batch).total;
    };
    const auto checks = check_param_gradients<double>(params, loss, h, prepare);
    add_grad_checks(report, "model:", checks);
    double worst = 0;
    bool finite = true;
    for (const auto& c : checks) {
      worst = std::max(worst, c.max_rel_error);
      finite = finite && c.finite;
    }
    report.expect("model:all_finite", finite);
    report.extra()["model_max_rel_error"] = worst;
    report.extra()["model_param_tensors"] = checks.size();
    report.extra()["model_param_count"] = params.scalar_count();
  }
  report.extra()["step"] = h;
  report.set_wall_time(clock.seconds());
  return report;
}

namespace {

template <typename Scalar>
Report overfit_impl(const RunConfig& cfg, const fs::path& log_path) {
  Stopwatch clock;
  Report report("overfit", to_json(cfg));
  std::ofstream log;
  if (!log_path.empty()) {
    if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
    log.open(log_path, std::ios::trunc);
    if (!log) throw FormatError("cannot write training log " + log_path.string());
  }
  const auto run = train_fixed_batch<Scalar>(cfg, [&](const StepLog& s) {
    if (log) log << s.to_json().dump() << "\n";
  });
  const StepLog& first = run.log.front();
  const StepLog& last = run.log.back();

  report.expect("no_divergence", !run.diverged, "loss and gradients stayed finite");
  if (cfg.lr == 0.0) {
    double drift = 0;
    for (const auto& s : run.log) drift = std::max(drift, std::abs(s.total - first.total));
    report.at_most("constant_loss_at_zero_lr", drift, 1e-12);
  } else {
    report.at_most("descent_ratio", last.total / first.total, kOverfitDescentRatio,
                   "final L / initial L after " + std::to_string(cfg.train_steps) + " steps");
  }
  if (cfg.loss.alpha == 0.0 && cfg.loss.beta == 0.0) {
    double worst = 0;
    for (const auto& s : run.log) worst = std::max(worst, std::abs(s.perceptual));
    report.at_most("perceptual_zero_without_weights", worst, 0.0);
  }
  report.extra()["initial"] = first.to_json();
  report.extra()["final"] = last.to_json();
  report.extra()["param_count"] = run.params.scalar_count();
  report.set_wall_time(clock.seconds());
  return report;
}

}  // namespace

Report run_overfit(const RunConfig& cfg, const fs::path& log_path) {
  cfg.validate();
  if (cfg.train_steps < kOverfitMinSteps) {
    throw ConfigError("overfit needs at least " + std::to_string(kOverfitMinSteps) + " training steps");
  }
  return cfg.precision == Precision::F64 ? overfit_impl<double>(cfg, log_path) : overfit_impl<float>(cfg, log_path);
}

namespace {

struct AblationCell {
  std::string label;
  std::vector<Eigen::Index> pools;
};

std::string pools_label(const std::vector<Eigen::Index>& pools) {
  std::string s = "[";
  for (std::size_t i = 0; i < pools.size(); ++i) s += (i ? "," : "") + std::to_string(pools[i]);
  return s + "]";
}

template <typename Scalar>
Report ablation_impl(const RunConfig& cfg, AblationAxis axis) {
  Stopwatch clock;
  Report report(axis == AblationAxis::Experts ? "ablate-experts" : "ablate-pools", to_json(cfg));
  std::vector<AblationCell> cells;
  if (axis == AblationAxis::Experts) {
    const std::vector<Eigen::Index> ladder{2, 4, 8, 16};
    for (std::size_t c = 1; c <= 4; ++c) {
      cells.push_back({"C=" + std::to_string(c), {ladder.begin(), ladder.begin() + static_cast<long>(c)}});
    }
  } else {
    for (const auto& p : std::vector<std::vector<Eigen::Index>>{{2, 4, 8}, {2, 4, 16}, {2, 8, 16}, {4, 8, 16}}) {
      cells.push_back({pools_label(p), p});
    }
  }

  json rows = json::array();
  bool diverged = false;
  std::vector<std::size_t> counts;  // ran cells only, in sweep order
  for (const auto& cell : cells) {
    json row = {{"label", cell.label}, {"C", cell.pools.size()}, {"pool_sizes", cell.pools}};
    const Eigen::Index largest = cell.pools.back();
    if (largest > cfg.model.frames) {
      row["status"] = "skipped";
      row["reason"] = "pool size " + std::to_string(largest) + " exceeds F=" + std::to_string(cfg.model.frames);
      rows.push_back(row);
      continue;
    }
    RunConfig c = cfg;
    c.model.experts = static_cast<Eigen::Index>(cell.pools.size());
    c.model.pool_sizes = cell.pools;
    const auto run = train_fixed_batch<Scalar>(c);
    row["status"] = run.diverged ? "diverged" : "ok";
    row["param_count"] = run.params.scalar_count();
    row["initial_L"] = run.log.front().total;
    row["final_L"] = run.log.back().total;
    diverged = diverged || run.diverged;
    counts.push_back(run.params.scalar_count());
    rows.push_back(row);
  }
  report.extra()["rows"] = rows;

  std::string labels;
  for (const auto& r : rows) labels += (labels.empty() ? "" : " ") + r["label"].get<std::string>();
  report.expect("row_set", rows.size() == 4, labels);
  report.expect("no_divergence", !diverged);
  if (axis == AblationAxis::Experts) {
    bool increasing = true;
    for (std::size_t i = 1; i < counts.size(); ++i) increasing = increasing && counts[i] > counts[i - 1];
    report.expect("param_count_increases_with_C", increasing);
  }
  report.set_wall_time(clock.seconds());
  return report;
}

}  // namespace

Report run_ablation(const RunConfig& cfg, AblationAxis axis) {
  cfg.validate();
  return cfg.precision == Precision::F64 ? ablation_impl<double>(cfg, axis) : ablation_impl<float>(cfg, axis);
}

namespace {

template <typename Scalar>
bool same(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  return bit_equal(a, b);
}

template <typename Scalar>
Report dump_impl(const RunConfig& cfg, const fs::path& dir) {
  Stopwatch clock;
  Report report("dump", to_json(cfg));
  const DiffusionSchedule sched = make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
  Rng root(cfg.seed, 7);
  const auto samples = gen_synthetic_batch<Scalar>(cfg.model, static_cast<std::size_t>(cfg.batch_size), root.split("data"));
  const auto batch = attach_noise(samples, sched, root.split("noise"));

  std::size_t files = 0;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const fs::path sdir = dir / "fixtures" / ("sample" + std::to_string(b));
    fs::create_directories(sdir);
    const std::vector<std::pair<std::string, Tensor<Scalar>>> tensors{
        {"z0", Tensor<Scalar>::from_matrix(samples[b].z0)},
        {"text", Tensor<Scalar>::from_matrix(samples[b].text)},
        {"reference", Tensor<Scalar>::from_matrix(samples[b].reference)},
        {"pixel_mask", samples[b].pixel_mask},
        {"latent_mask", Tensor<Scalar>::from_matrix(samples[b].latent_mask)},
        {"eps", Tensor<Scalar>::from_matrix(batch[b].eps)},
    };
    bool ok = true;
    for (const auto& [name, t] : tensors) {
      const fs::path path = sdir / (name + ".moca");
      save_tensor(path, t);
      ok = ok && load_tensor<Scalar>(path) == t;
      ++files;
    }
    report.expect("sample" + std::to_string(b) + ":tensors_roundtrip", ok);

    IdentityFixture<Scalar> fixture{samples[b].identity.identity_id, cfg.seed, samples[b].identity.identity,
                                    samples[b].identity.pool};
    const fs::path idir = dir / "fixtures" / ("identity" + std::to_string(b));
    save_identity_fixture(idir, fixture);
    const auto loaded = load_identity_fixture<Scalar>(idir);
    bool id_ok = loaded.identity_id == fixture.identity_id && loaded.seed == fixture.seed &&
                 same(loaded.identity, fixture.identity) && loaded.pool.size() == fixture.pool.size() &&
                 loaded.pool.source_frames == fixture.pool.source_frames;
    for (std::size_t i = 0; id_ok && i < fixture.pool.size(); ++i) {
      id_ok = same(loaded.pool.entries[i], fixture.pool.entries[i]);
    }
    report.expect("identity" + std::to_string(b) + ":fixture_roundtrip", id_ok);
  }

  const ParamSet<Scalar> params = init_dit<Scalar>(cfg.model);
  save_checkpoint(dir / "checkpoint", params, to_json(cfg.model));
  json loaded_cfg;
  const auto loaded = load_checkpoint<Scalar>(dir / "checkpoint", &loaded_cfg);
  bool ck_ok = loaded.size() == params.size() && loaded_cfg == to_json(cfg.model);
  for (const auto& [name, m] : params) ck_ok = ck_ok && loaded.contains(name) && same(loaded.at(name), m);
  report.expect("checkpoint_roundtrip", ck_ok);

  save_moca_params(dir / "moca_block0", params, block_prefix(0) + "moca.", cfg.model.moca());
  MocaConfig mc;
  const auto moca_loaded = load_moca_params<Scalar>(dir / "moca_block0", &mc);
  bool moca_ok = mc.pool_sizes == cfg.model.pool_sizes && mc.attn_width == cfg.model.attn_width;
  for (const auto& [name, m] : moca_loaded) moca_ok = moca_ok && same(m, params.at(block_prefix(0) + "moca." + name));
  report.expect("moca_params_roundtrip", moca_ok);

  report.extra()["fixture_files"] = files;
  report.extra()["dir"] = dir.string();
  report.set_wall_time(clock.seconds());
  return report;
}

}  // namespace

Report run_dump(const RunConfig& cfg, const fs::path& dir) {
  cfg.validate();
  return cfg.precision == Precision::F64 ? dump_impl<double>(cfg, dir) : dump_impl<float>(cfg, dir);
}

}  // namespace moca::harness
