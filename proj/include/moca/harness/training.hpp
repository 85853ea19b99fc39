#pragma once

#include <functional>
#include <vector>

#include <json.hpp>

#include "moca/harness/config.hpp"
#include "moca/harness/synthetic.hpp"
#include "moca/optimizer.hpp"

namespace moca::harness {

struct StepLog {
  int step = 0;
  std::vector<int> t;
  std::vector<double> w;
  double diffusion = 0, face = 0, back = 0, perceptual = 0, total = 0;

  /// {step, t, L_diff, L_face, L_back, L_p, L, w}; t and w are scalars for a
  /// single-sample batch and per-sample arrays otherwise.
  nlohmann::json to_json() const {
    nlohmann::json j = {{"step", step},       {"L_diff", diffusion}, {"L_face", face},
                        {"L_back", back},     {"L_p", perceptual},   {"L", total}};
    if (t.size() == 1) {
      j["t"] = t.front();
      j["w"] = w.front();
    } else {
      j["t"] = t;
      j["w"] = w;
    }
    return j;
  }
};

/// The one fixed batch (data, timesteps and noise) a run trains on.
template <typename Scalar>
std::vector<TrainingSample<Scalar>> fixed_training_batch(const RunConfig& cfg, const DiffusionSchedule& sched) {
  Rng root(cfg.seed, 7);
  const auto samples = gen_synthetic_batch<Scalar>(cfg.model, static_cast<std::size_t>(cfg.batch_size), root.split("data"));
  return attach_noise(samples, sched, root.split("noise"));
}

template <typename Scalar>
struct TrainingRun {
  ParamSet<Scalar> params;
  std::vector<StepLog> log;  ///< entries 0..train_steps; the last is after the final update
  bool diverged = false;
};

template <typename Scalar>
StepLog evaluate_step(int step, const LossTerms<Scalar>& terms) {
  StepLog s;
  s.step = step;
  s.t = terms.t;
  s.w = terms.w;
  s.diffusion = static_cast<double>(terms.diffusion.value()(0, 0));
  s.face = static_cast<double>(terms.face.value()(0, 0));
  s.back = static_cast<double>(terms.back.value()(0, 0));
  s.perceptual = static_cast<double>(terms.perceptual.value()(0, 0));
  s.total = static_cast<double>(terms.total.value()(0, 0));
  return s;
}

/// Adam on the fixed batch for cfg.train_steps updates. Stops early and sets
/// `diverged` if the loss or a gradient turns non-finite.
template <typename Scalar>
TrainingRun<Scalar> train_fixed_batch(const RunConfig& cfg, const std::function<void(const StepLog&)>& on_step = {}) {
  cfg.validate();
  const DiffusionSchedule sched = make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
  const auto batch = fixed_training_batch<Scalar>(cfg, sched);
  const auto frozen = FrozenModules<Scalar>::make(cfg.model);
  TrainingRun<Scalar> run{init_dit<Scalar>(cfg.model), {}, false};
  AdamState<Scalar> state;
  const AdamConfig adam{cfg.lr};

  for (int step = 0; step <= cfg.train_steps; ++step) {
    Tape<Scalar> tape;
    Bound<Scalar> bound(tape, run.params);
    const auto terms = batch_objective<Scalar>(bound, frozen, cfg.model, sched, cfg.loss, batch);
    StepLog entry = evaluate_step(step, terms);
    run.log.push_back(entry);
    if (on_step) on_step(entry);
    if (!std::isfinite(entry.total)) {
      run.diverged = true;
      break;
    }
    if (step == cfg.train_steps) break;
    tape.backward(terms.total);
    try {
      optimizer_step(run.params, bound.gradients(), state, adam);
    } catch (const NumericError&) {
      run.diverged = true;
      break;
    }
  }
  return run;
}

}  // namespace moca::harness
