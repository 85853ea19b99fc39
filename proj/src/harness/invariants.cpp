#include <chrono>
#include <numeric>
#include <sstream>

#include "moca/gradcheck.hpp"
#include "moca/harness/suites.hpp"
#include "moca/harness/training.hpp"
#include "moca/serialize.hpp"

namespace moca::harness {

namespace {

using Mat = Matrix<double>;

double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

Mat permute_rows(const Mat& m, const std::vector<Eigen::Index>& order) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(order[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<Eigen::Index> shuffled(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

Mat eval_moca(const Mat& tokens, const Mat& f_id, const ParamSet<double>& p, const MocaConfig& mc,
              const TokenLayout& layout, const MocaOptions<double>& opts = {}) {
  Tape<double> tape;
  Bound<double> b(tape, p);
  return moca_forward(tape.constant(tokens), tape.constant(f_id), MocaWeights<double>::bind(b, "", mc), mc, layout, opts)
      .value();
}

void numerics_checks(Report& r, Rng rng) {
  double sum_err = 0, shift_err = 0;
  for (int i = 0; i < 100; ++i) {
    const Mat x = rng.normal_matrix<double>(3, 7, 5.0);
    const Mat y = softmax_rows(x);
    sum_err = std::max(sum_err, (y.rowwise().sum().array() - 1.0).abs().maxCoeff());
    Mat shifted = x;
    shifted.array().colwise() += rng.normal_matrix<double>(3, 1, 50.0).col(0).array();
    shift_err = std::max(shift_err, max_abs_diff(softmax_rows(shifted), y));
  }
  r.at_most("numerics:softmax_rows_sum_to_one", sum_err, 1e-12);
  r.at_most("numerics:softmax_shift_invariance", shift_err, 1e-9);

  double perm_err = 0;
  for (int i = 0; i < 50; ++i) {
    const Mat q = rng.normal_matrix<double>(3, 4), k = rng.normal_matrix<double>(5, 4), v = rng.normal_matrix<double>(5, 3);
    const auto order = shuffled(5, rng);
    perm_err = std::max(perm_err, max_abs_diff(scaled_dot_attention(q, k, v),
                                               scaled_dot_attention(q, permute_rows(k, order), permute_rows(v, order))));
  }
  r.at_most("numerics:attention_key_value_permutation", perm_err, 1e-12);

  bool f32_ok = true, f64_ok = true;
  {
    const Mat m = rng.normal_matrix<double>(3, 5);
    std::stringstream s64, s32;
    write_tensor(s64, Tensor<double>::from_matrix(m));
    f64_ok = read_tensor<double>(s64) == Tensor<double>::from_matrix(m);
    const Matrix<float> mf = m.cast<float>();
    write_tensor(s32, Tensor<float>::from_matrix(mf));
    f32_ok = read_tensor<float>(s32) == Tensor<float>::from_matrix(mf);
  }
  r.expect("numerics:serialization_roundtrip_f64", f64_ok);
  r.expect("numerics:serialization_roundtrip_f32", f32_ok);

  // Replaying the same graph gives bit-identical gradients.
  const Mat a = rng.normal_matrix<double>(4, 3), b = rng.normal_matrix<double>(3, 4);
  const auto grad_once = [&] {
    Tape<double> t;
    const auto va = t.variable(a);
    t.backward(ad::sum_squares(ad::softmax_rows(ad::matmul(va, t.constant(b)))));
    return t.grad(va);
  };
  r.expect("numerics:tape_replay_bit_identical", bit_equal(grad_once(), grad_once()));
}

void identity_checks(Report& r, const RunConfig& cfg, Rng rng) {
  const ModelConfig& m = cfg.model;
  ParamSet<double> p;
  init_qformer(p, "", m.qformer(), rng.split("qformer"));
  const auto enc = synth_encoders<double>(rng.normal_matrix<double>(1, m.identity_dim), m.encoders());
  const Mat base = embed_identity(enc, p, "").f_id;
  EncodedIdentity<double> swapped{permute_rows(enc.face_tokens, shuffled(enc.face_tokens.rows(), rng)),
                                  permute_rows(enc.image_tokens, shuffled(enc.image_tokens.rows(), rng))};
  r.at_most("id_embedding:f_id_token_order_invariance", max_abs_diff(embed_identity(swapped, p, "").f_id, base), 1e-12);

  const Mat video = rng.normal_matrix<double>(m.frames * m.spatial(), m.latent_channels);
  const Mat ref = rng.normal_matrix<double>(m.spatial(), m.latent_channels);
  const Mat joined = concat_global(video, ref);
  r.expect("id_embedding:concat_then_slice_identity", bit_equal<double>(joined.bottomRows(video.rows()), video));

  // Every Q-Former tensor receives a gradient from the training objective.
  const DiffusionSchedule sched = make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
  const auto batch = fixed_training_batch<double>(cfg, sched);
  const auto frozen = FrozenModules<double>::make(m);
  const ParamSet<double> params = init_dit<double>(m);
  Tape<double> tape;
  Bound<double> bound(tape, params);
  tape.backward(batch_objective<double>(bound, frozen, m, sched, cfg.loss, batch).total);
  const auto grads = bound.gradients();
  double weakest = INFINITY;
  for (const auto& [name, g] : grads) {
    if (name.rfind("qformer.", 0) == 0) weakest = std::min(weakest, g.cwiseAbs().maxCoeff());
  }
  r.add({"id_embedding:qformer_params_receive_gradient", weakest > 0.0, weakest, 0.0, "min over tensors of max |g|"});
}

void moca_checks(Report& r, const RunConfig& cfg, Rng rng) {
  const ModelConfig& m = cfg.model;
  const MocaConfig mc = m.moca();
  const TokenLayout layout = m.visual_layout();

  double simplex_err = 0;
  bool in_range = true;
  for (int i = 0; i < 1000; ++i) {
    Tape<double> t;
    const Mat lambda = router(t.constant(rng.normal_matrix<double>(layout.rows(), m.width, 3.0)),
                              t.constant(rng.normal_matrix<double>(m.width, mc.experts(), 3.0)))
                           .value();
    simplex_err = std::max(simplex_err, std::abs(lambda.sum() - 1.0));
    in_range = in_range && lambda.minCoeff() >= 0.0 && lambda.maxCoeff() <= 1.0;
  }
  r.at_most("moca:router_simplex_sum", simplex_err, 1e-9);
  r.expect("moca:router_weights_in_unit_interval", in_range);
  {
    Tape<double> t;
    const Mat lambda = router(t.constant(rng.normal_matrix<double>(layout.rows(), m.width)),
                              t.constant(Mat::Zero(m.width, mc.experts())))
                           .value();
    r.expect("moca:router_uniform_at_zero_weights",
             (lambda.array() == 1.0 / static_cast<double>(mc.experts())).all());
  }

  const Mat tokens = rng.normal_matrix<double>(layout.rows(), m.width);
  r.expect("moca:htp_pool_p1_identity", bit_equal(htp_pool(tokens, layout, 1), tokens));
  bool unpool_ok = true;
  const Mat frame = rng.normal_matrix<double>(layout.spatial, m.width);
  const Mat constant_frames = frame.replicate(layout.frames, 1);
  for (Eigen::Index p : {1, 2, 3, 4, 8}) {
    unpool_ok = unpool_ok && bit_equal(htp_unpool(htp_pool(constant_frames, layout, p), layout, p), constant_frames);
  }
  r.expect("moca:unpool_pool_identity_on_frame_constant", unpool_ok);

  bool shapes_ok = true;
  for (Eigen::Index frames : {1, 2, 4, 8}) {
    for (unsigned mask = 1; mask < 16; ++mask) {
      MocaConfig grid = mc;
      grid.pool_sizes.clear();
      for (unsigned bit = 0; bit < 4; ++bit) {
        if (mask & (1u << bit)) grid.pool_sizes.push_back(Eigen::Index{1} << bit);
      }
      ParamSet<double> gp;
      init_moca(gp, "", grid, rng.split(mask));
      const TokenLayout gl{frames, 2, m.width};
      const Mat out = eval_moca(rng.normal_matrix<double>(gl.rows(), m.width), rng.normal_matrix<double>(3, m.width),
                                gp, grid, gl);
      shapes_ok = shapes_ok && out.rows() == gl.rows() && out.cols() == m.width;
    }
  }
  r.expect("moca:output_shape_grid", shapes_ok, "F in {1,2,4,8}, pools over subsets of {1,2,4,8}");

  ParamSet<double> p;
  init_moca(p, "", mc, rng.split("layer"));
  const Mat f_id = rng.normal_matrix<double>(m.id_tokens, m.width);
  const Mat full = eval_moca(tokens, f_id, p, mc, layout);

  ParamSet<double> zeroed = p;
  for (Eigen::Index b = 1; b <= mc.experts(); ++b) zeroed.at(branch_prefix("", b) + "wo").setZero();
  Tape<double> t;
  Bound<double> bound(t, p);
  const Mat shared =
      branch_attention(t.constant(tokens), t.constant(f_id), bound["wq"], MocaWeights<double>::bind(bound, "", mc).branches[0])
          .value();
  r.expect("moca:zero_experts_equal_shared_branch", bit_equal(eval_moca(tokens, f_id, zeroed, mc, layout), shared));

  const Mat permuted = eval_moca(tokens, permute_rows(f_id, shuffled(f_id.rows(), rng)), p, mc, layout);
  r.at_most("moca:f_id_permutation_invariance", max_abs_diff(permuted, full), 1e-12);

  const auto loss = [&](const Bound<double>& b) {
    Tape<double>& tt = b.tape();
    return ad::sum_squares(moca_forward(tt.constant(tokens), tt.constant(f_id), MocaWeights<double>::bind(b, "", mc), mc, layout));
  };
  double worst = 0;
  for (const auto& c : check_param_gradients<double>(p, loss, kGradcheckStep)) worst = std::max(worst, c.max_rel_error);
  r.at_most("moca:gradients_match_finite_differences", worst, kGradcheckTolerance);
}

void backbone_checks(Report& r, const RunConfig& cfg, Rng rng) {
  const ModelConfig& m = cfg.model;
  bool shape_ok = true;
  for (Eigen::Index depth : {1, 2, 3}) {
    ModelConfig c = m;
    c.depth = depth;
    const ParamSet<double> p = init_dit<double>(c);
    Tape<double> t;
    Bound<double> b(t, p);
    std::size_t blocks = 0;
    ForwardHooks<double> hooks;
    const Eigen::Index expected_rows = c.text_tokens + c.visual_layout().rows();
    hooks.on_block = [&](const BlockTrace<double>& trace) {
      ++blocks;
      shape_ok = shape_ok && trace.after_moca->rows() == expected_rows && trace.after_moca->cols() == c.width;
    };
    const Mat eps_hat = model_forward(t.constant(rng.normal_matrix<double>(c.frames * c.spatial(), c.latent_channels)), 10,
                                      t.constant(rng.normal_matrix<double>(c.text_tokens, c.width)),
                                      t.constant(rng.normal_matrix<double>(c.spatial(), c.latent_channels)),
                                      t.constant(rng.normal_matrix<double>(c.id_tokens, c.width)), b, c, hooks)
                            .value();
    shape_ok = shape_ok && blocks == static_cast<std::size_t>(depth) && eps_hat.rows() == c.frames * c.spatial() &&
               eps_hat.cols() == c.latent_channels;
  }
  r.expect("dit:shape_preserved_across_depth", shape_ok);

  const ParamSet<double> p = init_dit<double>(m);
  Tape<double> t;
  Bound<double> b(t, p);
  bool bypass = true;
  std::size_t seen = 0;
  ForwardHooks<double> hooks;
  hooks.on_block = [&](const BlockTrace<double>& trace) {
    ++seen;
    bypass = bypass && bit_equal<double>(trace.before_moca->topRows(m.text_tokens), trace.after_moca->topRows(m.text_tokens));
  };
  model_forward(t.constant(rng.normal_matrix<double>(m.frames * m.spatial(), m.latent_channels)), 25,
                t.constant(rng.normal_matrix<double>(m.text_tokens, m.width)),
                t.constant(rng.normal_matrix<double>(m.spatial(), m.latent_channels)),
                t.constant(rng.normal_matrix<double>(m.id_tokens, m.width)), b, m, hooks);
  r.expect("dit:text_rows_bypass_moca_every_block", bypass && seen == static_cast<std::size_t>(m.depth));
}

void loss_checks(Report& r, const RunConfig& cfg, Rng rng) {
  const ModelConfig& m = cfg.model;
  const int T = 50;
  bool monotone = true;
  for (int t = 1; t <= T; ++t) monotone = monotone && cosine_weight(t, T) < cosine_weight(t - 1, T);
  r.expect("losses:cosine_weight_strictly_decreasing", monotone, "T=50");
  r.expect("losses:cosine_weight_endpoints", cosine_weight(0, T) == 1.0 && cosine_weight(T, T) == 0.0);

  const DiffusionSchedule sched = make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
  const Eigen::Index rows = m.frames * m.spatial();
  double recon = 0;
  for (int i = 0; i < 100; ++i) {
    const Mat z0 = rng.normal_matrix<double>(rows, m.latent_channels);
    const Mat eps = rng.normal_matrix<double>(rows, m.latent_channels);
    const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(sched.steps())));
    recon = std::max(recon, max_abs_diff(predict_z0(forward_diffuse(z0, t, eps, sched), t, eps, sched), z0));
  }
  r.at_most("losses:diffuse_then_predict_recovers_z0", recon, 1e-12);

  // With f = identity and both norms squared, face and background regions partition ‖ẑ0 - z̃0‖².
  const auto identity = FeatureProjector<double>::identity(m.latent_channels, m.grid_h, m.grid_w);
  const auto projector = FeatureProjector<double>::seeded(m.latent_channels, m.grid_h, m.grid_w, 3);
  double partition = 0;
  bool nonneg = true;
  for (int i = 0; i < 50; ++i) {
    const Mat a = rng.normal_matrix<double>(rows, m.latent_channels);
    const Mat z = rng.normal_matrix<double>(rows, m.latent_channels);
    Mat mask(rows, 1);
    for (Eigen::Index k = 0; k < rows; ++k) mask(k, 0) = static_cast<double>(rng.uniform_index(2));
    Tape<double> t;
    const auto va = t.variable(a);
    const double face = face_loss(va, z, mask, identity, 1.0).value()(0, 0);
    const double back = back_loss(va, z, mask, 1.0).value()(0, 0);
    const double total = (a - z).squaredNorm();
    partition = std::max(partition, std::abs(face * face - kNormGuard + back - total) / total);

    const double w = cosine_weight(static_cast<double>(rng.uniform_index(51)), 50);
    const double f2 = face_loss(va, z, mask, projector, w).value()(0, 0);
    const double b2 = back_loss(va, z, mask, w).value()(0, 0);
    const double d = diffusion_loss(va, z).value()(0, 0);
    nonneg = nonneg && f2 >= 0 && b2 >= 0 && d >= 0;
  }
  r.at_most("losses:face_back_partition", partition, 1e-12, "relative to ‖ẑ0 - z̃0‖²");
  r.expect("losses:all_terms_nonnegative", nonneg);
}

void data_checks(Report& r, const RunConfig& cfg) {
  const auto a = gen_synthetic_batch<double>(cfg.model, 2, Rng(cfg.seed, 3));
  const auto b = gen_synthetic_batch<double>(cfg.model, 2, Rng(cfg.seed, 3));
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) {
    same = bit_equal(a[i].z0, b[i].z0) && bit_equal(a[i].text, b[i].text) && a[i].pixel_mask == b[i].pixel_mask &&
           bit_equal(a[i].reference, b[i].reference);
  }
  r.expect("data:same_seed_same_batch", same);

  double lo = 1, hi = 0;
  bool pools = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (const auto& s : gen_synthetic_batch<double>(cfg.model, 1, Rng(seed, 3))) {
      for (std::size_t f = 0; f < static_cast<std::size_t>(cfg.model.frames); ++f) {
        const double c = mask_coverage(s.pixel_mask, f);
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
      pools = pools && s.identity.pool.size() == kFacePoolSize;
    }
  }
  std::ostringstream range;
  range << "coverage range [" << lo << ", " << hi << "] over 100 seeds";
  r.expect("data:mask_coverage_within_bounds", lo >= kMinMaskCoverage && hi <= kMaxMaskCoverage, range.str());
  r.expect("data:face_pool_size_is_five", pools);

  RunConfig bad = cfg;
  bad.model.pool_sizes = {4, 2};
  bad.model.experts = 2;
  bool rejected = false;
  try {
    bad.validate();
  } catch (const ConfigError&) {
    rejected = true;
  }
  r.expect("config:non_increasing_pools_rejected", rejected);
}

}  // namespace

Report run_invariants(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.precision != Precision::F64) throw ConfigError("invariants runs in 64-bit mode only (--precision f64)");
  const auto start = std::chrono::steady_clock::now();
  Report report("invariants", to_json(cfg));
  Rng root(cfg.seed, 21);
  numerics_checks(report, root.split("numerics"));
  identity_checks(report, cfg, root.split("identity"));
  moca_checks(report, cfg, root.split("moca"));
  backbone_checks(report, cfg, root.split("backbone"));
  loss_checks(report, cfg, root.split("losses"));
  data_checks(report, cfg);
  report.set_wall_time(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return report;
}

}  // namespace moca::harness
