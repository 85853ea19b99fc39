#include <gtest/gtest.h>

#include "moca/moca_layer.hpp"
#include "support.hpp"

using namespace moca;
using moca::test::Mat;
using moca::test::randn;

using test::pool_oracle;
using test::router_oracle;
using test::unpool_oracle;

namespace {

struct Layer {
  MocaConfig cfg;
  TokenLayout layout;
  ParamSet<double> params;
};

Layer make_layer(std::vector<Eigen::Index> pools, Eigen::Index frames, Eigen::Index spatial = 2, Eigen::Index width = 6,
                 std::uint64_t seed = 3) {
  Layer l;
  l.cfg = MocaConfig{width, width, 4, std::move(pools)};
  l.layout = TokenLayout{frames, spatial, width};
  init_moca(l.params, "m.", l.cfg, Rng(seed));
  return l;
}

Mat forward(const Layer& l, const Mat& tokens, const Mat& f_id, const MocaOptions<double>& opts = {}) {
  Tape<double> t;
  Bound<double> b(t, l.params);
  return moca_forward(t.constant(tokens), t.constant(f_id), MocaWeights<double>::bind(b, "m.", l.cfg), l.cfg, l.layout,
                      opts)
      .value();
}

}  // namespace

TEST(Htp, PoolMatchesOracle) {
  for (Eigen::Index frames : {1, 3, 4, 5, 8}) {
    for (Eigen::Index p : {1, 2, 3, 4, 8}) {
      const TokenLayout layout{frames, 3, 2};
      const Mat x = randn(layout.rows(), 2, static_cast<std::uint64_t>(frames * 10 + p));
      EXPECT_LE((htp_pool(x, layout, p) - pool_oracle(x, frames, 3, p)).cwiseAbs().maxCoeff(), 1e-12)
          << "F=" << frames << " p=" << p;
    }
  }
}

TEST(Htp, UnpoolMatchesOracle) {
  const TokenLayout layout{5, 2, 3};
  const Mat pooled = randn(3 * 2, 3, 4);
  EXPECT_TRUE(bit_equal(htp_unpool(pooled, layout, 2), unpool_oracle(pooled, 5, 2, 2)));
  EXPECT_THROW(htp_unpool(pooled, layout, 4), ShapeError);
}

TEST(Htp, PoolOneIsExactIdentity) {
  const TokenLayout layout{4, 3, 5};
  const Mat x = randn(12, 5, 1);
  EXPECT_TRUE(bit_equal(htp_pool(x, layout, 1), x));
  EXPECT_TRUE(bit_equal(htp_unpool(x, layout, 1), x));
}

TEST(Htp, UnpoolOfPoolRecoversFrameConstantInput) {
  const Mat frame = randn(3, 4, 2);
  for (Eigen::Index p : {2, 3, 4}) {
    const TokenLayout layout{7, 3, 4};
    const Mat x = frame.replicate(7, 1);
    EXPECT_TRUE(bit_equal(htp_unpool(htp_pool(x, layout, p), layout, p), x)) << p;
  }
}

TEST(Htp, RejectsBadArguments) {
  const TokenLayout layout{4, 2, 3};
  EXPECT_THROW(htp_pool<double>(Mat::Zero(7, 3), layout, 2), ShapeError);
  EXPECT_THROW(htp_pool<double>(Mat::Zero(8, 3), layout, 0), ShapeError);
}

TEST(Htp, TapeGradients) {
  const TokenLayout layout{5, 2, 3};
  const Mat x = randn(10, 3, 8);
  EXPECT_LE(test::op_grad_error([&](const Var<double>& v) { return ad::temporal_pool(v, layout, 2); }, x), 1e-6);
  const Mat pooled = randn(6, 3, 9);
  EXPECT_LE(test::op_grad_error([&](const Var<double>& v) { return ad::temporal_unpool(v, layout, 2); }, pooled), 1e-6);
}

TEST(Router, MatchesOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Mat x = randn(4, 3, s), wr = randn(3, 3, s + 50, 2.0);
    Tape<double> t;
    EXPECT_LE((router(t.constant(x), t.constant(wr)).value() - router_oracle(x, wr)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Router, SimplexAndUniformAtZero) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    Tape<double> t;
    const Mat lambda =
        router(t.constant(rng.normal_matrix<double>(6, 4, 4.0)), t.constant(rng.normal_matrix<double>(4, 3, 4.0))).value();
    ASSERT_LE(std::abs(lambda.sum() - 1.0), 1e-9);
    ASSERT_GE(lambda.minCoeff(), 0.0);
    ASSERT_LE(lambda.maxCoeff(), 1.0);
  }
  Tape<double> t;
  const Mat uniform = router(t.constant(randn(6, 4, 1)), t.constant(Mat::Zero(4, 3))).value();
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_EQ(uniform(0, j), 1.0 / 3.0);
}

TEST(MocaConfig, Validation) {
  EXPECT_NO_THROW((MocaConfig{4, 4, 4, {1}}.validate()));
  EXPECT_THROW((MocaConfig{4, 4, 4, {}}.validate()), ConfigError);
  EXPECT_THROW((MocaConfig{4, 4, 4, {2, 2}}.validate()), ConfigError);
  EXPECT_THROW((MocaConfig{4, 4, 4, {4, 2}}.validate()), ConfigError);
  EXPECT_THROW((MocaConfig{4, 4, 4, {0, 2}}.validate()), ConfigError);
}

TEST(MocaConfig, ParameterNames) {
  const Layer l = make_layer({2, 4}, 4);
  std::vector<std::string> names;
  for (const auto& [name, m] : l.params) names.push_back(name);
  EXPECT_EQ(names, (std::vector<std::string>{"m.branch0.wk", "m.branch0.wo", "m.branch0.wv", "m.branch1.wk",
                                             "m.branch1.wo", "m.branch1.wv", "m.branch2.wk", "m.branch2.wo",
                                             "m.branch2.wv", "m.router", "m.wq"}));
  EXPECT_EQ(l.params.at("m.router").cols(), 2);
}

TEST(MocaForward, MatchesBruteForce) {
  const Layer l = make_layer({1, 2, 4}, 5, 2, 4);
  const Mat x = randn(10, 4, 1), f_id = randn(3, 4, 2);
  const auto& p = l.params;
  const auto branch = [&](const Mat& tokens, int b) -> Mat {
    const std::string pre = "m.branch" + std::to_string(b) + ".";
    return test::attention_oracle(tokens * p.at("m.wq"), f_id * p.at(pre + "wk"), f_id * p.at(pre + "wv")) *
           p.at(pre + "wo");
  };
  const Mat lambda = router_oracle(x, p.at("m.router"));
  Mat expected = branch(x, 0);
  for (int i = 0; i < 3; ++i) {
    const Eigen::Index pool = l.cfg.pool_sizes[static_cast<std::size_t>(i)];
    expected += lambda(0, i) * unpool_oracle(branch(pool_oracle(x, 5, 2, pool), i + 1), 5, 2, pool);
  }
  EXPECT_LE((forward(l, x, f_id) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MocaForward, ZeroedExpertsGiveSharedBranch) {
  Layer l = make_layer({2, 4}, 4);
  const Mat x = randn(8, 6, 1), f_id = randn(3, 6, 2);
  Tape<double> t;
  Bound<double> b(t, l.params);
  const auto w = MocaWeights<double>::bind(b, "m.", l.cfg);
  const Mat shared = branch_attention(t.constant(x), t.constant(f_id), w.wq, w.branches[0]).value();

  MocaOptions<double> zero;
  zero.lambda_override = Mat::Zero(1, 2);
  EXPECT_TRUE(bit_equal(forward(l, x, f_id, zero), shared));

  for (const char* e : {"m.branch1.wo", "m.branch2.wo"}) l.params.at(e).setZero();
  EXPECT_TRUE(bit_equal(forward(l, x, f_id), shared));
}

TEST(MocaForward, SingleUnitPoolIsSharedPlusExpert) {
  // C = 1, p = 1: λ = 1 exactly and the expert sees the raw tokens.
  const Layer l = make_layer({1}, 3);
  const Mat x = randn(6, 6, 1), f_id = randn(2, 6, 2);
  Tape<double> t;
  Bound<double> b(t, l.params);
  const auto w = MocaWeights<double>::bind(b, "m.", l.cfg);
  const Mat expected = branch_attention(t.constant(x), t.constant(f_id), w.wq, w.branches[0]).value() +
                       branch_attention(t.constant(x), t.constant(f_id), w.wq, w.branches[1]).value();
  EXPECT_TRUE(bit_equal(forward(l, x, f_id), expected));
}

TEST(MocaForward, IdentityTokenPermutationInvariance) {
  const Layer l = make_layer({2, 4}, 4);
  const Mat x = randn(8, 6, 1), f_id = randn(4, 6, 2);
  Mat reversed = f_id.colwise().reverse();
  EXPECT_LE((forward(l, x, reversed) - forward(l, x, f_id)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MocaForward, OutputShapeOverGrid) {
  for (Eigen::Index frames : {1, 2, 4, 8}) {
    for (unsigned mask = 1; mask < 16; ++mask) {
      std::vector<Eigen::Index> pools;
      for (unsigned bit = 0; bit < 4; ++bit)
        if (mask & (1u << bit)) pools.push_back(Eigen::Index{1} << bit);
      const Layer l = make_layer(pools, frames, 2, 6, mask);
      const Mat out = forward(l, randn(frames * 2, 6, mask), randn(3, 6, 1));
      EXPECT_EQ(out.rows(), frames * 2);
      EXPECT_EQ(out.cols(), 6);
      EXPECT_TRUE(out.allFinite());
    }
  }
}

TEST(MocaForward, ShapeErrors) {
  const Layer l = make_layer({2}, 4);
  EXPECT_THROW(forward(l, randn(7, 6, 1), randn(2, 6, 2)), ShapeError);
  EXPECT_THROW(forward(l, randn(8, 5, 1), randn(2, 6, 2)), ShapeError);
  MocaOptions<double> bad;
  bad.lambda_override = Mat::Zero(1, 3);
  EXPECT_THROW(forward(l, randn(8, 6, 1), randn(2, 6, 2), bad), ShapeError);
}

TEST(MocaForward, GradientsMatchFiniteDifferences) {
  const Layer l = make_layer({1, 2, 4}, 5, 2, 4);
  const Mat x = randn(10, 4, 1), f_id = randn(3, 4, 2);
  const std::function<Var<double>(const Bound<double>&)> loss = [&](const Bound<double>& b) {
    Tape<double>& t = b.tape();
    return ad::sum_squares(moca_forward(t.constant(x), t.constant(f_id), MocaWeights<double>::bind(b, "m.", l.cfg),
                                        l.cfg, l.layout));
  };
  for (const auto& c : check_param_gradients<double>(l.params, loss, 1e-5)) {
    EXPECT_LE(c.max_rel_error, 1e-4) << c.name;
    EXPECT_GT(c.max_abs_grad, 0.0) << c.name;
  }
  // Token gradient too.
  EXPECT_LE(test::op_grad_error(
                [&](const Var<double>& v) {
                  Bound<double> b(v.tape(), l.params);
                  return moca_forward(v, v.tape().constant(f_id), MocaWeights<double>::bind(b, "m.", l.cfg), l.cfg,
                                      l.layout);
                },
                x),
            1e-5);
}
