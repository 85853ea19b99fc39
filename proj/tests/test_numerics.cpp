#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "moca/ops.hpp"
#include "moca/serialize.hpp"
#include "support.hpp"

using namespace moca;
using moca::test::Mat;
using moca::test::randn;

TEST(Tensor, RowMajorOffsets) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.offset({1, 2, 3}), 23u);
  EXPECT_EQ(t.offset({0, 1, 0}), 4u);
  t.at({1, 0, 2}) = 7.0;
  EXPECT_EQ(t[14], 7.0);
  EXPECT_THROW(t.offset({2, 0, 0}), ShapeError);
  EXPECT_THROW(t.offset({0, 0}), ShapeError);
}

TEST(Tensor, MatrixRoundTrip) {
  const Mat m = randn(3, 5, 1);
  const auto t = Tensor<double>::from_matrix(m);
  EXPECT_EQ(t.shape(), (Shape{3, 5}));
  EXPECT_EQ(t.at({2, 1}), m(2, 1));
  EXPECT_TRUE(bit_equal(t.to_matrix(), m));
  EXPECT_THROW(Tensor<double>(Shape{2, 2}, {1.0, 2.0}), ShapeError);
  EXPECT_THROW(Tensor<double>(Shape{2, 2, 2}).to_matrix(), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42, 3), b(42, 3), c(42, 4);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, SplitDoesNotAdvanceParent) {
  Rng a(1), b(1);
  const Rng child = a.split("child");
  (void)child;
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(1).split("x").next_u64(), Rng(1).split("y").next_u64());
  EXPECT_NE(Rng(1).split(std::uint64_t{0}).next_u64(), Rng(1).split(std::uint64_t{1}).next_u64());
}

TEST(Rng, UniformIndexCoversRange) {
  Rng r(7);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto k = r.uniform_index(5);
    ASSERT_LT(k, 5u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 5u);
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  // 5 sigma of the sample-mean and sample-variance estimators.
  EXPECT_NEAR(sum / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(sq / n, 1.0, 5.0 * std::sqrt(2.0 / n));
}

TEST(Ops, SoftmaxMatchesOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Mat x = randn(3, 4, s, 3.0);
    EXPECT_LE((softmax_rows(x) - test::softmax_oracle(x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Ops, SoftmaxLargeLogitsStayFinite) {
  Mat x(1, 3);
  x << 1000.0, 999.0, -1000.0;
  const Mat y = softmax_rows(x);
  EXPECT_TRUE(y.allFinite());
  EXPECT_NEAR(y(0, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_EQ(y(0, 2), 0.0);
}

TEST(Ops, UniformScoresAverageValues) {
  // Equal keys: every query sees the mean of v.
  const Mat q = randn(2, 3, 1);
  const Mat k = Mat::Ones(4, 3);
  const Mat v = randn(4, 2, 2);
  const Mat out = scaled_dot_attention(q, k, v);
  for (Eigen::Index i = 0; i < 2; ++i) {
    EXPECT_NEAR((out.row(i) - v.colwise().mean()).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  }
}

TEST(Ops, AttentionMatchesOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Mat q = randn(4, 3, s), k = randn(4, 3, s + 100), v = randn(4, 2, s + 200);
    EXPECT_LE((scaled_dot_attention(q, k, v) - test::attention_oracle(q, k, v)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Ops, ShapeErrors) {
  EXPECT_THROW(matmul<double>(Mat::Zero(2, 3), Mat::Zero(2, 3)), ShapeError);
  EXPECT_THROW(scaled_dot_attention<double>(Mat::Zero(2, 3), Mat::Zero(2, 4), Mat::Zero(2, 1)), ShapeError);
  EXPECT_THROW(scaled_dot_attention<double>(Mat::Zero(2, 3), Mat::Zero(2, 3), Mat::Zero(3, 1)), ShapeError);
}

TEST(Serialize, RoundTripBothDtypes) {
  const Mat m = randn(4, 3, 5);
  std::stringstream s;
  write_tensor(s, Tensor<double>::from_matrix(m));
  EXPECT_TRUE(bit_equal(read_tensor<double>(s).to_matrix(), m));

  Tensor<float> t({2, 3, 2});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.1f - 0.3f;
  std::stringstream f;
  write_tensor(f, t);
  const auto any = read_any_tensor(f);
  ASSERT_TRUE(std::holds_alternative<Tensor<float>>(any));
  EXPECT_EQ(std::get<Tensor<float>>(any), t);
}

TEST(Serialize, HeaderLayout) {
  std::stringstream s;
  write_tensor(s, Tensor<double>(Shape{2, 1}, {1.0, -2.0}));
  const std::string bytes = s.str();
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 2 + 2 * 8 + 2 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "MOCA");
  EXPECT_EQ(bytes[4], 1);  // version
  EXPECT_EQ(bytes[5], 1);  // f64
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);
}

TEST(Serialize, RejectsCorruptInput) {
  std::stringstream good;
  write_tensor(good, Tensor<double>::from_matrix(randn(2, 2, 1)));
  const std::string bytes = good.str();

  const auto reads = [](std::string b) {
    std::stringstream s(b);
    return read_any_tensor(s);
  };
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(reads(magic), FormatError);
  std::string version = bytes;
  version[4] = 9;
  EXPECT_THROW(reads(version), FormatError);
  std::string dtype = bytes;
  dtype[5] = 7;
  EXPECT_THROW(reads(dtype), FormatError);
  EXPECT_THROW(reads(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(reads(bytes.substr(0, 6)), FormatError);
  std::string huge = bytes;
  for (int i = 8; i < 16; ++i) huge[static_cast<std::size_t>(i)] = '\xff';
  EXPECT_THROW(reads(huge), FormatError);

  std::stringstream s(bytes);
  EXPECT_THROW(read_tensor<float>(s), FormatError);
}

TEST(Tape, HandDerivedGradients) {
  Tape<double> t;
  Mat xv(1, 2);
  xv << 3.0, -2.0;
  const auto x = t.variable(xv);
  // L = sum(x²) + 5 x0  ->  dL/dx = 2x + [5, 0]
  const auto loss = ad::add(ad::sum_squares(x), ad::scale(ad::element(x, 0, 0), 5.0));
  t.backward(loss);
  EXPECT_EQ(loss.value()(0, 0), 13.0 + 15.0);
  EXPECT_EQ(t.grad(x)(0, 0), 11.0);
  EXPECT_EQ(t.grad(x)(0, 1), -4.0);
}

TEST(Tape, FanOutAccumulates) {
  Tape<double> t;
  const auto x = t.variable(Mat::Constant(1, 1, 2.0));
  t.backward(ad::mul(x, x) + x);  // d/dx (x² + x) = 2x + 1
  EXPECT_EQ(t.grad(x)(0, 0), 5.0);
}

TEST(Tape, BackwardContract) {
  Tape<double> t;
  const auto x = t.variable(randn(2, 2, 1));
  EXPECT_THROW(t.backward(x), ShapeError);
  const auto c = t.constant(randn(2, 2, 2));
  t.backward(ad::sum_squares(ad::add(x, c)));
  EXPECT_EQ(t.grad(c).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(t.backward(ad::sum_squares(x)), std::logic_error);
}

TEST(Tape, OpGradientsMatchFiniteDifferences) {
  using V = Var<double>;
  const Mat x = randn(3, 4, 17);
  const Mat other = randn(3, 4, 18);
  const Mat right = randn(4, 2, 19);
  const Mat gain = randn(1, 4, 20);
  const std::vector<std::pair<const char*, std::function<V(const V&)>>> cases = {
      {"sub", [&](const V& a) { return ad::sub(a.tape().constant(other), a); }},
      {"mul", [&](const V& a) { return ad::mul(a, a.tape().constant(other)); }},
      {"scale_by", [&](const V& a) { return ad::scale_by(ad::element(a, 1, 1), a); }},
      {"matmul", [&](const V& a) { return ad::matmul(a, a.tape().constant(right)); }},
      {"transpose", [&](const V& a) { return ad::transpose(a); }},
      {"softmax", [&](const V& a) { return ad::softmax_rows(a); }},
      {"row_mean", [&](const V& a) { return ad::row_mean(a); }},
      {"add_row", [&](const V& a) { return ad::add_row(a.tape().constant(other), ad::slice_rows(a, 1, 1)); }},
      {"concat_rows", [&](const V& a) { return ad::concat_rows<double>({a, ad::slice_rows(a, 0, 2)}); }},
      {"concat_cols", [&](const V& a) { return ad::concat_cols<double>({ad::slice_cols(a, 2, 2), a}); }},
      {"sqrt", [&](const V& a) { return ad::sqrt_eps(ad::mul(a, a), 1e-3); }},
      {"silu", [&](const V& a) { return ad::silu(a); }},
      {"rms_norm", [&](const V& a) { return ad::rms_norm(a, a.tape().constant(gain)); }},
      {"rms_norm_gain", [&](const V& a) { return ad::rms_norm(a.tape().constant(other), ad::slice_rows(a, 0, 1)); }},
      {"attention", [&](const V& a) { return ad::scaled_dot_attention(a, ad::scale(a, 0.5), a.tape().constant(other)); }},
  };
  for (const auto& [name, f] : cases) {
    EXPECT_LE(test::op_grad_error(f, x), 1e-6) << name;
  }
}

TEST(Tape, ValuesMatchPlainOps) {
  Tape<double> t;
  const Mat q = randn(3, 4, 1), k = randn(5, 4, 2), v = randn(5, 2, 3);
  EXPECT_TRUE(bit_equal(ad::softmax_rows(t.constant(q)).value(), softmax_rows(q)));
  EXPECT_LE((ad::scaled_dot_attention(t.constant(q), t.constant(k), t.constant(v)).value() -
             scaled_dot_attention(q, k, v))
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
}

TEST(GradCheck, FiniteDifferenceOfQuadratic) {
  const Mat x = randn(2, 3, 4);
  const std::function<double(const Mat&)> f = [](const Mat& p) { return p.squaredNorm(); };
  EXPECT_LE((finite_diff_grad(f, x, 1e-5) - 2.0 * x).cwiseAbs().maxCoeff(), 1e-9);
  const std::function<double(const Mat&)> bad = [](const Mat& p) { return p(0, 0) > 0 ? NAN : 0.0; };
  EXPECT_THROW(finite_diff_grad<double>(bad, Mat(Mat::Zero(1, 1)), 1e-3), NumericError);
}

TEST(GradCheck, SignFlipIsDetected) {
  ParamSet<double> p;
  p.add("w", randn(4, 3, 6));
  const Mat x = randn(2, 4, 7);
  const std::function<Var<double>(const Bound<double>&)> loss = [&](const Bound<double>& b) {
    return ad::sum_squares(ad::softmax_rows(ad::matmul(b.tape().constant(x), b["w"])));
  };
  EXPECT_LE(check_param_gradients<double>(p, loss, 1e-5).front().max_rel_error, 1e-6);
  const auto flipped = check_param_gradients<double>(p, loss, 1e-5, [](Tape<double>& t) {
    t.inject_sign_flip(OpKind::Softmax);
  });
  EXPECT_GT(flipped.front().max_rel_error, 1.0);
}
