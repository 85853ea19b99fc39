#include <gtest/gtest.h>

#include <fstream>

#include "moca/checkpoint.hpp"
#include "moca/harness/config.hpp"
#include "moca/harness/report.hpp"
#include "moca/harness/synthetic.hpp"
#include "moca/harness/training.hpp"
#include "support.hpp"

using namespace moca;
using namespace moca::harness;
using moca::test::Mat;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("moca-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, PresetsValidate) {
  for (const auto& c : {RunConfig::micro(), RunConfig::toy(), RunConfig::ablation()}) EXPECT_NO_THROW(c.validate());
  const auto m = RunConfig::micro().model;
  EXPECT_EQ(m.depth, 1);
  EXPECT_EQ(m.width, 8);
  EXPECT_EQ(m.frames, 2);
  EXPECT_EQ(m.spatial(), 2);
  EXPECT_EQ(m.pool_sizes, (std::vector<Eigen::Index>{1, 2}));
  EXPECT_EQ(m.id_tokens, 2);
  EXPECT_EQ(m.text_tokens, 2);
  const auto t = RunConfig::toy();
  EXPECT_EQ(t.model.depth, 2);
  EXPECT_EQ(t.model.width, 16);
  EXPECT_EQ(t.model.frames, 4);
  EXPECT_EQ(t.model.spatial(), 4);
  EXPECT_EQ(t.model.pool_sizes, (std::vector<Eigen::Index>{2, 4}));  // [2,4,8] without p > F
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = RunConfig::toy();
  c.seed = 9;
  c.model.pool_sizes = {1, 3};
  c.lr = 0.25;
  c.precision = Precision::F32;
  const RunConfig back = config_from_json(to_json(c), RunConfig::micro());
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, PartialOverridesKeepBase) {
  const RunConfig c = config_from_json(json::parse(R"({"seed": 4, "model": {"frames": 8}})"), RunConfig::toy());
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.model.frames, 8);
  EXPECT_EQ(c.model.width, RunConfig::toy().model.width);
}

TEST(Config, StrictParsing) {
  EXPECT_THROW(config_from_json(json::parse(R"({"sed": 4})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"model": {"widht": 4}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"lr": "fast"})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"([1, 2])")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"precision": "f16"})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"model": {"pool_sizes": [4, 2], "experts": 2}})")), ConfigError);
  EXPECT_THROW(config_from_json(json::parse(R"({"loss": {"alpha": -1}})")), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ShippedFilesMatchPresets) {
  const fs::path dir = fs::path(MOCA_SOURCE_DIR) / "configs";
  EXPECT_EQ(to_json(load_config(dir / "micro.json")), to_json(RunConfig::micro()));
  EXPECT_EQ(to_json(load_config(dir / "toy.json")), to_json(RunConfig::toy()));
  EXPECT_EQ(to_json(load_config(dir / "ablation.json")), to_json(RunConfig::ablation()));
}

TEST(Report, StatusIsConjunction) {
  Report r("invariants", json::object());
  r.at_most("a", 1e-13, 1e-12);
  r.expect("b", true);
  EXPECT_TRUE(r.passed());
  r.at_most("c", NAN, 1.0);
  EXPECT_FALSE(r.passed());
  EXPECT_EQ(r.to_json()["status"], "fail");
  EXPECT_EQ(r.to_json()["checks"][2]["measured"], "nan");
  EXPECT_THROW(r.expect("a", true), std::logic_error);
}

TEST(Report, ContentHashIgnoresTiming) {
  const auto make = [](double wall) {
    Report r("dump", to_json(RunConfig::toy()));
    r.at_most("x", 0.5, 1.0, "detail");
    r.extra()["rows"] = {1, 2};
    r.set_wall_time(wall);
    return r;
  };
  EXPECT_EQ(make(1.0).content_hash(), make(7.0).content_hash());
  Report other = make(1.0);
  other.extra()["rows"] = {1, 3};
  EXPECT_NE(other.content_hash(), make(1.0).content_hash());
  const json j = make(2.0).to_json();
  EXPECT_EQ(j["content_hash"], make(1.0).content_hash());
  EXPECT_EQ(j["config"], to_json(RunConfig::toy()));
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto cfg = RunConfig::toy().model;
  const auto a = gen_synthetic_batch<double>(cfg, 3, Rng(5));
  const auto b = gen_synthetic_batch<double>(cfg, 3, Rng(5));
  const auto c = gen_synthetic_batch<double>(cfg, 3, Rng(6));
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(bit_equal(a[i].z0, b[i].z0));
    EXPECT_TRUE(bit_equal(a[i].text, b[i].text));
    EXPECT_TRUE(bit_equal(a[i].reference, b[i].reference));
    EXPECT_EQ(a[i].pixel_mask, b[i].pixel_mask);
    EXPECT_TRUE(bit_equal(a[i].latent_mask, b[i].latent_mask));
  }
  EXPECT_FALSE(bit_equal(a[0].z0, c[0].z0));
}

TEST(Synthetic, ShapesAndPool) {
  const auto cfg = RunConfig::toy().model;
  const auto s = gen_synthetic_batch<double>(cfg, 1, Rng(1)).front();
  EXPECT_EQ(s.z0.rows(), cfg.frames * cfg.spatial());
  EXPECT_EQ(s.z0.cols(), cfg.latent_channels);
  EXPECT_EQ(s.text.rows(), cfg.text_tokens);
  EXPECT_EQ(s.text.cols(), cfg.width);
  EXPECT_EQ(s.reference.rows(), cfg.spatial());
  EXPECT_EQ(s.identity.identity.cols(), cfg.identity_dim);
  EXPECT_EQ(s.identity.pool.size(), kFacePoolSize);
  EXPECT_EQ(s.pixel_mask.shape(), (Shape{static_cast<std::size_t>(cfg.frames),
                                         static_cast<std::size_t>(cfg.grid_h * kPixelsPerCell),
                                         static_cast<std::size_t>(cfg.grid_w * kPixelsPerCell)}));
  EXPECT_TRUE(bit_equal(s.latent_mask, interpolate_mask(s.pixel_mask, cfg.grid_h, cfg.grid_w)));
  bool in_pool = false;
  for (const auto& e : s.identity.pool.entries) in_pool = in_pool || bit_equal(e, s.reference);
  EXPECT_TRUE(in_pool);
}

TEST(Synthetic, MasksAreRectanglesWithBoundedCoverage) {
  const auto cfg = RunConfig::toy().model;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = gen_synthetic_batch<double>(cfg, 1, Rng(seed)).front();
    const auto& m = s.pixel_mask;
    const std::size_t H = m.shape()[1], W = m.shape()[2];
    for (std::size_t f = 0; f < m.shape()[0]; ++f) {
      const double cov = mask_coverage(m, f);
      ASSERT_GE(cov, kMinMaskCoverage) << seed;
      ASSERT_LE(cov, kMaxMaskCoverage) << seed;
      std::size_t y0 = H, y1 = 0, x0 = W, x1 = 0, ones = 0;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          if (m.at({f, y, x}) == 1.0) {
            y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
            ++ones;
          }
      ASSERT_EQ(ones, (y1 - y0 + 1) * (x1 - x0 + 1)) << "mask is not a filled rectangle";
      double latent = 0;
      for (Eigen::Index k = 0; k < cfg.spatial(); ++k) latent += s.latent_mask(static_cast<Eigen::Index>(f) * cfg.spatial() + k, 0);
      ASSERT_GE(latent, 1.0) << "face box misses every latent cell";
    }
  }
}

TEST(Synthetic, AttachNoiseDrawsValidTimesteps) {
  const auto cfg = RunConfig::toy().model;
  const auto sched = make_schedule(50, 1e-4, 0.02);
  const auto samples = attach_noise(gen_synthetic_batch<double>(cfg, 20, Rng(1)), sched, Rng(2));
  for (const auto& s : samples) {
    EXPECT_GE(s.t, 1);
    EXPECT_LE(s.t, 50);
    EXPECT_EQ(s.eps.rows(), s.z0.rows());
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch("ckpt");
  const auto cfg = RunConfig::micro();
  const auto params = init_dit<double>(cfg.model);
  save_checkpoint(dir, params, to_json(cfg));
  json echoed;
  const auto back = load_checkpoint<double>(dir, &echoed);
  EXPECT_EQ(echoed, to_json(cfg));
  ASSERT_EQ(back.size(), params.size());
  for (const auto& [name, m] : params) EXPECT_TRUE(bit_equal(back.at(name), m)) << name;
  EXPECT_THROW(load_checkpoint<float>(dir), FormatError);

  const auto f32 = params.cast<float>();
  save_checkpoint(dir / "f32", f32, to_json(cfg));
  for (const auto& [name, m] : f32) EXPECT_TRUE(bit_equal(load_checkpoint<float>(dir / "f32").at(name), m));
}

TEST(Checkpoint, DetectsTampering) {
  const fs::path dir = scratch("tamper");
  ParamSet<double> p;
  p.add("w", test::randn(2, 2, 1));
  save_checkpoint(dir, p, json::object());
  {
    std::fstream f(dir / "w.moca", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-1, std::ios::end);
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint<double>(dir), FormatError);
  EXPECT_THROW(load_checkpoint<double>(scratch("empty")), FormatError);
}

TEST(Checkpoint, MocaLayerManifest) {
  const fs::path dir = scratch("layer");
  const auto cfg = RunConfig::toy().model;
  const auto params = init_dit<double>(cfg);
  save_moca_params(dir, params, "block1.moca.", cfg.moca());
  MocaConfig back_cfg;
  const auto back = load_moca_params<double>(dir, &back_cfg);
  EXPECT_EQ(back_cfg.pool_sizes, cfg.pool_sizes);
  EXPECT_EQ(back_cfg.attn_width, cfg.attn_width);
  EXPECT_TRUE(bit_equal(back.at("router"), params.at("block1.moca.router")));
  std::ifstream in(dir / "manifest.json");
  const json manifest = json::parse(in);
  EXPECT_EQ(manifest["C"], 2);
  EXPECT_EQ(manifest["d_attn"], cfg.attn_width);
}

TEST(Checkpoint, IdentityFixture) {
  const fs::path dir = scratch("identity");
  const auto s = gen_synthetic_batch<double>(RunConfig::toy().model, 1, Rng(3)).front();
  IdentityFixture<double> fx{s.identity.identity_id, 3, s.identity.identity, s.identity.pool};
  save_identity_fixture(dir, fx);
  const auto back = load_identity_fixture<double>(dir);
  EXPECT_EQ(back.identity_id, fx.identity_id);
  EXPECT_EQ(back.seed, 3u);
  EXPECT_TRUE(bit_equal(back.identity, fx.identity));
  ASSERT_EQ(back.pool.size(), kFacePoolSize);
  for (std::size_t i = 0; i < kFacePoolSize; ++i) {
    EXPECT_TRUE(bit_equal(back.pool.entries[i], fx.pool.entries[i]));
    EXPECT_EQ(back.pool.source_frames[i], fx.pool.source_frames[i]);
  }
}

TEST(Training, StepLogShape) {
  StepLog s;
  s.t = {3};
  s.w = {0.5};
  EXPECT_TRUE(s.to_json()["t"].is_number());
  s.t = {3, 4};
  s.w = {0.5, 0.25};
  EXPECT_TRUE(s.to_json()["w"].is_array());
  for (const char* k : {"step", "t", "L_diff", "L_face", "L_back", "L_p", "L", "w"}) EXPECT_TRUE(s.to_json().contains(k));
}
