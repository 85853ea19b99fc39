#include "moca/harness/config.hpp"

#include <fstream>
#include <set>

namespace moca::harness {

using nlohmann::json;

RunConfig RunConfig::micro() {
  RunConfig c;
  c.model.depth = 1;
  c.model.width = 8;
  c.model.heads = 1;
  c.model.frames = 2;
  c.model.grid_h = 1;
  c.model.grid_w = 2;
  c.model.latent_channels = 2;
  c.model.text_tokens = 2;
  c.model.experts = 2;
  c.model.pool_sizes = {1, 2};
  c.model.attn_width = 8;
  c.model.id_tokens = 2;
  c.model.identity_dim = 4;
  c.model.encoder_width = 4;
  c.model.image_tokens = 2;
  c.model.face_tokens = 1;
  c.model.mlp_ratio = 2;
  c.schedule = {50, 1e-4, 0.02};
  c.train_steps = 50;
  c.batch_size = 2;
  return c;
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.model.depth = 2;
  c.model.width = 16;
  c.model.frames = 4;
  c.model.grid_h = 2;
  c.model.grid_w = 2;
  c.model.latent_channels = 4;
  c.model.text_tokens = 4;
  c.model.experts = 2;
  c.model.pool_sizes = {2, 4};
  c.model.attn_width = 16;
  c.model.id_tokens = 8;
  c.schedule = {50, 1e-4, 0.02};
  c.lr = 1e-3;
  c.train_steps = 300;
  c.batch_size = 1;
  return c;
}

RunConfig RunConfig::ablation() {
  RunConfig c = toy();
  c.model.depth = 1;
  c.model.width = 8;
  c.model.frames = 16;
  c.model.grid_h = 1;
  c.model.grid_w = 2;
  c.model.latent_channels = 2;
  c.model.text_tokens = 2;
  c.model.experts = 3;
  c.model.pool_sizes = {2, 4, 8};
  c.model.attn_width = 8;
  c.model.id_tokens = 4;
  c.model.identity_dim = 4;
  c.model.encoder_width = 8;
  c.model.image_tokens = 2;
  c.model.face_tokens = 1;
  c.model.mlp_ratio = 2;
  c.train_steps = 60;
  return c;
}

void RunConfig::validate() const {
  model.validate();
  make_schedule(schedule.steps, schedule.beta_start, schedule.beta_end);
  loss.validate();
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (train_steps < 0) throw ConfigError("train_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (out_dir.empty()) throw ConfigError("out_dir must be non-empty");
}

std::string precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

json to_json(const ModelConfig& m) {
  return {{"depth", m.depth},
          {"width", m.width},
          {"heads", m.heads},
          {"frames", m.frames},
          {"grid_h", m.grid_h},
          {"grid_w", m.grid_w},
          {"latent_channels", m.latent_channels},
          {"text_tokens", m.text_tokens},
          {"experts", m.experts},
          {"pool_sizes", m.pool_sizes},
          {"attn_width", m.attn_width},
          {"id_tokens", m.id_tokens},
          {"identity_dim", m.identity_dim},
          {"encoder_width", m.encoder_width},
          {"image_tokens", m.image_tokens},
          {"face_tokens", m.face_tokens},
          {"mlp_ratio", m.mlp_ratio},
          {"seed", m.seed}};
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"schedule", {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
          {"loss", {{"alpha", c.loss.alpha}, {"beta", c.loss.beta}}},
          {"lr", c.lr},
          {"train_steps", c.train_steps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"precision", precision_name(c.precision)},
          {"out_dir", c.out_dir}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

}  // namespace

RunConfig config_from_json(const json& j, const RunConfig& base) {
  RunConfig c = base;
  reject_unknown(j, {"model", "schedule", "loss", "lr", "train_steps", "batch_size", "seed", "precision", "out_dir"}, "");
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m,
                   {"depth", "width", "heads", "frames", "grid_h", "grid_w", "latent_channels", "text_tokens",
                    "experts", "pool_sizes", "attn_width", "id_tokens", "identity_dim", "encoder_width",
                    "image_tokens", "face_tokens", "mlp_ratio", "seed"},
                   "model.");
    auto& mc = c.model;
    const std::string w = "model.";
    read(m, "depth", mc.depth, w);
    read(m, "width", mc.width, w);
    read(m, "heads", mc.heads, w);
    read(m, "frames", mc.frames, w);
    read(m, "grid_h", mc.grid_h, w);
    read(m, "grid_w", mc.grid_w, w);
    read(m, "latent_channels", mc.latent_channels, w);
    read(m, "text_tokens", mc.text_tokens, w);
    read(m, "experts", mc.experts, w);
    read(m, "pool_sizes", mc.pool_sizes, w);
    read(m, "attn_width", mc.attn_width, w);
    read(m, "id_tokens", mc.id_tokens, w);
    read(m, "identity_dim", mc.identity_dim, w);
    read(m, "encoder_width", mc.encoder_width, w);
    read(m, "image_tokens", mc.image_tokens, w);
    read(m, "face_tokens", mc.face_tokens, w);
    read(m, "mlp_ratio", mc.mlp_ratio, w);
    read(m, "seed", mc.seed, w);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, {"steps", "beta_start", "beta_end"}, "schedule.");
    read(s, "steps", c.schedule.steps, "schedule.");
    read(s, "beta_start", c.schedule.beta_start, "schedule.");
    read(s, "beta_end", c.schedule.beta_end, "schedule.");
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"alpha", "beta"}, "loss.");
    read(l, "alpha", c.loss.alpha, "loss.");
    read(l, "beta", c.loss.beta, "loss.");
  }
  read(j, "lr", c.lr, "");
  read(j, "train_steps", c.train_steps, "");
  read(j, "batch_size", c.batch_size, "");
  read(j, "seed", c.seed, "");
  read(j, "out_dir", c.out_dir, "");
  if (j.contains("precision")) {
    std::string p;
    read(j, "precision", p, "");
    c.precision = parse_precision(p);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j, base);
}

}  // namespace moca::harness
