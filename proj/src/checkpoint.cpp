#include "moca/checkpoint.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace moca {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof(buf));
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

namespace {

template <typename Scalar>
const char* dtype_name() {
  return dtype_of<Scalar>() == DType::F32 ? "f32" : "f64";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// Writes each tensor as <name>.moca and returns {name: {file, sha256}}.
template <typename Scalar>
json write_tensors(const fs::path& dir, const std::map<std::string, Matrix<Scalar>>& tensors) {
  fs::create_directories(dir);
  json index = json::object();
  for (const auto& [name, m] : tensors) {
    const std::string file = name + ".moca";
    save_tensor(dir / file, Tensor<Scalar>::from_matrix(m));
    index[name] = {{"file", file}, {"sha256", sha256_file(dir / file)}};
  }
  return index;
}

template <typename Scalar>
std::map<std::string, Matrix<Scalar>> read_tensors(const fs::path& dir, const json& index) {
  std::map<std::string, Matrix<Scalar>> out;
  try {
    for (auto it = index.begin(); it != index.end(); ++it) {
      const std::string& name = it.key();
      const json& entry = it.value();
      const fs::path file = dir / entry.at("file").get<std::string>();
      if (sha256_file(file) != entry.at("sha256").get<std::string>()) {
        throw FormatError("hash mismatch for tensor '" + name + "'");
      }
      out.emplace(name, load_tensor<Scalar>(file).to_matrix());
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed tensor index: ") + e.what());
  }
  return out;
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const fs::path& dir, const ParamSet<Scalar>& params, const json& config) {
  std::map<std::string, Matrix<Scalar>> tensors(params.begin(), params.end());
  json manifest = {{"format", "moca-checkpoint"}, {"version", 1}, {"dtype", dtype_name<Scalar>()}, {"config", config}};
  manifest["tensors"] = write_tensors(dir, tensors);
  write_json(dir / "manifest.json", manifest);
}

template <typename Scalar>
ParamSet<Scalar> load_checkpoint(const fs::path& dir, json* config) {
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", "") != "moca-checkpoint") throw FormatError("not a checkpoint manifest");
  if (manifest.value("dtype", "") != dtype_name<Scalar>()) throw FormatError("checkpoint precision mismatch");
  if (!manifest.contains("tensors")) throw FormatError("checkpoint manifest lacks tensors");
  ParamSet<Scalar> params;
  for (auto& [name, m] : read_tensors<Scalar>(dir, manifest["tensors"])) params.add(name, std::move(m));
  if (config) *config = manifest.value("config", json::object());
  return params;
}

template <typename Scalar>
void save_moca_params(const fs::path& dir, const ParamSet<Scalar>& params, const std::string& prefix,
                      const MocaConfig& cfg) {
  std::map<std::string, Matrix<Scalar>> tensors;
  for (const auto& [name, m] : params) {
    if (name.rfind(prefix, 0) == 0) tensors.emplace(name.substr(prefix.size()), m);
  }
  if (tensors.empty()) throw ConfigError("no parameters under prefix '" + prefix + "'");
  json manifest = {{"C", cfg.experts()},
                   {"pool_sizes", cfg.pool_sizes},
                   {"d_attn", cfg.attn_width},
                   {"dtype", dtype_name<Scalar>()}};
  manifest["tensors"] = write_tensors(dir, tensors);
  write_json(dir / "manifest.json", manifest);
}

template <typename Scalar>
ParamSet<Scalar> load_moca_params(const fs::path& dir, MocaConfig* cfg) {
  const json manifest = read_json(dir / "manifest.json");
  ParamSet<Scalar> params;
  for (auto& [name, m] : read_tensors<Scalar>(dir, manifest.at("tensors"))) params.add(name, std::move(m));
  if (cfg) {
    try {
      cfg->pool_sizes = manifest.at("pool_sizes").get<std::vector<Eigen::Index>>();
      cfg->attn_width = manifest.at("d_attn").get<Eigen::Index>();
      if (manifest.at("C").get<Eigen::Index>() != cfg->experts()) throw FormatError("manifest C != len(pool_sizes)");
      const Matrix<Scalar>& wq = params.at("wq");
      cfg->width = wq.rows();
      cfg->id_width = params.at("branch0.wk").rows();
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed MoCA manifest: ") + e.what());
    }
  }
  return params;
}

template <typename Scalar>
void save_identity_fixture(const fs::path& dir, const IdentityFixture<Scalar>& fixture) {
  std::map<std::string, Matrix<Scalar>> tensors{{"identity", fixture.identity}};
  for (std::size_t i = 0; i < fixture.pool.size(); ++i) {
    tensors.emplace("pool" + std::to_string(i), fixture.pool.entries[i]);
  }
  json sidecar = {{"identity_id", fixture.identity_id},
                  {"seed", fixture.seed},
                  {"pool_size", fixture.pool.size()},
                  {"source_frames", fixture.pool.source_frames}};
  sidecar["tensors"] = write_tensors(dir, tensors);
  write_json(dir / "identity.json", sidecar);
}

template <typename Scalar>
IdentityFixture<Scalar> load_identity_fixture(const fs::path& dir) {
  const json sidecar = read_json(dir / "identity.json");
  IdentityFixture<Scalar> f;
  try {
    f.identity_id = sidecar.at("identity_id").get<std::uint64_t>();
    f.seed = sidecar.at("seed").get<std::uint64_t>();
    const auto n = sidecar.at("pool_size").get<std::size_t>();
    const auto frames = sidecar.at("source_frames").get<std::vector<std::size_t>>();
    auto tensors = read_tensors<Scalar>(dir, sidecar.at("tensors"));
    f.identity = tensors.at("identity");
    if (frames.size() != n) throw FormatError("identity fixture: source_frames length != pool_size");
    for (std::size_t i = 0; i < n; ++i) f.pool.add(tensors.at("pool" + std::to_string(i)), frames[i]);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed identity fixture: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw FormatError(std::string("identity fixture missing tensor: ") + e.what());
  }
  return f;
}

#define MOCA_INSTANTIATE(S)                                                                           \
  template void save_checkpoint<S>(const fs::path&, const ParamSet<S>&, const json&);                 \
  template ParamSet<S> load_checkpoint<S>(const fs::path&, json*);                                     \
  template void save_moca_params<S>(const fs::path&, const ParamSet<S>&, const std::string&,          \
                                    const MocaConfig&);                                               \
  template ParamSet<S> load_moca_params<S>(const fs::path&, MocaConfig*);                              \
  template void save_identity_fixture<S>(const fs::path&, const IdentityFixture<S>&);                 \
  template IdentityFixture<S> load_identity_fixture<S>(const fs::path&);

MOCA_INSTANTIATE(float)
MOCA_INSTANTIATE(double)

#undef MOCA_INSTANTIATE

}  // namespace moca
