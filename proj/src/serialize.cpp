#include "moca/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace moca {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw FormatError(std::string("tensor file truncated while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <typename Scalar>
Tensor<Scalar> read_payload(std::istream& in, Shape shape) {
  const std::size_t count = shape_size(shape);
  std::vector<Scalar> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = get_le<Scalar>(in, "payload");
  return Tensor<Scalar>(std::move(shape), std::move(data));
}

// Bytes left in a seekable stream, or max() if unknown.
std::uint64_t remaining_bytes(std::istream& in) {
  const auto here = in.tellg();
  if (here < 0) return std::numeric_limits<std::uint64_t>::max();
  in.seekg(0, std::ios::end);
  const auto end = in.tellg();
  in.seekg(here);
  if (end < here) return 0;
  return static_cast<std::uint64_t>(end - here);
}

}  // namespace

template <typename Scalar>
void write_tensor(std::ostream& out, const Tensor<Scalar>& t) {
  if (t.rank() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor rank exceeds u16");
  out.write(kTensorMagic, 4);
  put_le<std::uint8_t>(out, kTensorVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<Scalar>()));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  for (Scalar v : t.data()) put_le<Scalar>(out, v);
  if (!out) throw FormatError("failed writing tensor");
}

AnyTensor read_any_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("tensor file truncated in magic");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("bad tensor magic");
  const auto version = get_le<std::uint8_t>(in, "version");
  if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const auto dtype = get_le<std::uint8_t>(in, "dtype");
  if (dtype > 1) throw FormatError("unknown dtype code " + std::to_string(dtype));
  const auto rank = get_le<std::uint16_t>(in, "rank");
  const std::size_t elem = dtype == 0 ? sizeof(float) : sizeof(double);

  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    const auto dim = get_le<std::uint64_t>(in, "dims");
    if (dim != 0 && count > std::numeric_limits<std::uint64_t>::max() / elem / dim) {
      throw FormatError("tensor dimensions overflow");
    }
    count *= dim;
    d = static_cast<std::size_t>(dim);
  }
  if (count * elem > remaining_bytes(in)) throw FormatError("tensor file truncated in payload");

  if (dtype == 0) return read_payload<float>(in, std::move(shape));
  return read_payload<double>(in, std::move(shape));
}

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& in) {
  AnyTensor any = read_any_tensor(in);
  if (auto* t = std::get_if<Tensor<Scalar>>(&any)) return std::move(*t);
  throw FormatError("tensor dtype does not match the requested precision");
}

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

AnyTensor load_any_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_any_tensor(in);
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor<Scalar>(in);
}

template void write_tensor<float>(std::ostream&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(std::istream&);
template Tensor<double> read_tensor<double>(std::istream&);
template void save_tensor<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::filesystem::path&);
template Tensor<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace moca
