#pragma once

#include <filesystem>
#include <iosfwd>
#include <variant>

#include "moca/tensor.hpp"

namespace moca {

/// Tensor file layout (little-endian, no padding):
///   "MOCA" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u16 rank | rank x u64 dims | payload
inline constexpr char kTensorMagic[4] = {'M', 'O', 'C', 'A'};
inline constexpr std::uint8_t kTensorVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

template <typename Scalar>
void write_tensor(std::ostream& out, const Tensor<Scalar>& t);

AnyTensor read_any_tensor(std::istream& in);

/// Reads a tensor and requires its stored dtype to be `Scalar`.
template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& in);

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t);

AnyTensor load_any_tensor(const std::filesystem::path& path);

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path);

}  // namespace moca
