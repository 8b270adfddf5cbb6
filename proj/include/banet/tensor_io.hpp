#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "banet/tensor.hpp"

namespace banet {

// Raw tensor format: "BANT", u32 version, u32 rank (= 4), four u32 extents,
// then n*c*h*w float32 values. All integers and floats little-endian.
inline constexpr char kTensorMagic[4] = {'B', 'A', 'N', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);

template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

namespace io {
void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_f32(std::ostream& out, float v);
std::uint16_t read_u16(std::istream& in);
std::uint32_t read_u32(std::istream& in);
float read_f32(std::istream& in);
}  // namespace io

}  // namespace banet
