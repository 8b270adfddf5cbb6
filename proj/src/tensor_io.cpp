#include "banet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace banet {
namespace io {

void write_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void write_f32(std::ostream& out, float v) {
  write_u32(out, std::bit_cast<std::uint32_t>(v));
}

namespace {
void read_exact(std::istream& in, unsigned char* dst, std::size_t n) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw DataError("unexpected end of file");
  }
}
}  // namespace

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  read_exact(in, b, 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

}  // namespace io

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  out.write(kTensorMagic, 4);
  io::write_u32(out, kTensorVersion);
  io::write_u32(out, 4);
  const Shape& s = t.shape();
  for (int e : {s.n, s.c, s.h, s.w}) io::write_u32(out, static_cast<std::uint32_t>(e));
  for (T v : t.data()) io::write_f32(out, static_cast<float>(v));
  if (!out) throw DataError("failed to write tensor");
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw DataError("bad tensor magic (expected BANT)");
  }
  const std::uint32_t version = io::read_u32(in);
  if (version != kTensorVersion) {
    throw DataError("unsupported tensor version " + std::to_string(version));
  }
  const std::uint32_t rank = io::read_u32(in);
  if (rank != 4) throw DataError("unsupported tensor rank " + std::to_string(rank));
  std::uint32_t ext[4];
  for (auto& e : ext) {
    e = io::read_u32(in);
    if (e > (1u << 24)) throw DataError("implausible tensor extent " + std::to_string(e));
  }
  const Shape shape{static_cast<int>(ext[0]), static_cast<int>(ext[1]),
                    static_cast<int>(ext[2]), static_cast<int>(ext[3])};
  std::vector<T> values(shape.numel());
  for (T& v : values) v = static_cast<T>(io::read_f32(in));
  return Tensor<T>(shape, std::move(values));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_tensor<T>(in);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace banet
