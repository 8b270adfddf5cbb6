#include "banet/parameters.hpp"

#include <cstring>
#include <fstream>

#include "banet/tensor_io.hpp"

namespace banet {

template <typename T>
void ParameterStore<T>::add(std::string name, Tensor<T> t) {
  if (contains(name)) throw ShapeError("duplicate parameter name '" + name + "'");
  t.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(t));
}

template <typename T>
const Tensor<T>& ParameterStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
ParameterStore<T> ParameterStore<T>::clone() const {
  ParameterStore out;
  for (const auto& [name, t] : entries_) out.add(name, t.detach().clone());
  return out;
}

template <typename T>
void ParameterStore<T>::assign_from(const ParameterStore& other) {
  std::string problems;
  auto note = [&problems](const std::string& msg) {
    problems += problems.empty() ? msg : "; " + msg;
  };
  for (const auto& [name, t] : entries_) {
    if (!other.contains(name)) {
      note("missing '" + name + "'");
    } else if (!(other.at(name).shape() == t.shape())) {
      note("'" + name + "' has shape " + to_string(other.at(name).shape()) +
           ", expected " + to_string(t.shape()));
    }
  }
  for (const auto& [name, t] : other.entries_) {
    if (!contains(name)) note("unexpected '" + name + "'");
  }
  if (!problems.empty()) {
    throw ShapeError("parameter mismatch: " + problems);
  }
  for (auto& [name, t] : entries_) {
    const auto src = other.at(name).data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

template <typename To, typename From>
ParameterStore<To> convert(const ParameterStore<From>& src) {
  ParameterStore<To> out;
  for (const auto& [name, t] : src) {
    std::vector<To> values(t.data().begin(), t.data().end());
    out.add(name, Tensor<To>(t.shape(), std::move(values)));
  }
  return out;
}

template <typename T>
void write_checkpoint(std::ostream& out, const ParameterStore<T>& params) {
  out.write(kCheckpointMagic, 4);
  io::write_u32(out, kCheckpointVersion);
  io::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xffff) throw DataError("parameter name too long: " + name);
    io::write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
  if (!out) throw DataError("failed to write checkpoint");
}

template <typename T>
ParameterStore<T> read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("bad checkpoint magic (expected BANC)");
  }
  const std::uint32_t version = io::read_u32(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = io::read_u32(in);
  ParameterStore<T> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = io::read_u16(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != len) throw DataError("truncated checkpoint name table");
    params.add(std::move(name), read_tensor<T>(in));
  }
  return params;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path,
                     const ParameterStore<T>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
}

template <typename T>
ParameterStore<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint<T>(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template ParameterStore<float> convert(const ParameterStore<double>&);
template ParameterStore<double> convert(const ParameterStore<float>&);
template ParameterStore<float> convert(const ParameterStore<float>&);
template ParameterStore<double> convert(const ParameterStore<double>&);
template void write_checkpoint(std::ostream&, const ParameterStore<float>&);
template void write_checkpoint(std::ostream&, const ParameterStore<double>&);
template ParameterStore<float> read_checkpoint(std::istream&);
template ParameterStore<double> read_checkpoint(std::istream&);
template void save_checkpoint(const std::filesystem::path&, const ParameterStore<float>&);
template void save_checkpoint(const std::filesystem::path&, const ParameterStore<double>&);
template ParameterStore<float> load_checkpoint(const std::filesystem::path&);
template ParameterStore<double> load_checkpoint(const std::filesystem::path&);

}  // namespace banet
