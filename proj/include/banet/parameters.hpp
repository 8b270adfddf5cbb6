#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "banet/tensor.hpp"

namespace banet {

/// Ordered, named collection of trainable tensors.
template <typename T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  /// Registers `t` as a trainable leaf. Names must be unique.
  void add(std::string name, Tensor<T> t);

  bool contains(const std::string& name) const {
    return index_.contains(name);
  }
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  void zero_grad();
  /// Deep copy with fresh grad buffers.
  ParameterStore clone() const;
  /// Copies values from `other` after checking that names and shapes agree.
  /// Throws ShapeError listing every offending name.
  void assign_from(const ParameterStore& other);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename To, typename From>
ParameterStore<To> convert(const ParameterStore<From>& src);

// Checkpoint format: "BANC", u32 version, u32 tensor count, then per tensor
// a u16 name length, the UTF-8 name, and the raw tensor record.
inline constexpr char kCheckpointMagic[4] = {'B', 'A', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_checkpoint(std::ostream& out, const ParameterStore<T>& params);
template <typename T>
ParameterStore<T> read_checkpoint(std::istream& in);
template <typename T>
void save_checkpoint(const std::filesystem::path& path,
                     const ParameterStore<T>& params);
template <typename T>
ParameterStore<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace banet
