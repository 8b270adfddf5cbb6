#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "banet/ops.hpp"
#include "banet/parameters.hpp"

namespace banet {

/// Static description of one convolution layer. Its parameters are stored
/// as "<name>.weight" [out, in, k, k] and "<name>.bias" [1, out, 1, 1].
struct ConvSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  bool operator==(const ConvSpec&) const = default;
};

/// Registry of every convolution in a model, in creation order. Doubles as
/// the introspection dump of the architecture.
class ModelLayout {
 public:
  const ConvSpec& add(ConvSpec spec);
  bool contains(const std::string& name) const { return index_.contains(name); }
  const ConvSpec& conv(const std::string& name) const;
  const std::vector<ConvSpec>& convs() const { return convs_; }
  std::size_t parameter_count() const;

 private:
  std::vector<ConvSpec> convs_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Weight draw for init_parameters; fan_in = in * k * k, biases are zero.
///   fan_in:  U(-sqrt(1/fan_in), +sqrt(1/fan_in))
///   he:      U(-sqrt(6/fan_in), +sqrt(6/fan_in)), unit gain through ReLU
enum class InitScheme { fan_in, he };

InitScheme parse_init_scheme(std::string_view text);
std::string_view to_string(InitScheme s);

template <typename T>
ParameterStore<T> init_parameters(const ModelLayout& layout, std::uint64_t seed,
                                  InitScheme scheme = InitScheme::he);

/// Every parameter set to zero.
template <typename T>
ParameterStore<T> zero_parameters(const ModelLayout& layout);

/// Parameters plus an optional tape: the environment a forward pass runs
/// in. With a tape, parameters are watched so backward() reaches them.
template <typename T>
class LayerContext {
 public:
  LayerContext(const ModelLayout& layout, const ParameterStore<T>& params,
               Tape<T>* tape)
      : layout_(layout), params_(params), tape_(tape) {}

  Tensor<T> param(const std::string& name) const;
  Tensor<T> conv(const std::string& name, const Tensor<T>& x) const;
  bool has_layer(const std::string& name) const { return layout_.contains(name); }

  const ModelLayout& layout() const { return layout_; }
  const ParameterStore<T>& params() const { return params_; }
  Tape<T>* tape() const { return tape_; }

 private:
  const ModelLayout& layout_;
  const ParameterStore<T>& params_;
  Tape<T>* tape_;
};

}  // namespace banet
