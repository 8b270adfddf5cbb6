#include "banet/layers.hpp"

#include <cmath>

#include "banet/rng.hpp"

namespace banet {

InitScheme parse_init_scheme(std::string_view text) {
  if (text == "fan_in") return InitScheme::fan_in;
  if (text == "he") return InitScheme::he;
  throw ConfigError("unknown init scheme '" + std::string(text) +
                    "' (expected fan_in or he)");
}

std::string_view to_string(InitScheme s) {
  return s == InitScheme::he ? "he" : "fan_in";
}

const ConvSpec& ModelLayout::add(ConvSpec spec) {
  if (contains(spec.name)) {
    throw ShapeError("duplicate layer name '" + spec.name + "'");
  }
  if (spec.in_channels <= 0 || spec.out_channels <= 0 || spec.kernel % 2 == 0) {
    throw ShapeError("invalid layer '" + spec.name + "'");
  }
  index_.emplace(spec.name, convs_.size());
  convs_.push_back(std::move(spec));
  return convs_.back();
}

const ConvSpec& ModelLayout::conv(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown layer '" + name + "'");
  return convs_[it->second];
}

std::size_t ModelLayout::parameter_count() const {
  std::size_t n = 0;
  for (const ConvSpec& c : convs_) {
    n += static_cast<std::size_t>(c.out_channels) * c.in_channels * c.kernel *
             c.kernel +
         c.out_channels;
  }
  return n;
}

template <typename T>
ParameterStore<T> init_parameters(const ModelLayout& layout, std::uint64_t seed,
                                  InitScheme scheme) {
  ParameterStore<T> params;
  Rng rng(seed);
  const double numerator = scheme == InitScheme::he ? 6.0 : 1.0;
  for (const ConvSpec& c : layout.convs()) {
    const Shape ws{c.out_channels, c.in_channels, c.kernel, c.kernel};
    const double bound =
        std::sqrt(numerator / (c.in_channels * c.kernel * c.kernel));
    std::vector<T> w(ws.numel());
    for (T& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    params.add(c.name + ".weight", Tensor<T>(ws, std::move(w)));
    params.add(c.name + ".bias", Tensor<T>(Shape{1, c.out_channels, 1, 1}));
  }
  return params;
}

template <typename T>
ParameterStore<T> zero_parameters(const ModelLayout& layout) {
  ParameterStore<T> params;
  for (const ConvSpec& c : layout.convs()) {
    params.add(c.name + ".weight",
               Tensor<T>(Shape{c.out_channels, c.in_channels, c.kernel, c.kernel}));
    params.add(c.name + ".bias", Tensor<T>(Shape{1, c.out_channels, 1, 1}));
  }
  return params;
}

template <typename T>
Tensor<T> LayerContext<T>::param(const std::string& name) const {
  const Tensor<T>& p = params_.at(name);
  return tape_ != nullptr ? tape_->watch(p, name) : p;
}

template <typename T>
Tensor<T> LayerContext<T>::conv(const std::string& name, const Tensor<T>& x) const {
  const ConvSpec& c = layout_.conv(name);
  return ops::conv2d(x, param(name + ".weight"), param(name + ".bias"),
                     ops::Conv2dParams{c.stride, c.padding, c.dilation});
}

template ParameterStore<float> init_parameters(const ModelLayout&, std::uint64_t,
                                               InitScheme);
template ParameterStore<double> init_parameters(const ModelLayout&, std::uint64_t,
                                                InitScheme);
template ParameterStore<float> zero_parameters(const ModelLayout&);
template ParameterStore<double> zero_parameters(const ModelLayout&);
template class LayerContext<float>;
template class LayerContext<double>;

}  // namespace banet
