#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>

#include "banet/rng.hpp"
#include "banet/tensor.hpp"

namespace banet::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T = double>
Tensor<T> random_mask(Shape shape, Rng& rng, double p = 0.5) {
  Tensor<T> t(shape);
  for (T& v : t.mutable_data()) v = rng.bernoulli(p) ? T(1) : T(0);
  return t;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>>(
            a.data()[i]) !=
        std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>>(
            b.data()[i])) {
      return false;
    }
  }
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  }
  return m;
}

}  // namespace banet::testing
