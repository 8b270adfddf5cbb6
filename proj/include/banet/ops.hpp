#pragma once

#include <span>
#include <vector>

#include "banet/tensor.hpp"

// Differentiable operations. Each op runs its forward pass eagerly; when any
// input is recorded on a tape the result is recorded on the same tape.

namespace banet::ops {

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

/// Output extent of a convolution or pooling window along one axis.
int conv_out_extent(int in, int kernel, int stride, int padding, int dilation);

/// Cross-correlation, zero padding. `bias` may be empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dParams p);

/// Mean over each k x k window; the divisor is always k*k, padded zeros
/// included.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int k, int stride, int padding);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

/// Half-pixel-centre bilinear resampling with edge clamping.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int out_h, int out_w);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// s - a
template <typename T>
Tensor<T> scalar_rsub(T s, const Tensor<T>& a);
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> concat_channels(std::initializer_list<Tensor<T>> parts) {
  std::vector<Tensor<T>> v(parts);
  return concat_channels<T>(std::span<const Tensor<T>>(v));
}
/// Sum of all elements, as a [1,1,1,1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy of sigmoid(logits) against a {0,1} target.
/// Probabilities are clamped to [eps, 1 - eps]; clamped elements carry no
/// gradient.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& target);

}  // namespace banet::ops
