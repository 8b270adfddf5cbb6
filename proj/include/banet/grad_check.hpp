#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "banet/tensor.hpp"

namespace banet {

/// Maps a list of 64-bit inputs to a scalar. The function must build its
/// result only from the tensors it is given so that it can be replayed on
/// perturbed copies.
using ScalarFunction =
    std::function<Tensor<double>(std::span<const Tensor<double>>)>;

struct GradCheckOptions {
  /// Per-coordinate step is rel_step * (1 + |x_i|).
  double rel_step = 1e-6;
  /// Coordinates probed per input; 0 probes every coordinate, otherwise a
  /// seeded random subset of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares tape gradients of `f` with central finite differences. The error
/// of one coordinate is |a - n| / max(1, |a|, |n|).
GradCheckResult grad_check(const ScalarFunction& f,
                           std::span<const Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

GradCheckResult grad_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, double rel_step = 1e-6);

}  // namespace banet
