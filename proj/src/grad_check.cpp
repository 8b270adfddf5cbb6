#include "banet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "banet/rng.hpp"

namespace banet {
namespace {

double evaluate(const ScalarFunction& f, std::span<const Tensor<double>> inputs) {
  const Tensor<double> y = f(inputs);
  if (y.numel() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got " +
                     to_string(y.shape()));
  }
  const double v = y.item();
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: function returned a non-finite value");
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f,
                           std::span<const Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  Tape<double> tape;
  std::vector<Tensor<double>> watched;
  watched.reserve(inputs.size());
  for (const Tensor<double>& x : inputs) watched.push_back(tape.watch(x.detach()));
  const Tensor<double> y = f(watched);
  if (y.numel() != 1 || !std::isfinite(y.item())) {
    throw NumericError("grad_check: function must return a finite scalar");
  }
  tape.backward(y);

  // Perturbed copies share nothing with the caller's tensors.
  std::vector<Tensor<double>> probe;
  probe.reserve(inputs.size());
  for (const Tensor<double>& x : inputs) probe.push_back(x.detach().clone());

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::span<const double> analytic = tape.grad(watched[k]);
    const std::size_t n = probe[k].numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords != 0 && options.max_coords < n) {
      rng.shuffle(coords);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      double& xi = probe[k].mutable_data()[i];
      const double saved = xi;
      const double h = options.rel_step * (1.0 + std::abs(saved));
      xi = saved + h;
      const double up = evaluate(f, probe);
      xi = saved - h;
      const double down = evaluate(f, probe);
      xi = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      if (!std::isfinite(a)) {
        throw NumericError("grad_check: non-finite analytic gradient");
      }
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.coords_checked;
      if (result.coords_checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, double rel_step) {
  const Tensor<double> inputs[] = {x};
  GradCheckOptions options;
  options.rel_step = rel_step;
  return grad_check(
      [&f](std::span<const Tensor<double>> in) { return f(in[0]); }, inputs,
      options);
}

}  // namespace banet
