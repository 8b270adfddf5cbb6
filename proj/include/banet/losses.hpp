#pragma once

#include <array>

#include "banet/heads.hpp"

namespace banet {

inline constexpr std::array<double, 4> kDefaultLambdas = {1.0, 1.0, 1.0, 1.0};

/// Joint objective L_D + sum_i lambda_i (L_{i,E} + L_{i,S}). `total` is the
/// differentiable scalar; the doubles are its recorded components.
template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double decoder_loss = 0.0;
  std::array<double, 4> stage_edge{};
  std::array<double, 4> stage_seg{};
  std::array<double, 4> lambdas = kDefaultLambdas;
  /// False when the mini-MTL heads are ablated and stage terms are dropped.
  bool has_stage_terms = false;

  double total_value() const { return static_cast<double>(total.item()); }
  /// Sum of the components, recomputed from the stored doubles.
  double recomputed_total() const;
};

template <typename T>
LossBreakdown<T> total_loss(const HeadOutputs<T>& outputs,
                            const Tensor<T>& seg_mask, const Tensor<T>& edge_mask,
                            const std::array<double, 4>& lambdas = kDefaultLambdas);

}  // namespace banet
