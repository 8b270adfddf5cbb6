#include "banet/losses.hpp"

namespace banet {

template <typename T>
double LossBreakdown<T>::recomputed_total() const {
  double total = decoder_loss;
  if (has_stage_terms) {
    for (int i = 0; i < 4; ++i) total += lambdas[i] * (stage_edge[i] + stage_seg[i]);
  }
  return total;
}

template <typename T>
LossBreakdown<T> total_loss(const HeadOutputs<T>& outputs,
                            const Tensor<T>& seg_mask, const Tensor<T>& edge_mask,
                            const std::array<double, 4>& lambdas) {
  LossBreakdown<T> out;
  out.lambdas = lambdas;
  Tensor<T> total = ops::bce_loss(outputs.seg_logits, seg_mask);
  out.decoder_loss = total.item();

  const std::size_t stages = outputs.stage_edge_logits.size();
  if (stages != 0) {
    if (stages != 4 || outputs.stage_seg_logits.size() != 4) {
      throw ShapeError("total_loss: expected four stage predictions per task");
    }
    out.has_stage_terms = true;
    for (int i = 0; i < 4; ++i) {
      const Tensor<T> le = ops::bce_loss(outputs.stage_edge_logits[i], edge_mask);
      const Tensor<T> ls = ops::bce_loss(outputs.stage_seg_logits[i], seg_mask);
      out.stage_edge[i] = le.item();
      out.stage_seg[i] = ls.item();
      const Tensor<T> weight = Tensor<T>::scalar(static_cast<T>(lambdas[i]));
      total = ops::add(total, ops::mul(weight, ops::add(le, ls)));
    }
  }
  out.total = total;
  return out;
}

template struct LossBreakdown<float>;
template struct LossBreakdown<double>;
template LossBreakdown<float> total_loss(const HeadOutputs<float>&,
                                         const Tensor<float>&, const Tensor<float>&,
                                         const std::array<double, 4>&);
template LossBreakdown<double> total_loss(const HeadOutputs<double>&,
                                          const Tensor<double>&,
                                          const Tensor<double>&,
                                          const std::array<double, 4>&);

}  // namespace banet
