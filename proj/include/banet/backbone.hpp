#pragma once

#include <array>

#include "banet/layers.hpp"

namespace banet {

/// Stage strides relative to the previous stage (the stem already halves
/// the input), giving cumulative output strides 4, 8, 8, 8.
inline constexpr std::array<int, 4> kStageStrides = {2, 2, 1, 1};
inline constexpr std::array<int, 4> kStageDilations = {1, 1, 2, 2};
inline constexpr std::array<int, 4> kStageOutputStrides = {4, 8, 8, 8};
inline constexpr int kInputMultiple = 8;

struct BackboneConfig {
  int stem_channels = 16;
  std::array<int, 4> stage_channels = {16, 32, 64, 64};
  std::array<int, 4> blocks_per_stage = {1, 1, 1, 1};
  std::array<int, 4> aspp_rates = {1, 2, 4, 6};
  int aspp_out_channels = 64;
  /// Width of the reduced stage features F'_i.
  int reduce_channels = 32;

  void validate() const;
};

/// Per-stage features. Slots after `reduced` are filled by the heads and stay
/// empty when the producing module is disabled.
template <typename T>
struct StageBundle {
  Tensor<T> features;  // F_i
  Tensor<T> reduced;   // F'_i
  Tensor<T> pee;       // F_{i,P}
  Tensor<T> mtl;       // F_{i,M}
  Tensor<T> cff;       // F_{i,C}
  Tensor<T> edge_logits;
  Tensor<T> seg_logits;
};

std::string stage_name(int stage);

void add_backbone_layers(ModelLayout& layout, const BackboneConfig& cfg);
void add_aspp_layers(ModelLayout& layout, const BackboneConfig& cfg);

/// Stem, four residual stages and the 1x1 reductions. Requires H and W to be
/// multiples of 8.
template <typename T>
std::array<StageBundle<T>, 4> backbone_forward(const LayerContext<T>& ctx,
                                               const Tensor<T>& image,
                                               const BackboneConfig& cfg);

/// Atrous spatial pyramid pooling over the last stage: a 1x1 branch, three
/// dilated 3x3 branches and an image-pooling branch, concatenated and
/// projected to aspp_out_channels.
template <typename T>
Tensor<T> aspp_forward(const LayerContext<T>& ctx, const Tensor<T>& last_stage,
                       const BackboneConfig& cfg);

}  // namespace banet
