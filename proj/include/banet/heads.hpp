#pragma once

#include <array>
#include <utility>
#include <vector>

#include "banet/backbone.hpp"

namespace banet {

struct PeeConfig {
  /// Average-pool kernel sizes per stage; each odd and >= 3.
  std::array<std::vector<int>, 4> pool_sizes = {
      std::vector<int>{5, 7}, std::vector<int>{5, 7}, std::vector<int>{3, 5},
      std::vector<int>{3, 5}};

  void validate() const;
};

/// Module switches for ablation runs. A disabled module passes its input
/// feature through unchanged and owns no parameters.
struct Ablation {
  bool pee = true;
  bool mtl = true;
  bool cff = true;
  bool ia = true;
};

struct ModelConfig {
  BackboneConfig backbone;
  PeeConfig pee;
  int decoder_channels = 32;
  Ablation ablation;

  void validate() const;
};

/// Predictions at full input resolution. The stage lists are empty when the
/// mini-MTL module is disabled.
template <typename T>
struct HeadOutputs {
  Tensor<T> seg_logits;
  std::vector<Tensor<T>> stage_edge_logits;
  std::vector<Tensor<T>> stage_seg_logits;
};

template <typename T>
struct ForwardResult {
  HeadOutputs<T> outputs;
  std::array<StageBundle<T>, 4> stages;
  Tensor<T> aspp;
  std::array<Tensor<T>, 4> decoder;  // D_1..D_4
};

ModelLayout build_layout(const ModelConfig& cfg);

/// F - avgpool_k(F) for each k, fused with F by a 1x1 conv.
template <typename T>
Tensor<T> pee_forward(const LayerContext<T>& ctx, int stage,
                      const Tensor<T>& reduced, const std::vector<int>& pool_sizes);

/// Pyramid difference maps F - avgpool_k(F) (same-size, zero padded).
template <typename T>
std::vector<Tensor<T>> pee_differences(const Tensor<T>& reduced,
                                       const std::vector<int>& pool_sizes);

/// Parameter-free gated exchange between the edge and segmentation
/// features. Both outputs are computed from the inputs as given:
///   edge' = edge + (1 - sigmoid(edge)) * seg
///   seg'  = seg  + (1 - sigmoid(seg))  * edge
template <typename T>
std::pair<Tensor<T>, Tensor<T>> interactive_attention(const Tensor<T>& edge,
                                                      const Tensor<T>& seg);

template <typename T>
struct MtlOutput {
  Tensor<T> fused;        // F_{i,M}
  Tensor<T> edge_logits;  // P_{i,E}, full resolution
  Tensor<T> seg_logits;   // P_{i,S}, full resolution
};

template <typename T>
MtlOutput<T> mtl_forward(const LayerContext<T>& ctx, int stage,
                         const Tensor<T>& pee, int out_h, int out_w,
                         bool ia_enabled);

/// Cross-stage fusion for stage `stage`:
///   F_C = F_M + (1 - sigmoid(F_M)) * sum_{j != i} sigmoid(F_j) * F_j
/// with each F_j resized to stage i's spatial size first.
template <typename T>
Tensor<T> cff_forward(std::span<const Tensor<T>> fused, int stage);

template <typename T>
Tensor<T> decoder_forward(const LayerContext<T>& ctx, const Tensor<T>& aspp,
                          std::span<const Tensor<T>> stage_features, int out_h,
                          int out_w, std::array<Tensor<T>, 4>* decoder_out = nullptr);

template <typename T>
ForwardResult<T> banet_forward(const LayerContext<T>& ctx,
                               const ModelConfig& cfg, const Tensor<T>& image);

/// Config, layout and parameters bundled for convenience.
template <typename T>
struct Model {
  ModelConfig config;
  ModelLayout layout;
  ParameterStore<T> params;

  static Model create(const ModelConfig& cfg, std::uint64_t seed,
                      InitScheme scheme = InitScheme::he);

  ForwardResult<T> forward(const Tensor<T>& image, Tape<T>* tape = nullptr) const {
    return banet_forward(LayerContext<T>(layout, params, tape), config, image);
  }
};

}  // namespace banet
