#include "banet/backbone.hpp"

namespace banet {

void BackboneConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(stem_channels, "backbone.stem_channels");
  for (int c : stage_channels) positive(c, "backbone.stage_channels");
  for (int b : blocks_per_stage) positive(b, "backbone.blocks_per_stage");
  for (int r : aspp_rates) positive(r, "aspp.rates");
  positive(aspp_out_channels, "aspp.out_channels");
  positive(reduce_channels, "backbone.reduce_channels");
}

std::string stage_name(int stage) { return "stage" + std::to_string(stage + 1); }

namespace {

std::string block_name(int stage, int block) {
  return "backbone." + stage_name(stage) + ".block" + std::to_string(block);
}

}  // namespace

void add_backbone_layers(ModelLayout& layout, const BackboneConfig& cfg) {
  cfg.validate();
  layout.add({"backbone.stem", 3, cfg.stem_channels, 3, 2, 1, 1});
  int in = cfg.stem_channels;
  for (int s = 0; s < 4; ++s) {
    const int out = cfg.stage_channels[s];
    const int d = kStageDilations[s];
    for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      const int stride = b == 0 ? kStageStrides[s] : 1;
      const std::string name = block_name(s, b);
      layout.add({name + ".conv1", in, out, 3, stride, d, d});
      layout.add({name + ".conv2", out, out, 3, 1, d, d});
      if (stride != 1 || in != out) {
        layout.add({name + ".proj", in, out, 1, stride, 0, d});
      }
      in = out;
    }
    layout.add({"backbone.reduce" + std::to_string(s + 1), out,
                cfg.reduce_channels, 1, 1, 0, 1});
  }
}

void add_aspp_layers(ModelLayout& layout, const BackboneConfig& cfg) {
  const int in = cfg.stage_channels[3];
  const int out = cfg.aspp_out_channels;
  layout.add({"aspp.branch1", in, out, 1, 1, 0, cfg.aspp_rates[0]});
  for (int b = 1; b < 4; ++b) {
    const int rate = cfg.aspp_rates[b];
    layout.add({"aspp.branch" + std::to_string(b + 1), in, out, 3, 1, rate, rate});
  }
  layout.add({"aspp.pool", in, out, 1, 1, 0, 1});
  layout.add({"aspp.project", 5 * out, out, 1, 1, 0, 1});
}

template <typename T>
std::array<StageBundle<T>, 4> backbone_forward(const LayerContext<T>& ctx,
                                               const Tensor<T>& image,
                                               const BackboneConfig& cfg) {
  const Shape& s = image.shape();
  if (s.c != 3) {
    throw ShapeError("backbone expects a 3-channel image, got " + to_string(s));
  }
  if (s.h % kInputMultiple != 0 || s.w % kInputMultiple != 0 || s.h == 0 ||
      s.w == 0) {
    throw ShapeError("input size " + std::to_string(s.h) + "x" +
                     std::to_string(s.w) + " is not divisible by 8");
  }
  std::array<StageBundle<T>, 4> stages;
  Tensor<T> x = ops::relu(ctx.conv("backbone.stem", image));
  for (int st = 0; st < 4; ++st) {
    for (int b = 0; b < cfg.blocks_per_stage[st]; ++b) {
      const std::string name = block_name(st, b);
      Tensor<T> y = ops::relu(ctx.conv(name + ".conv1", x));
      y = ctx.conv(name + ".conv2", y);
      const Tensor<T> skip =
          ctx.has_layer(name + ".proj") ? ctx.conv(name + ".proj", x) : x;
      x = ops::relu(ops::add(y, skip));
    }
    stages[st].features = x;
    stages[st].reduced = ctx.conv("backbone.reduce" + std::to_string(st + 1), x);
  }
  return stages;
}

template <typename T>
Tensor<T> aspp_forward(const LayerContext<T>& ctx, const Tensor<T>& last_stage,
                       const BackboneConfig& /*cfg*/) {
  const Shape& s = last_stage.shape();
  std::vector<Tensor<T>> branches;
  branches.reserve(5);
  for (int b = 1; b <= 4; ++b) {
    branches.push_back(
        ops::relu(ctx.conv("aspp.branch" + std::to_string(b), last_stage)));
  }
  Tensor<T> pooled = ops::relu(ctx.conv("aspp.pool", ops::global_avg_pool(last_stage)));
  branches.push_back(ops::bilinear_resize(pooled, s.h, s.w));
  return ctx.conv("aspp.project",
                  ops::concat_channels<T>(std::span<const Tensor<T>>(branches)));
}

template std::array<StageBundle<float>, 4> backbone_forward(
    const LayerContext<float>&, const Tensor<float>&, const BackboneConfig&);
template std::array<StageBundle<double>, 4> backbone_forward(
    const LayerContext<double>&, const Tensor<double>&, const BackboneConfig&);
template Tensor<float> aspp_forward(const LayerContext<float>&,
                                    const Tensor<float>&, const BackboneConfig&);
template Tensor<double> aspp_forward(const LayerContext<double>&,
                                     const Tensor<double>&, const BackboneConfig&);

}  // namespace banet
