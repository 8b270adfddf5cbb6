#include "banet/heads.hpp"

namespace banet {

void PeeConfig::validate() const {
  for (int s = 0; s < 4; ++s) {
    if (pool_sizes[s].empty()) {
      throw ConfigError("pee." + stage_name(s) + " needs at least one pool size");
    }
    for (int k : pool_sizes[s]) {
      if (k < 3 || k % 2 == 0) {
        throw ConfigError("pee." + stage_name(s) + ": pool size " +
                          std::to_string(k) + " must be odd and >= 3");
      }
    }
  }
}

void ModelConfig::validate() const {
  backbone.validate();
  pee.validate();
  if (decoder_channels <= 0) {
    throw ConfigError("model.decoder_channels must be positive");
  }
}

namespace {

std::string mtl_prefix(int stage) { return "mtl." + stage_name(stage); }

}  // namespace

ModelLayout build_layout(const ModelConfig& cfg) {
  cfg.validate();
  ModelLayout layout;
  add_backbone_layers(layout, cfg.backbone);
  add_aspp_layers(layout, cfg.backbone);
  const int r = cfg.backbone.reduce_channels;
  for (int s = 0; s < 4; ++s) {
    if (cfg.ablation.pee) {
      const int parts = static_cast<int>(cfg.pee.pool_sizes[s].size()) + 1;
      layout.add({"pee." + stage_name(s) + ".fuse", parts * r, r, 1, 1, 0, 1});
    }
    if (cfg.ablation.mtl) {
      const std::string p = mtl_prefix(s);
      for (const char* branch : {".edge", ".seg"}) {
        layout.add({p + branch + ".conv1", r, r, 3, 1, 1, 1});
        layout.add({p + branch + ".conv2", r, r, 3, 1, 1, 1});
        layout.add({p + branch + ".head", r, 1, 1, 1, 0, 1});
      }
      layout.add({p + ".fuse", 2 * r, r, 1, 1, 0, 1});
    }
  }
  const int d = cfg.decoder_channels;
  layout.add({"decoder.stage4", cfg.backbone.aspp_out_channels + r, d, 1, 1, 0, 1});
  for (int s = 2; s >= 0; --s) {
    layout.add({"decoder." + stage_name(s), d + r, d, 1, 1, 0, 1});
  }
  layout.add({"decoder.head", d, 1, 1, 1, 0, 1});
  return layout;
}

template <typename T>
std::vector<Tensor<T>> pee_differences(const Tensor<T>& reduced,
                                       const std::vector<int>& pool_sizes) {
  std::vector<Tensor<T>> out;
  out.reserve(pool_sizes.size());
  for (int k : pool_sizes) {
    if (k < 1 || k % 2 == 0) {
      throw ShapeError("pee: pool size " + std::to_string(k) + " must be odd");
    }
    out.push_back(ops::sub(reduced, ops::avg_pool2d(reduced, k, 1, (k - 1) / 2)));
  }
  return out;
}

template <typename T>
Tensor<T> pee_forward(const LayerContext<T>& ctx, int stage,
                      const Tensor<T>& reduced, const std::vector<int>& pool_sizes) {
  std::vector<Tensor<T>> parts = pee_differences(reduced, pool_sizes);
  parts.push_back(reduced);
  return ctx.conv("pee." + stage_name(stage) + ".fuse",
                  ops::concat_channels<T>(std::span<const Tensor<T>>(parts)));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> interactive_attention(const Tensor<T>& edge,
                                                      const Tensor<T>& seg) {
  if (!(edge.shape() == seg.shape())) {
    throw ShapeError("interactive_attention: shape mismatch " +
                     to_string(edge.shape()) + " vs " + to_string(seg.shape()));
  }
  Tensor<T> edge_out =
      ops::add(edge, ops::mul(ops::scalar_rsub(T(1), ops::sigmoid(edge)), seg));
  Tensor<T> seg_out =
      ops::add(seg, ops::mul(ops::scalar_rsub(T(1), ops::sigmoid(seg)), edge));
  return {std::move(edge_out), std::move(seg_out)};
}

template <typename T>
MtlOutput<T> mtl_forward(const LayerContext<T>& ctx, int stage,
                         const Tensor<T>& pee, int out_h, int out_w,
                         bool ia_enabled) {
  const std::string p = mtl_prefix(stage);
  Tensor<T> edge = ops::relu(ctx.conv(p + ".edge.conv1", pee));
  Tensor<T> seg = ops::relu(ctx.conv(p + ".seg.conv1", pee));
  if (ia_enabled) {
    std::tie(edge, seg) = interactive_attention(edge, seg);
  }
  edge = ops::relu(ctx.conv(p + ".edge.conv2", edge));
  seg = ops::relu(ctx.conv(p + ".seg.conv2", seg));

  MtlOutput<T> out;
  out.edge_logits = ops::bilinear_resize(ctx.conv(p + ".edge.head", edge), out_h, out_w);
  out.seg_logits = ops::bilinear_resize(ctx.conv(p + ".seg.head", seg), out_h, out_w);
  out.fused = ctx.conv(p + ".fuse", ops::concat_channels<T>({edge, seg}));
  return out;
}

template <typename T>
Tensor<T> cff_forward(std::span<const Tensor<T>> fused, int stage) {
  if (stage < 0 || static_cast<std::size_t>(stage) >= fused.size()) {
    throw ShapeError("cff: stage index out of range");
  }
  const Tensor<T>& self = fused[stage];
  const Shape& s = self.shape();
  Tensor<T> complement;
  for (std::size_t j = 0; j < fused.size(); ++j) {
    if (static_cast<int>(j) == stage) continue;
    const Shape& o = fused[j].shape();
    if (o.c != s.c || o.n != s.n) {
      throw ShapeError("cff: stage " + std::to_string(j + 1) + " has shape " +
                       to_string(o) + ", incompatible with " + to_string(s));
    }
    Tensor<T> other = fused[j];
    if (o.h != s.h || o.w != s.w) other = ops::bilinear_resize(other, s.h, s.w);
    Tensor<T> gated = ops::mul(ops::sigmoid(other), other);
    complement = complement.empty() ? gated : ops::add(complement, gated);
  }
  if (complement.empty()) return self;
  return ops::add(self,
                  ops::mul(ops::scalar_rsub(T(1), ops::sigmoid(self)), complement));
}

template <typename T>
Tensor<T> decoder_forward(const LayerContext<T>& ctx, const Tensor<T>& aspp,
                          std::span<const Tensor<T>> stage_features, int out_h,
                          int out_w, std::array<Tensor<T>, 4>* decoder_out) {
  if (stage_features.size() != 4) {
    throw ShapeError("decoder expects four stage features");
  }
  Tensor<T> d = ops::relu(ctx.conv(
      "decoder.stage4", ops::concat_channels<T>({aspp, stage_features[3]})));
  if (decoder_out != nullptr) (*decoder_out)[3] = d;
  for (int s = 2; s >= 0; --s) {
    const Shape& fs = stage_features[s].shape();
    if (d.shape().h != fs.h || d.shape().w != fs.w) {
      d = ops::bilinear_resize(d, fs.h, fs.w);
    }
    d = ops::relu(ctx.conv("decoder." + stage_name(s),
                           ops::concat_channels<T>({d, stage_features[s]})));
    if (decoder_out != nullptr) (*decoder_out)[s] = d;
  }
  return ops::bilinear_resize(ctx.conv("decoder.head", d), out_h, out_w);
}

template <typename T>
ForwardResult<T> banet_forward(const LayerContext<T>& ctx,
                               const ModelConfig& cfg, const Tensor<T>& image) {
  const int H = image.shape().h;
  const int W = image.shape().w;
  ForwardResult<T> r;
  r.stages = backbone_forward(ctx, image, cfg.backbone);
  r.aspp = aspp_forward(ctx, r.stages[3].features, cfg.backbone);

  std::vector<Tensor<T>> fused(4);
  for (int s = 0; s < 4; ++s) {
    StageBundle<T>& b = r.stages[s];
    const Tensor<T> pee = cfg.ablation.pee
                              ? pee_forward(ctx, s, b.reduced, cfg.pee.pool_sizes[s])
                              : b.reduced;
    if (cfg.ablation.pee) b.pee = pee;
    if (cfg.ablation.mtl) {
      MtlOutput<T> m = mtl_forward(ctx, s, pee, H, W, cfg.ablation.ia);
      b.mtl = m.fused;
      b.edge_logits = m.edge_logits;
      b.seg_logits = m.seg_logits;
      r.outputs.stage_edge_logits.push_back(m.edge_logits);
      r.outputs.stage_seg_logits.push_back(m.seg_logits);
      fused[s] = m.fused;
    } else {
      fused[s] = pee;
    }
  }

  std::vector<Tensor<T>> encoded(4);
  for (int s = 0; s < 4; ++s) {
    encoded[s] = cfg.ablation.cff
                     ? cff_forward<T>(std::span<const Tensor<T>>(fused), s)
                     : fused[s];
    if (cfg.ablation.cff) r.stages[s].cff = encoded[s];
  }
  r.outputs.seg_logits = decoder_forward<T>(
      ctx, r.aspp, std::span<const Tensor<T>>(encoded), H, W, &r.decoder);
  return r;
}

template <typename T>
Model<T> Model<T>::create(const ModelConfig& cfg, std::uint64_t seed,
                          InitScheme scheme) {
  Model<T> m;
  m.config = cfg;
  m.layout = build_layout(cfg);
  m.params = init_parameters<T>(m.layout, seed, scheme);
  return m;
}

#define BANET_INSTANTIATE_HEADS(T)                                             \
  template std::vector<Tensor<T>> pee_differences(const Tensor<T>&,           \
                                                  const std::vector<int>&);   \
  template Tensor<T> pee_forward(const LayerContext<T>&, int, const Tensor<T>&, \
                                 const std::vector<int>&);                    \
  template std::pair<Tensor<T>, Tensor<T>> interactive_attention(             \
      const Tensor<T>&, const Tensor<T>&);                                    \
  template MtlOutput<T> mtl_forward(const LayerContext<T>&, int,              \
                                    const Tensor<T>&, int, int, bool);        \
  template Tensor<T> cff_forward(std::span<const Tensor<T>>, int);            \
  template Tensor<T> decoder_forward(const LayerContext<T>&, const Tensor<T>&, \
                                     std::span<const Tensor<T>>, int, int,    \
                                     std::array<Tensor<T>, 4>*);              \
  template ForwardResult<T> banet_forward(const LayerContext<T>&,             \
                                          const ModelConfig&, const Tensor<T>&); \
  template struct Model<T>;

BANET_INSTANTIATE_HEADS(float)
BANET_INSTANTIATE_HEADS(double)

#undef BANET_INSTANTIATE_HEADS

}  // namespace banet
