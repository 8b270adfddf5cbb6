#include <cmath>
#include <set>

#include "banet/losses.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace banet;
using banet::testing::bitwise_equal;
using banet::testing::random_tensor;

using T4 = Tensor<double>;

namespace {

T4 random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor({1, 3, size, size}, rng, 0.0, 1.0);
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.backbone.stem_channels = 4;
  cfg.backbone.stage_channels = {4, 6, 8, 8};
  cfg.backbone.reduce_channels = 6;
  cfg.backbone.aspp_out_channels = 6;
  cfg.decoder_channels = 5;
  return cfg;
}

}  // namespace

TEST_CASE("backbone strides, widths and dilations") {
  const Model<double> model = Model<double>::create(ModelConfig{}, 1);
  const auto r = model.forward(random_image(64, 2));
  CHECK(r.stages[0].features.shape().h == 16);
  for (int s = 1; s < 4; ++s) {
    CHECK(r.stages[s].features.shape().h == 8);
    CHECK(r.stages[s].features.shape().w == 8);
  }
  for (int s = 0; s < 4; ++s) CHECK(r.stages[s].reduced.shape().c == 32);
  CHECK(r.aspp.shape() == Shape{1, 64, 8, 8});

  for (const ConvSpec& c : model.layout.convs()) {
    if (c.name.rfind("backbone.stage3", 0) == 0 || c.name.rfind("backbone.stage4", 0) == 0) {
      CAPTURE(c.name);
      CHECK(c.stride == 1);
      if (c.kernel == 3) CHECK(c.dilation == 2);
    }
  }
  const auto rates = ModelConfig{}.backbone.aspp_rates;
  for (int b = 1; b < 4; ++b) {
    CHECK(model.layout.conv("aspp.branch" + std::to_string(b + 1)).dilation == rates[b]);
  }
}

TEST_CASE("backbone rejects sizes that are not multiples of 8") {
  const Model<double> model = Model<double>::create(small_config(), 1);
  CHECK_THROWS_AS(model.forward(random_image(60, 1)), ShapeError);
  CHECK_THROWS_AS(model.forward(T4({1, 1, 64, 64})), ShapeError);
}

TEST_CASE("zero image through zero parameters gives zero stages") {
  const ModelConfig cfg;
  const ModelLayout layout = build_layout(cfg);
  const ParameterStore<double> params = zero_parameters<double>(layout);
  const LayerContext<double> ctx(layout, params, nullptr);
  const auto r = banet_forward(ctx, cfg, T4({1, 3, 64, 64}));
  for (const auto& st : r.stages) {
    for (double v : st.features.data()) CHECK(v == 0.0);
    for (double v : st.reduced.data()) CHECK(v == 0.0);
  }
  // Zero logits: probability 0.5 everywhere.
  for (double v : r.outputs.seg_logits.data()) CHECK(v == 0.0);
}

TEST_CASE("an impulse moved by 8 pixels moves deep features by one cell") {
  const ModelConfig cfg = small_config();
  const Model<double> model = Model<double>::create(cfg, 3);
  const LayerContext<double> ctx(model.layout, model.params, nullptr);
  // Large enough that the response never reaches the border.
  T4 a({1, 3, 256, 256});
  T4 b({1, 3, 256, 256});
  for (int c = 0; c < 3; ++c) {
    a.at(0, c, 128, 120) = 1.0;
    b.at(0, c, 128, 128) = 1.0;
  }
  const auto fa = backbone_forward(ctx, a, cfg.backbone);
  const auto fb = backbone_forward(ctx, b, cfg.backbone);
  for (int s = 1; s < 4; ++s) {
    const T4& x = fa[s].features;
    const T4& y = fb[s].features;
    bool nonzero = false;
    for (int c = 0; c < x.shape().c; ++c)
      for (int i = 0; i < x.shape().h; ++i)
        for (int j = 0; j + 1 < x.shape().w; ++j) {
          CHECK(y.at(0, c, i, j + 1) == doctest::Approx(x.at(0, c, i, j)).epsilon(1e-12));
          nonzero = nonzero || x.at(0, c, i, j) != 0.0;
        }
    CHECK(nonzero);
  }
}

TEST_CASE("every backbone and ASPP parameter gets a gradient") {
  const ModelConfig cfg = small_config();
  Model<double> model = Model<double>::create(cfg, 4);
  Rng rng(5);
  // Non-zero biases so no unit is dead at init.
  for (auto& [name, t] : model.params) {
    if (name.ends_with(".bias")) {
      for (double& v : t.mutable_data()) v = rng.uniform(0.05, 0.2);
    }
  }
  Tape<double> tape;
  const LayerContext<double> ctx(model.layout, model.params, &tape);
  const auto stages = backbone_forward(ctx, random_image(32, 6), cfg.backbone);
  const T4 fa = aspp_forward(ctx, stages[3].features, cfg.backbone);
  T4 loss = ops::sum(ops::mul(fa, random_tensor(fa.shape(), rng)));
  for (const auto& st : stages) loss = ops::add(loss, ops::sum(st.reduced));
  tape.backward(loss);
  for (auto& [name, t] : model.params) {
    if (!name.starts_with("backbone.") && !name.starts_with("aspp.")) continue;
    CAPTURE(name);
    REQUIRE(t.has_grad());
    double mag = 0.0;
    for (double g : t.grad()) mag += std::abs(g);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("ASPP on a constant map with centre-tap weights stays constant") {
  BackboneConfig cfg;
  cfg.stage_channels = {4, 4, 4, 4};
  cfg.aspp_out_channels = 3;
  ModelLayout layout;
  add_aspp_layers(layout, cfg);
  ParameterStore<double> params = zero_parameters<double>(layout);
  for (const ConvSpec& c : layout.convs()) {
    T4& w = params.at(c.name + ".weight");
    for (int o = 0; o < c.out_channels; ++o)
      for (int i = 0; i < c.in_channels; ++i) w.at(o, i, c.kernel / 2, c.kernel / 2) = 1.0 / c.in_channels;
  }
  const LayerContext<double> ctx(layout, params, nullptr);
  const T4 y = aspp_forward(ctx, T4({1, 4, 8, 8}, 0.75), cfg);
  CHECK(y.shape() == Shape{1, 3, 8, 8});
  for (double v : y.data()) CHECK(v == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("PEE difference maps") {
  SUBCASE("row example with k = 3") {
    // Three identical rows, so the 3x3 window of the middle row averages a
    // full column: (0 + 0 + 8) * 3 / 9 = 8/3.
    T4 f({1, 1, 3, 4});
    for (int y = 0; y < 3; ++y) f.at(0, 0, y, 2) = 8.0;
    const auto d = pee_differences(f, {3});
    CHECK(d[0].at(0, 0, 1, 1) == doctest::Approx(-8.0 / 3.0));
    CHECK(d[0].at(0, 0, 1, 2) == doctest::Approx(16.0 / 3.0));
  }
  SUBCASE("even pool sizes are rejected") {
    CHECK_THROWS_AS(pee_differences(T4({1, 1, 5, 5}), {4}), ShapeError);
  }
  SUBCASE("fuse input width for two pools") {
    const ModelLayout layout = build_layout(ModelConfig{});
    CHECK(layout.conv("pee.stage1.fuse").in_channels == 3 * 32);
    CHECK(layout.conv("pee.stage1.fuse").out_channels == 32);
  }
}

TEST_CASE("interactive attention") {
  const auto [e0, s0] = interactive_attention(T4::scalar(0.0), T4::scalar(0.0));
  CHECK(e0.item() == 0.0);
  CHECK(s0.item() == 0.0);
  const auto [e, s] = interactive_attention(T4::scalar(0.0), T4::scalar(2.0));
  CHECK(e.item() == 1.0);
  CHECK(s.item() == 2.0);
  CHECK_THROWS_AS(interactive_attention(T4({1, 1, 2, 2}), T4({1, 1, 2, 3})), ShapeError);
}

TEST_CASE("cross feature fusion") {
  std::vector<T4> fused = {T4::scalar(0.0), T4::scalar(2.0), T4::scalar(0.0), T4::scalar(0.0)};
  const double sig2 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(cff_forward<double>(fused, 0).item() == doctest::Approx(0.5 * sig2 * 2.0));
  CHECK(cff_forward<double>(fused, 0).item() == doctest::Approx(0.88079).epsilon(1e-5));

  std::vector<T4> single = {T4({1, 2, 3, 3}, 1.5)};
  CHECK(bitwise_equal(cff_forward<double>(single, 0), single[0]));

  std::vector<T4> bad = {T4({1, 2, 4, 4}), T4({1, 3, 2, 2})};
  CHECK_THROWS_AS(cff_forward<double>(bad, 0), ShapeError);
}

TEST_CASE("mini-MTL without IA keeps the branches independent") {
  ModelConfig cfg = small_config();
  cfg.ablation.ia = false;
  Model<double> model = Model<double>::create(cfg, 7);
  Rng rng(8);
  const T4 pee = random_tensor({1, 6, 8, 8}, rng);
  auto run = [&] {
    return mtl_forward(LayerContext<double>(model.layout, model.params, nullptr), 1, pee, 32, 32,
                       cfg.ablation.ia);
  };
  const auto before = run();
  for (double& v : model.params.at("mtl.stage2.seg.conv1.weight").mutable_data()) v += 0.3;
  const auto after = run();
  CHECK(bitwise_equal(before.edge_logits, after.edge_logits));
  CHECK_FALSE(bitwise_equal(before.seg_logits, after.seg_logits));

  cfg.ablation.ia = true;
  const auto coupled = mtl_forward(LayerContext<double>(model.layout, model.params, nullptr), 1,
                                   pee, 32, 32, true);
  CHECK_FALSE(bitwise_equal(coupled.edge_logits, after.edge_logits));
}

TEST_CASE("mini-MTL with shared branch weights is symmetric") {
  const ModelConfig cfg = small_config();
  Model<double> model = Model<double>::create(cfg, 9);
  for (const char* layer : {"conv1", "conv2", "head"}) {
    for (const char* part : {".weight", ".bias"}) {
      const std::string edge = std::string("mtl.stage1.edge.") + layer + part;
      const std::string seg = std::string("mtl.stage1.seg.") + layer + part;
      auto src = model.params.at(edge).data();
      std::copy(src.begin(), src.end(), model.params.at(seg).mutable_data().begin());
    }
  }
  Rng rng(10);
  const auto out = mtl_forward(LayerContext<double>(model.layout, model.params, nullptr), 0,
                               random_tensor({1, 6, 16, 16}, rng), 64, 64, true);
  CHECK(bitwise_equal(out.edge_logits, out.seg_logits));
  CHECK(out.fused.shape() == Shape{1, 6, 16, 16});
}

TEST_CASE("decoder resolutions and widths") {
  const Model<double> model = Model<double>::create(ModelConfig{}, 1);
  const auto r = model.forward(random_image(64, 3));
  CHECK(r.decoder[0].shape() == Shape{1, 32, 16, 16});
  for (int i = 1; i < 4; ++i) CHECK(r.decoder[i].shape() == Shape{1, 32, 8, 8});
  CHECK(r.outputs.seg_logits.shape() == Shape{1, 1, 64, 64});
  CHECK(r.outputs.stage_edge_logits.size() == 4);
  CHECK(r.outputs.stage_seg_logits.size() == 4);
  for (const auto& m : r.outputs.stage_edge_logits) CHECK(m.shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("96x96 input keeps every map at input resolution") {
  const Model<float> model = Model<float>::create(ModelConfig{}, 1);
  const auto r = model.forward(Tensor<float>({2, 3, 96, 96}, 0.5f));
  CHECK(r.outputs.seg_logits.shape() == Shape{2, 1, 96, 96});
  for (const auto& m : r.outputs.stage_seg_logits) CHECK(m.shape() == Shape{2, 1, 96, 96});
}

TEST_CASE("ablations change the parameter set as expected") {
  const ModelConfig full;
  const std::size_t n_full = build_layout(full).parameter_count();

  ModelConfig no_ia = full;
  no_ia.ablation.ia = false;
  CHECK(build_layout(no_ia).parameter_count() == n_full);

  ModelConfig no_cff = full;
  no_cff.ablation.cff = false;
  CHECK(build_layout(no_cff).parameter_count() == n_full);

  ModelConfig no_pee = full;
  no_pee.ablation.pee = false;
  CHECK(build_layout(no_pee).parameter_count() < n_full);
  CHECK_FALSE(build_layout(no_pee).contains("pee.stage1.fuse"));

  ModelConfig no_mtl = full;
  no_mtl.ablation.mtl = false;
  const ModelLayout mtl_off = build_layout(no_mtl);
  for (const ConvSpec& c : mtl_off.convs()) CHECK_FALSE(c.name.starts_with("mtl."));

  const Model<double> model = Model<double>::create(no_mtl, 1);
  const auto r = model.forward(random_image(32, 1));
  CHECK(r.outputs.stage_edge_logits.empty());
  const T4 mask({1, 1, 32, 32});
  const auto loss = total_loss(r.outputs, mask, mask);
  CHECK_FALSE(loss.has_stage_terms);
  CHECK(loss.total_value() == doctest::Approx(loss.decoder_loss));
}

TEST_CASE("w/o PEE matches the full model up to the reduced features") {
  ModelConfig no_pee = small_config();
  no_pee.ablation.pee = false;
  const Model<double> full = Model<double>::create(small_config(), 11);
  Model<double> ablated = Model<double>::create(no_pee, 11);
  for (auto& [name, t] : ablated.params) {
    auto src = full.params.at(name).data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
  const T4 img = random_image(32, 12);
  const auto a = full.forward(img);
  const auto b = ablated.forward(img);
  for (int s = 0; s < 4; ++s) CHECK(bitwise_equal(a.stages[s].reduced, b.stages[s].reduced));
  CHECK(bitwise_equal(a.aspp, b.aspp));
  CHECK_FALSE(bitwise_equal(a.outputs.seg_logits, b.outputs.seg_logits));
  CHECK(b.stages[0].pee.empty());
}

TEST_CASE("joint loss") {
  const Model<double> model = Model<double>::create(small_config(), 1);
  auto outputs = model.forward(random_image(32, 2)).outputs;
  Rng rng(3);
  const T4 seg = banet::testing::random_mask({1, 1, 32, 32}, rng);
  const T4 edge = banet::testing::random_mask({1, 1, 32, 32}, rng);

  SUBCASE("zero logits give 9 ln 2") {
    HeadOutputs<double> zero;
    zero.seg_logits = T4(seg.shape());
    for (int i = 0; i < 4; ++i) {
      zero.stage_edge_logits.push_back(T4(seg.shape()));
      zero.stage_seg_logits.push_back(T4(seg.shape()));
    }
    CHECK(total_loss(zero, seg, edge).total_value() == doctest::Approx(9.0 * std::log(2.0)));
  }
  SUBCASE("saturated logits give almost nothing") {
    auto sat = [](const T4& m) {
      T4 out(m.shape());
      for (std::size_t i = 0; i < m.numel(); ++i) out.mutable_data()[i] = m.data()[i] == 1.0 ? 30.0 : -30.0;
      return out;
    };
    HeadOutputs<double> perfect;
    perfect.seg_logits = sat(seg);
    for (int i = 0; i < 4; ++i) {
      perfect.stage_edge_logits.push_back(sat(edge));
      perfect.stage_seg_logits.push_back(sat(seg));
    }
    CHECK(total_loss(perfect, seg, edge).total_value() < 1e-5);
  }
  SUBCASE("components add up with lambdas") {
    const std::array<double, 4> lambdas = {1.0, 0.5, 2.0, 0.25};
    const auto l = total_loss(outputs, seg, edge, lambdas);
    double expect = l.decoder_loss;
    for (int i = 0; i < 4; ++i) expect += lambdas[i] * (l.stage_edge[i] + l.stage_seg[i]);
    CHECK(l.total_value() == doctest::Approx(expect).epsilon(1e-12));
    CHECK(l.recomputed_total() == doctest::Approx(l.total_value()).epsilon(1e-12));
    CHECK(kDefaultLambdas == std::array<double, 4>{1.0, 1.0, 1.0, 1.0});
  }
}

TEST_CASE("init schemes") {
  const ModelLayout layout = build_layout(ModelConfig{});
  const auto he = init_parameters<double>(layout, 1, InitScheme::he);
  const auto fan = init_parameters<double>(layout, 1, InitScheme::fan_in);
  for (const ConvSpec& c : layout.convs()) {
    const double fan_in = c.in_channels * c.kernel * c.kernel;
    for (double v : he.at(c.name + ".weight").data()) CHECK(std::abs(v) <= std::sqrt(6.0 / fan_in));
    for (double v : fan.at(c.name + ".weight").data()) CHECK(std::abs(v) <= std::sqrt(1.0 / fan_in));
    for (double v : he.at(c.name + ".bias").data()) CHECK(v == 0.0);
  }
  CHECK(parse_init_scheme("he") == InitScheme::he);
  CHECK_THROWS_AS(parse_init_scheme("xavier"), ConfigError);
}
