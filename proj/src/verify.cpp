#include "banet/verify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>

#include "banet/grad_check.hpp"
#include "banet/losses.hpp"
#include "banet/metrics.hpp"
#include "banet/ops.hpp"
#include "banet/rng.hpp"
#include "banet/train.hpp"

namespace banet::verify {
namespace {

using TensorD = Tensor<double>;
using Inputs = std::span<const TensorD>;

std::string fmt(const char* format, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

TensorD random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(s);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

int pick(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

bool same_bits(const TensorD& a, const TensorD& b) {
  if (!(a.shape() == b.shape())) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](double x, double y) {
                      return std::bit_cast<std::uint64_t>(x) ==
                             std::bit_cast<std::uint64_t>(y);
                    });
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

// Scalar probe sum(y * r) with a fixed random r, so every output element
// carries a distinct weight.
TensorD weighted_sum(const TensorD& y, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, random_tensor(y.shape(), rng)));
}

struct OpCase {
  std::vector<TensorD> inputs;
  ScalarFunction f;
};

using CaseMaker = std::function<OpCase(Rng&)>;

Shape small_shape(Rng& rng) {
  return Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 3, 7), pick(rng, 3, 7)};
}

OpCase conv_case(Rng& rng, int dilation) {
  const int k = dilation == 1 ? 2 * pick(rng, 0, 2) + 1 : 3;
  const Shape xs{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 5, 8), pick(rng, 5, 8)};
  const int cout = pick(rng, 1, 3);
  ops::Conv2dParams p{pick(rng, 1, 2), pick(rng, 0, dilation * (k - 1) / 2), dilation};
  const std::uint64_t probe = rng.next();
  return {{random_tensor(xs, rng), random_tensor({cout, xs.c, k, k}, rng),
           random_tensor({1, cout, 1, 1}, rng)},
          [p, probe](Inputs in) {
            return weighted_sum(ops::conv2d(in[0], in[1], in[2], p), probe);
          }};
}

std::vector<std::pair<std::string, CaseMaker>> op_cases() {
  return {
      {"conv2d", [](Rng& rng) { return conv_case(rng, 1); }},
      {"conv2d dilation 2", [](Rng& rng) { return conv_case(rng, 2); }},
      {"avg_pool2d",
       [](Rng& rng) {
         const int k = 2 * pick(rng, 0, 2) + 1;
         const int stride = pick(rng, 1, 2);
         const int pad = pick(rng, 0, k / 2);
         const std::uint64_t probe = rng.next();
         Shape s = small_shape(rng);
         s.h = std::max(s.h, k);
         s.w = std::max(s.w, k);
         return OpCase{{random_tensor(s, rng)}, [=](Inputs in) {
                         return weighted_sum(ops::avg_pool2d(in[0], k, stride, pad), probe);
                       }};
       }},
      {"global_avg_pool",
       [](Rng& rng) {
         const std::uint64_t probe = rng.next();
         return OpCase{{random_tensor(small_shape(rng), rng)}, [=](Inputs in) {
                         return weighted_sum(ops::global_avg_pool(in[0]), probe);
                       }};
       }},
      {"bilinear_resize",
       [](Rng& rng) {
         const int oh = pick(rng, 1, 12);
         const int ow = pick(rng, 1, 12);
         const std::uint64_t probe = rng.next();
         return OpCase{{random_tensor(small_shape(rng), rng)}, [=](Inputs in) {
                         return weighted_sum(ops::bilinear_resize(in[0], oh, ow), probe);
                       }};
       }},
      {"sigmoid",
       [](Rng& rng) {
         const std::uint64_t probe = rng.next();
         return OpCase{{random_tensor(small_shape(rng), rng, -3.0, 3.0)}, [=](Inputs in) {
                         return weighted_sum(ops::sigmoid(in[0]), probe);
                       }};
       }},
      {"relu",
       [](Rng& rng) {
         const std::uint64_t probe = rng.next();
         TensorD x = random_tensor(small_shape(rng), rng, -3.0, 3.0);
         // Keep clear of the kink, where finite differences are meaningless.
         for (double& v : x.mutable_data()) {
           if (std::abs(v) < 1e-3) v = 0.5;
         }
         return OpCase{{x}, [=](Inputs in) { return weighted_sum(ops::relu(in[0]), probe); }};
       }},
      {"add",
       [](Rng& rng) {
         const Shape s = small_shape(rng);
         const std::uint64_t probe = rng.next();
         return OpCase{{random_tensor(s, rng), random_tensor(s, rng)}, [=](Inputs in) {
                         return weighted_sum(ops::add(in[0], in[1]), probe);
                       }};
       }},
      {"sub",
       [](Rng& rng) {
         const Shape s = small_shape(rng);
         const std::uint64_t probe = rng.next();
         return OpCase{{random_tensor(s, rng), random_tensor(s, rng)}, [=](Inputs in) {
                         return weighted_sum(ops::sub(in[0], in[1]), probe);
                       }};
       }},
      {"mul",
       [](Rng& rng) {
         const Shape s = small_shape(rng);
         const std::uint64_t probe = rng.next();
         return OpCase{{random_tensor(s, rng), random_tensor(s, rng)}, [=](Inputs in) {
                         return weighted_sum(ops::mul(in[0], in[1]), probe);
                       }};
       }},
      {"scalar_rsub",
       [](Rng& rng) {
         const double s = rng.uniform(-2.0, 2.0);
         const std::uint64_t probe = rng.next();
         return OpCase{{random_tensor(small_shape(rng), rng)}, [=](Inputs in) {
                         return weighted_sum(ops::scalar_rsub(s, in[0]), probe);
                       }};
       }},
      {"concat_channels",
       [](Rng& rng) {
         Shape s = small_shape(rng);
         std::vector<TensorD> parts;
         const int count = pick(rng, 2, 3);
         for (int i = 0; i < count; ++i) {
           s.c = pick(rng, 1, 3);
           parts.push_back(random_tensor(s, rng));
         }
         const std::uint64_t probe = rng.next();
         return OpCase{parts, [=](Inputs in) {
                         return weighted_sum(ops::concat_channels<double>(in), probe);
                       }};
       }},
      {"bce_loss",
       [](Rng& rng) {
         const Shape s = small_shape(rng);
         TensorD target(s);
         for (double& v : target.mutable_data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
         return OpCase{{random_tensor(s, rng, -3.0, 3.0)}, [=](Inputs in) {
                         return ops::bce_loss(in[0], target);
                       }};
       }},
  };
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.backbone.stem_channels = 2;
  cfg.backbone.stage_channels = {2, 2, 2, 2};
  cfg.backbone.reduce_channels = 2;
  cfg.backbone.aspp_out_channels = 2;
  cfg.decoder_channels = 2;
  return cfg;
}

// One end-to-end instance: random parameters (non-zero biases keep ReLUs off
// their kinks), random image and masks, the full joint loss.
GradCheckResult model_instance(const ModelConfig& cfg, Rng& rng) {
  const ModelLayout layout = build_layout(cfg);
  const ParameterStore<double> init = init_parameters<double>(layout, rng.next());
  std::vector<std::string> names;
  std::vector<TensorD> inputs;
  for (const auto& [name, t] : init) {
    names.push_back(name);
    inputs.push_back(random_tensor(t.shape(), rng, -0.6, 0.6));
  }
  const TensorD image = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
  TensorD seg({1, 1, 8, 8});
  TensorD edge({1, 1, 8, 8});
  for (double& v : seg.mutable_data()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  for (double& v : edge.mutable_data()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;

  ScalarFunction f = [&](Inputs in) {
    ParameterStore<double> params;
    for (std::size_t i = 0; i < in.size(); ++i) params.add(names[i], in[i]);
    const LayerContext<double> ctx(layout, params, in[0].tape());
    const ForwardResult<double> r = banet_forward(ctx, cfg, image);
    return total_loss(r.outputs, seg, edge).total;
  };
  return grad_check(f, inputs, GradCheckOptions{.seed = rng.next()});
}

}  // namespace

bool Suite::passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const Check& c) { return c.passed; });
}

void Suite::add(std::string check, bool ok, std::string detail) {
  checks.push_back(Check{std::move(check), ok, std::move(detail)});
}

Suite gradient_suite(std::uint64_t seed, int instances) {
  Suite suite{"gradients", {}};
  const auto cases = op_cases();
  for (std::size_t idx = 0; idx < cases.size(); ++idx) {
    const auto& [name, make] = cases[idx];
    Rng rng(derive_seed({seed, idx}));
    double worst = 0.0;
    std::size_t coords = 0;
    for (int i = 0; i < instances; ++i) {
      const OpCase c = make(rng);
      const GradCheckResult r = grad_check(c.f, c.inputs);
      worst = std::max(worst, r.max_rel_error);
      coords += r.coords_checked;
    }
    suite.add(name, worst <= kOpGradTolerance,
              fmt("max rel err %.3g over %d instances, %zu coords (bound %g)", worst,
                  instances, coords, kOpGradTolerance));
  }

  Rng rng(derive_seed({seed, 0xba7e7ULL}));
  const ModelConfig cfg = tiny_model_config();
  double worst = 0.0;
  std::size_t coords = 0;
  for (int i = 0; i < instances; ++i) {
    const GradCheckResult r = model_instance(cfg, rng);
    worst = std::max(worst, r.max_rel_error);
    coords += r.coords_checked;
  }
  suite.add("BA-Net 8x8 end to end", worst <= kModelGradTolerance,
            fmt("max rel err %.3g over %d instances, %zu coords (bound %g)", worst,
                instances, coords, kModelGradTolerance));
  return suite;
}

Suite metric_suite(std::uint64_t seed) {
  Suite suite{"metrics", {}};
  Rng rng(seed);
  int count_mismatch = 0;
  double dj_worst = 0.0;
  int inversion_fail = 0;
  for (int i = 0; i < kMetricPairs; ++i) {
    const double fg = rng.uniform();
    TensorD prob({1, 1, 16, 16});
    TensorD gt({1, 1, 16, 16});
    for (double& v : prob.mutable_data()) v = rng.uniform();
    for (double& v : gt.mutable_data()) v = rng.bernoulli(fg) ? 1.0 : 0.0;

    ConfusionCounts naive;
    for (std::size_t k = 0; k < prob.numel(); ++k) {
      const bool p = prob.data()[k] >= kDefaultThreshold;
      const bool g = gt.data()[k] == 1.0;
      if (p && g) ++naive.tp;
      if (!p && !g) ++naive.tn;
      if (p && !g) ++naive.fp;
      if (!p && g) ++naive.fn;
    }
    const ConfusionCounts counts = confusion(prob, gt);
    if (!(counts == naive)) ++count_mismatch;

    const MetricReport m = metrics(counts);
    dj_worst = std::max(dj_worst, std::abs(m.di - 2.0 * m.ja / (1.0 + m.ja)));

    // Swap foreground and background on binarised predictions.
    TensorD pred_inv(prob.shape());
    TensorD gt_inv(gt.shape());
    for (std::size_t k = 0; k < prob.numel(); ++k) {
      pred_inv.mutable_data()[k] = prob.data()[k] >= kDefaultThreshold ? 0.0 : 1.0;
      gt_inv.mutable_data()[k] = 1.0 - gt.data()[k];
    }
    const MetricReport inv = metrics(confusion(pred_inv, gt_inv));
    if (inv.se != m.sp || inv.sp != m.se || inv.ac != m.ac) ++inversion_fail;
  }
  suite.add("confusion counts vs naive oracle", count_mismatch == 0,
            fmt("%d of %d pairs differ", count_mismatch, kMetricPairs));
  suite.add("DI = 2 JA / (1 + JA)", dj_worst <= kDiceJaccardTolerance,
            fmt("max deviation %.3g (bound %g)", dj_worst, kDiceJaccardTolerance));
  suite.add("label inversion swaps SE and SP, keeps AC", inversion_fail == 0,
            fmt("%d of %d pairs violate", inversion_fail, kMetricPairs));

  // tp 2, fn 1, fp 1, tn 4
  const TensorD pred({1, 1, 1, 8}, {1, 1, 0, 1, 0, 0, 0, 0});
  const TensorD truth({1, 1, 1, 8}, {1, 1, 1, 0, 0, 0, 0, 0});
  const MetricReport ex = metrics(confusion(pred, truth));
  const bool ok = std::abs(ex.di - 2.0 / 3.0) < 1e-15 && std::abs(ex.ja - 0.5) < 1e-15 &&
                  std::abs(ex.ac - 0.75) < 1e-15 && std::abs(ex.se - 2.0 / 3.0) < 1e-15 &&
                  std::abs(ex.sp - 0.8) < 1e-15;
  suite.add("8-pixel worked example", ok,
            fmt("DI %.6f JA %.6f AC %.6f SE %.6f SP %.6f", ex.di, ex.ja, ex.ac, ex.se,
                ex.sp));
  return suite;
}

Suite module_suite(std::uint64_t seed) {
  Suite suite{"modules", {}};
  Rng rng(seed);

  double pee_worst = 0.0;
  for (int i = 0; i < kIdentityInstances; ++i) {
    const double c = rng.uniform(-5.0, 5.0);
    const Shape s{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 8, 16), pick(rng, 8, 16)};
    const std::vector<int> pools = {2 * pick(rng, 1, 2) + 1, 2 * pick(rng, 1, 3) + 1};
    const std::vector<TensorD> diffs = pee_differences(TensorD(s, c), pools);
    for (std::size_t j = 0; j < pools.size(); ++j) {
      const int r = pools[j] / 2;
      for (int n = 0; n < s.n; ++n)
        for (int ch = 0; ch < s.c; ++ch)
          for (int y = r; y < s.h - r; ++y)
            for (int x = r; x < s.w - r; ++x)
              pee_worst = std::max(pee_worst, std::abs(diffs[j].at(n, ch, y, x)));
    }
  }
  suite.add("PEE vanishes on constant input (interior)", pee_worst <= kIdentityTolerance,
            fmt("max |F - avgpool(F)| %.3g over %d instances (bound %g)", pee_worst,
                kIdentityInstances, kIdentityTolerance));

  int ia_zero_fail = 0;
  int ia_sym_fail = 0;
  for (int i = 0; i < kIdentityInstances; ++i) {
    const Shape s = small_shape(rng);
    const TensorD x = random_tensor(s, rng, -4.0, 4.0);
    const TensorD y = random_tensor(s, rng, -4.0, 4.0);
    const auto [e, g] = interactive_attention(x, TensorD(s));
    TensorD half(s);
    for (std::size_t k = 0; k < half.numel(); ++k) half.mutable_data()[k] = 0.5 * x.data()[k];
    if (!same_bits(e, x) || !same_bits(g, half)) ++ia_zero_fail;

    const auto [e1, s1] = interactive_attention(x, y);
    const auto [e2, s2] = interactive_attention(y, x);
    if (!same_bits(e1, s2) || !same_bits(s1, e2)) ++ia_sym_fail;
  }
  suite.add("IA(x, 0) = (x, x/2)", ia_zero_fail == 0,
            fmt("%d of %d instances differ bitwise", ia_zero_fail, kIdentityInstances));
  suite.add("IA symmetric under swapping its inputs", ia_sym_fail == 0,
            fmt("%d of %d instances differ bitwise", ia_sym_fail, kIdentityInstances));

  double cff_worst = 0.0;
  for (int i = 0; i < kIdentityInstances; ++i) {
    const int n = pick(rng, 1, 2);
    const int c = pick(rng, 1, 4);
    const int h = 2 * pick(rng, 2, 4);
    const int stage = pick(rng, 0, 3);
    std::vector<TensorD> fused;
    for (int j = 0; j < 4; ++j) {
      const Shape s{n, c, j == 0 ? 2 * h : h, j == 0 ? 2 * h : h};
      fused.push_back(j == stage ? random_tensor(s, rng, -4.0, 4.0) : TensorD(s));
    }
    const TensorD out = cff_forward<double>(fused, stage);
    cff_worst = std::max(cff_worst, max_abs_diff(out, fused[stage]));
  }
  suite.add("CFF is the identity when other stages are zero",
            cff_worst <= kIdentityTolerance,
            fmt("max deviation %.3g over %d instances (bound %g)", cff_worst,
                kIdentityInstances, kIdentityTolerance));
  return suite;
}

Suite architecture_suite() {
  Suite suite{"architecture", {}};
  const std::array<int, 2> sizes = {64, 96};
  const std::array<int, 2> widths = {32, 24};
  for (int size : sizes) {
    for (int width : widths) {
      ModelConfig cfg;
      cfg.backbone.reduce_channels = width;
      cfg.decoder_channels = width;
      const Model<float> model = Model<float>::create(cfg, 1);
      Rng rng(static_cast<std::uint64_t>(size * 100 + width));
      Tensor<float> image({1, 3, size, size});
      for (float& v : image.mutable_data()) v = static_cast<float>(rng.uniform());
      const ForwardResult<float> r = model.forward(image);
      const std::string tag = fmt("%dx%d, reduce %d", size, size, width);

      std::string strides;
      bool stride_ok = true;
      bool width_ok = true;
      for (int s = 0; s < 4; ++s) {
        const Shape& f = r.stages[s].features.shape();
        const int got = size / f.h;
        stride_ok = stride_ok && f.h * kStageOutputStrides[s] == size &&
                    f.w * kStageOutputStrides[s] == size;
        width_ok = width_ok && r.stages[s].reduced.shape().c == width;
        strides += (s ? "/" : "") + std::to_string(got);
      }
      suite.add("stage strides 4/8/8/8 (" + tag + ")", stride_ok, "got " + strides);
      suite.add("reduced width (" + tag + ")", width_ok,
                fmt("F'_i channels %d/%d/%d/%d", r.stages[0].reduced.shape().c,
                    r.stages[1].reduced.shape().c, r.stages[2].reduced.shape().c,
                    r.stages[3].reduced.shape().c));

      std::vector<Tensor<float>> maps = {r.outputs.seg_logits};
      maps.insert(maps.end(), r.outputs.stage_edge_logits.begin(),
                  r.outputs.stage_edge_logits.end());
      maps.insert(maps.end(), r.outputs.stage_seg_logits.begin(),
                  r.outputs.stage_seg_logits.end());
      const bool res_ok =
          maps.size() == 9 && std::all_of(maps.begin(), maps.end(), [&](const auto& m) {
            return m.shape() == Shape{1, 1, size, size};
          });
      suite.add("9 logit maps at input resolution (" + tag + ")", res_ok,
                fmt("%zu maps", maps.size()));
    }
  }

  const ModelLayout layout = build_layout(ModelConfig{});
  bool dil_ok = true;
  std::string dump;
  for (const ConvSpec& c : layout.convs()) {
    if (c.name.rfind("backbone.stage", 0) != 0 || c.kernel != 3) continue;
    const int stage = c.name[14] - '1';
    dil_ok = dil_ok && c.dilation == kStageDilations[stage];
    dump += (dump.empty() ? "" : " ") + c.name.substr(9) + ":" + std::to_string(c.dilation);
  }
  suite.add("stages 3-4 use dilation 2", dil_ok, dump);
  return suite;
}

Suite optimizer_suite(std::uint64_t seed) {
  Suite suite{"optimizer", {}};
  const std::int64_t total = total_iterations(200, 4, 30);
  OptimizerState<double> state;
  state.total_iters = total;
  const double lr0 = poly_lr(0, state);
  const double lr_end = poly_lr(total, state);
  const double lr_mid = poly_lr(total / 2, state);
  suite.add("poly_lr(0) = 1e-4", std::abs(lr0 - 1e-4) <= kPolyTolerance,
            fmt("%.17g", lr0));
  suite.add("poly_lr(T) = 0", lr_end == 0.0, fmt("%.17g", lr_end));
  suite.add("poly_lr(T/2) = 5.3589e-5", std::abs(lr_mid - 5.3589e-5) <= kPolyTolerance,
            fmt("%.17g (bound %g)", lr_mid, kPolyTolerance));

  // Two steps under a constant gradient g: displacement lr * g * (1 + 1.9).
  Rng rng(seed);
  ParameterStore<double> params;
  params.add("w", random_tensor({1, 2, 3, 3}, rng));
  const TensorD g = random_tensor({1, 2, 3, 3}, rng);
  const TensorD start = params.at("w").clone();
  OptimizerState<double> opt = OptimizerState<double>::create(params);
  const double lr = 0.05;
  for (int step = 0; step < 2; ++step) {
    Tape<double> tape;
    const TensorD loss = ops::sum(ops::mul(tape.watch(params.at("w")), g));
    tape.backward(loss);
    sgd_step(params, opt, lr);
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < g.numel(); ++k) {
    const double moved = start.data()[k] - params.at("w").data()[k];
    worst = std::max(worst, std::abs(moved - lr * g.data()[k] * 2.9));
  }
  suite.add("momentum two-step unroll", worst <= kMomentumTolerance,
            fmt("max deviation %.3g (bound %g)", worst, kMomentumTolerance));

  const Model<float> model = Model<float>::create(ModelConfig{}, seed);
  std::ostringstream first;
  write_checkpoint(first, model.params);
  std::istringstream in(first.str());
  const ParameterStore<float> loaded = read_checkpoint<float>(in);
  std::ostringstream second;
  write_checkpoint(second, loaded);
  suite.add("checkpoint save-load-save bitwise", first.str() == second.str(),
            fmt("%zu bytes", first.str().size()));
  return suite;
}

std::vector<Suite> run_all(std::uint64_t seed) {
  return {gradient_suite(seed), metric_suite(seed), module_suite(seed),
          architecture_suite(), optimizer_suite(seed)};
}

bool print_report(std::ostream& out, const std::vector<Suite>& suites) {
  bool all = true;
  for (const Suite& s : suites) {
    for (const Check& c : s.checks) {
      out << (c.passed ? "PASS  " : "FAIL  ") << s.name << " / " << c.name << "  "
          << c.detail << '\n';
      all = all && c.passed;
    }
  }
  return all;
}

}  // namespace banet::verify
