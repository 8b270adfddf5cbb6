#include <algorithm>
#include <cmath>
#include <numbers>

#include "banet/data.hpp"
#include "banet/ops.hpp"

namespace banet {

void require_binary(const Tensor<float>& mask, const std::string& what) {
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) {
      throw DataError(what + ": mask is not binary (found " + std::to_string(v) + ")");
    }
  }
}

Tensor<float> derive_edge_mask(const Tensor<float>& seg_mask, int width) {
  if (width < 1 || width % 2 == 0) {
    throw ShapeError("edge width must be odd and >= 1, got " + std::to_string(width));
  }
  require_binary(seg_mask, "derive_edge_mask");
  const Shape& s = seg_mask.shape();
  Tensor<float> boundary(s);
  auto inside = [&](int n, int c, int y, int x) {
    return y >= 0 && y < s.h && x >= 0 && x < s.w && seg_mask.at(n, c, y, x) == 1.0f;
  };
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          if (!inside(n, c, y, x)) continue;
          const bool interior = inside(n, c, y - 1, x) && inside(n, c, y + 1, x) &&
                                inside(n, c, y, x - 1) && inside(n, c, y, x + 1);
          if (!interior) boundary.at(n, c, y, x) = 1.0f;
        }
      }
    }
  }
  const int r = (width - 1) / 2;
  if (r == 0) return boundary;
  Tensor<float> edge(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          if (boundary.at(n, c, y, x) != 1.0f) continue;
          for (int yy = std::max(0, y - r); yy <= std::min(s.h - 1, y + r); ++yy) {
            for (int xx = std::max(0, x - r); xx <= std::min(s.w - 1, x + r); ++xx) {
              edge.at(n, c, yy, xx) = 1.0f;
            }
          }
        }
      }
    }
  }
  return edge;
}

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ConfigError(std::string(what) + " must lie in [0,1]");
    }
  };
  prob(flip_h_prob, "data.flip_h_prob");
  prob(flip_v_prob, "data.flip_v_prob");
  if (!(rot_min_deg <= rot_max_deg)) {
    throw ConfigError("data.rot_min must not exceed data.rot_max");
  }
  if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0)) {
    throw ConfigError("data.crop_min/crop_max must satisfy 0 < min <= max <= 1");
  }
  if (out_size <= 0 || out_size % 8 != 0) {
    throw ConfigError("data.out_size must be a positive multiple of 8");
  }
  if (edge_width < 1 || edge_width % 2 == 0) {
    throw ConfigError("data.edge_width must be odd and >= 1");
  }
}

Tensor<float> crop_center(const Tensor<float>& t, int out_h, int out_w) {
  const Shape& s = t.shape();
  if (out_h < 1 || out_w < 1 || out_h > s.h || out_w > s.w) {
    throw ShapeError("crop_center: invalid crop size");
  }
  const int y0 = (s.h - out_h) / 2;
  const int x0 = (s.w - out_w) / 2;
  Tensor<float> out(Shape{s.n, s.c, out_h, out_w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) out.at(n, c, y, x) = t.at(n, c, y0 + y, x0 + x);
  return out;
}

Tensor<float> flip_horizontal(const Tensor<float>& t) {
  const Shape& s = t.shape();
  Tensor<float> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, s.w - 1 - x);
  return out;
}

Tensor<float> flip_vertical(const Tensor<float>& t) {
  const Shape& s = t.shape();
  Tensor<float> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, s.h - 1 - y, x);
  return out;
}

namespace {

// Maps an output pixel centre back into the source frame (pixel-centre
// coordinates, so the centre of pixel (x, y) is (x, y)).
struct InverseRotation {
  double cos_t, sin_t, cx, cy;

  InverseRotation(double degrees, const Shape& s) {
    const double rad = degrees * std::numbers::pi / 180.0;
    cos_t = std::cos(rad);
    sin_t = std::sin(rad);
    cx = (s.w - 1) / 2.0;
    cy = (s.h - 1) / 2.0;
  }
  void map(int x, int y, double& sx, double& sy) const {
    const double dx = x - cx;
    const double dy = y - cy;
    sx = cos_t * dx + sin_t * dy + cx;
    sy = -sin_t * dx + cos_t * dy + cy;
  }
};

}  // namespace

Tensor<float> rotate_image(const Tensor<float>& t, double degrees) {
  if (degrees == 0.0) return t.clone();
  const Shape& s = t.shape();
  const InverseRotation rot(degrees, s);
  Tensor<float> out(s);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      double sx, sy;
      rot.map(x, y, sx, sy);
      sx = std::clamp(sx, 0.0, static_cast<double>(s.w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(s.h - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, s.w - 1);
      const int y1 = std::min(y0 + 1, s.h - 1);
      const float fx = static_cast<float>(sx - x0);
      const float fy = static_cast<float>(sy - y0);
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const float top = t.at(n, c, y0, x0) + fx * (t.at(n, c, y0, x1) - t.at(n, c, y0, x0));
          const float bot = t.at(n, c, y1, x0) + fx * (t.at(n, c, y1, x1) - t.at(n, c, y1, x0));
          out.at(n, c, y, x) = top + fy * (bot - top);
        }
      }
    }
  }
  return out;
}

Tensor<float> rotate_mask(const Tensor<float>& t, double degrees) {
  if (degrees == 0.0) return t.clone();
  const Shape& s = t.shape();
  const InverseRotation rot(degrees, s);
  Tensor<float> out(s);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      double sx, sy;
      rot.map(x, y, sx, sy);
      // Same border replication as rotate_image, so corners stay registered.
      const int ix = std::clamp(static_cast<int>(std::lround(sx)), 0, s.w - 1);
      const int iy = std::clamp(static_cast<int>(std::lround(sy)), 0, s.h - 1);
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) out.at(n, c, y, x) = t.at(n, c, iy, ix);
    }
  }
  return out;
}

Tensor<float> resize_nearest(const Tensor<float>& t, int out_h, int out_w) {
  const Shape& s = t.shape();
  if (out_h == s.h && out_w == s.w) return t.clone();
  Tensor<float> out(Shape{s.n, s.c, out_h, out_w});
  std::vector<int> ys(out_h), xs(out_w);
  for (int y = 0; y < out_h; ++y) {
    ys[y] = std::min(s.h - 1, static_cast<int>(std::floor((y + 0.5) * s.h / out_h)));
  }
  for (int x = 0; x < out_w; ++x) {
    xs[x] = std::min(s.w - 1, static_cast<int>(std::floor((x + 0.5) * s.w / out_w)));
  }
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) out.at(n, c, y, x) = t.at(n, c, ys[y], xs[x]);
  return out;
}

namespace {

Tensor<float> resize_bilinear(const Tensor<float>& t, int out_h, int out_w) {
  if (t.shape().h == out_h && t.shape().w == out_w) return t.clone();
  Tensor<float> out = ops::bilinear_resize(t.detach(), out_h, out_w);
  for (float& v : out.mutable_data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace

Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  // All draws happen up front so the stream layout does not depend on which
  // transforms end up being applied.
  const double scale = rng.uniform(cfg.crop_min, cfg.crop_max);
  const double angle = rng.uniform(cfg.rot_min_deg, cfg.rot_max_deg);
  const bool flip_h = rng.bernoulli(cfg.flip_h_prob);
  const bool flip_v = rng.bernoulli(cfg.flip_v_prob);

  const Shape& s = sample.image.shape();
  const int ch = std::clamp(static_cast<int>(std::lround(scale * s.h)), 1, s.h);
  const int cw = std::clamp(static_cast<int>(std::lround(scale * s.w)), 1, s.w);

  Tensor<float> image = crop_center(sample.image, ch, cw);
  Tensor<float> mask = crop_center(sample.seg_mask, ch, cw);
  image = rotate_image(image, angle);
  mask = rotate_mask(mask, angle);
  if (flip_h) {
    image = flip_horizontal(image);
    mask = flip_horizontal(mask);
  }
  if (flip_v) {
    image = flip_vertical(image);
    mask = flip_vertical(mask);
  }
  Sample out;
  out.id = sample.id;
  out.image = resize_bilinear(image, cfg.out_size, cfg.out_size);
  out.seg_mask = resize_nearest(mask, cfg.out_size, cfg.out_size);
  out.edge_mask = derive_edge_mask(out.seg_mask, cfg.edge_width);
  return out;
}

Sample resize_sample(const Sample& sample, int out_size, int edge_width) {
  Sample out;
  out.id = sample.id;
  out.image = resize_bilinear(sample.image, out_size, out_size);
  out.seg_mask = resize_nearest(sample.seg_mask, out_size, out_size);
  out.edge_mask = derive_edge_mask(out.seg_mask, edge_width);
  return out;
}

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw DataError("make_batch: no samples");
  const Shape first = samples[0].image.shape();
  const int n = static_cast<int>(samples.size());
  Batch<T> b{Tensor<T>(Shape{n, 3, first.h, first.w}),
             Tensor<T>(Shape{n, 1, first.h, first.w}),
             Tensor<T>(Shape{n, 1, first.h, first.w})};
  auto copy = [](const Tensor<float>& src, Tensor<T>& dst, int index) {
    const std::size_t len = src.numel();
    if (len * dst.shape().n != dst.numel()) {
      throw ShapeError("make_batch: samples differ in size");
    }
    std::copy(src.data().begin(), src.data().end(),
              dst.mutable_data().begin() + static_cast<std::ptrdiff_t>(index * len));
  };
  for (int i = 0; i < n; ++i) {
    copy(samples[i].image, b.images, i);
    copy(samples[i].seg_mask, b.seg_masks, i);
    copy(samples[i].edge_mask, b.edge_masks, i);
  }
  return b;
}

template Batch<float> make_batch(std::span<const Sample>);
template Batch<double> make_batch(std::span<const Sample>);

}  // namespace banet
