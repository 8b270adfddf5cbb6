#include "banet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace banet {

Precision parse_precision(std::string_view text) {
  if (text == "f32" || text == "float32") return Precision::f32;
  if (text == "f64" || text == "float64") return Precision::f64;
  throw ConfigError("unknown precision '" + std::string(text) +
                    "' (expected f32 or f64)");
}

std::string_view to_string(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + "]";
}

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::conv2d: return "conv2d";
    case OpKind::avg_pool2d: return "avg_pool2d";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::bilinear_resize: return "bilinear_resize";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::relu: return "relu";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scalar_rsub: return "scalar_rsub";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::sum: return "sum";
    case OpKind::bce_loss: return "bce_loss";
  }
  return "?";
}

}  // namespace banet

namespace banet::ops {
namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) +
                     " vs " + to_string(b));
  }
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int M, int K, int N, const T* A, const T* B, T* C) {
  for (int m = 0; m < M; ++m) {
    T* c = C + static_cast<std::size_t>(m) * N;
    const T* a = A + static_cast<std::size_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + static_cast<std::size_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn(int M, int K, int N, const T* A, const T* B, T* C) {
  for (int m = 0; m < M; ++m) {
    const T* a = A + static_cast<std::size_t>(m) * K;
    const T* b = B + static_cast<std::size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      T* c = C + static_cast<std::size_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M,K] += A[M,N] * Bt[N,K]   (Bt is B transposed, row-major)
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* Bt, T* C) {
  for (int m = 0; m < M; ++m) {
    T* c = C + static_cast<std::size_t>(m) * K;
    const T* a = A + static_cast<std::size_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const T av = a[n];
      const T* b = Bt + static_cast<std::size_t>(n) * K;
      for (int k = 0; k < K; ++k) c[k] += av * b[k];
    }
  }
}

struct ConvGeometry {
  int cin, h, w, kh, kw, oh, ow;
  Conv2dParams p;

  int rows() const { return cin * kh * kw; }
  int cols() const { return oh * ow; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && p.stride == 1 && p.padding == 0;
  }
};

// cols[(c*kh+ky)*kw+kx, oy*ow+ox] = in[c, oy*s-p+ky*d, ox*s-p+kx*d]
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* cols) {
  const int s = g.p.stride, pad = g.p.padding, d = g.p.dilation;
  for (int c = 0; c < g.cin; ++c) {
    const T* plane = in + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * g.kh + ky) * g.kw + kx) *
                            g.cols();
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * s - pad + ky * d;
          T* dst = row + static_cast<std::size_t>(oy) * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * s - pad + kx * d;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* in) {
  const int s = g.p.stride, pad = g.p.padding, d = g.p.dilation;
  for (int c = 0; c < g.cin; ++c) {
    T* plane = in + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * g.kh + ky) * g.kw +
                                                       kx) *
                                  g.cols();
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * s - pad + ky * d;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.ow;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * s - pad + kx * d;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void transpose(int rows, int cols, const T* src, T* dst) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      dst[static_cast<std::size_t>(c) * rows + r] =
          src[static_cast<std::size_t>(r) * cols + c];
    }
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Per-axis sampling table for half-pixel bilinear resizing.
struct AxisSamples {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

AxisSamples axis_samples(int in, int out) {
  AxisSamples a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = src - lo;
  }
  return a;
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding,
                    int dilation) {
  const int span = in + 2 * padding - dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dParams p) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h % 2 == 0 || ws.w % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + to_string(ws));
  }
  if (p.stride < 1 || p.dilation < 1 || p.padding < 0) {
    throw ShapeError("conv2d: need stride >= 1, dilation >= 1, padding >= 0");
  }
  if (ws.c != is.c) {
    throw ShapeError("conv2d: input has " + std::to_string(is.c) +
                     " channels but weight expects " + std::to_string(ws.c));
  }
  const bool has_bias = !bias.empty();
  if (has_bias && bias.numel() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) +
                     " != output channels " + std::to_string(ws.n));
  }
  const int oh = conv_out_extent(is.h, ws.h, p.stride, p.padding, p.dilation);
  const int ow = conv_out_extent(is.w, ws.w, p.stride, p.padding, p.dilation);
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("conv2d: non-positive output extent for input " +
                     to_string(is) + " and kernel " + to_string(ws));
  }

  const ConvGeometry g{is.c, is.h, is.w, ws.h, ws.w, oh, ow, p};
  const int cout = ws.n;
  Tensor<T> out(Shape{is.n, cout, oh, ow});
  std::vector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.rows()) *
                                              g.cols());
  const std::size_t in_stride = static_cast<std::size_t>(is.c) * is.h * is.w;
  const std::size_t out_stride = static_cast<std::size_t>(cout) * oh * ow;
  for (int n = 0; n < is.n; ++n) {
    const T* in = input.data().data() + n * in_stride;
    T* o = out.mutable_data().data() + n * out_stride;
    if (has_bias) {
      for (int c = 0; c < cout; ++c) {
        std::fill(o + static_cast<std::size_t>(c) * g.cols(),
                  o + static_cast<std::size_t>(c + 1) * g.cols(),
                  bias.data()[c]);
      }
    }
    const T* b = in;
    if (!g.pointwise()) {
      im2col(g, in, cols.data());
      b = cols.data();
    }
    gemm_nn(cout, g.rows(), g.cols(), weight.data().data(), b, o);
  }

  Tape<T>* tape = common_tape<T>({&input, &weight, &bias});
  if (tape == nullptr) return out;
  return tape->record(
      OpKind::conv2d, {input.node(), weight.node(), bias.node()}, out,
      [input, weight, bias, g, cout, in_stride, out_stride](
          std::span<const T> gout, Tape<T>& t) {
        std::span<T> gin = t.grad_for(input.node());
        std::span<T> gw = t.grad_for(weight.node());
        std::span<T> gb = t.grad_for(bias.node());
        std::vector<T> cols, dcols, colsT;
        if (!g.pointwise()) {
          cols.resize(static_cast<std::size_t>(g.rows()) * g.cols());
          dcols.resize(cols.size());
        }
        if (!gw.empty()) colsT.resize(static_cast<std::size_t>(g.rows()) * g.cols());
        const int batch = input.shape().n;
        for (int n = 0; n < batch; ++n) {
          const T* go = gout.data() + n * out_stride;
          const T* in = input.data().data() + n * in_stride;
          if (!gb.empty()) {
            for (int c = 0; c < cout; ++c) {
              T acc = 0;
              const T* row = go + static_cast<std::size_t>(c) * g.cols();
              for (int k = 0; k < g.cols(); ++k) acc += row[k];
              gb[c] += acc;
            }
          }
          if (!gw.empty()) {
            const T* b = in;
            if (!g.pointwise()) {
              im2col(g, in, cols.data());
              b = cols.data();
            }
            transpose(g.rows(), g.cols(), b, colsT.data());
            gemm_nt(cout, g.cols(), g.rows(), go, colsT.data(), gw.data());
          }
          if (!gin.empty()) {
            T* gi = gin.data() + n * in_stride;
            if (g.pointwise()) {
              gemm_tn(cout, g.rows(), g.cols(), weight.data().data(), go, gi);
            } else {
              std::fill(dcols.begin(), dcols.end(), T(0));
              gemm_tn(cout, g.rows(), g.cols(), weight.data().data(), go,
                      dcols.data());
              col2im_add(g, dcols.data(), gi);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int k, int stride, int padding) {
  if (k < 1 || stride < 1 || padding < 0) {
    throw ShapeError("avg_pool2d: need k >= 1, stride >= 1, padding >= 0");
  }
  const Shape& s = input.shape();
  const int oh = conv_out_extent(s.h, k, stride, padding, 1);
  const int ow = conv_out_extent(s.w, k, stride, padding, 1);
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("avg_pool2d: non-positive output extent for input " +
                     to_string(s) + " with k=" + std::to_string(k));
  }
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  const auto in = input.data();
  auto o = out.mutable_data();
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const T* plane = in.data() + static_cast<std::size_t>(nc) * s.plane();
    T* dst = o.data() + static_cast<std::size_t>(nc) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = oy * stride - padding;
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = ox * stride - padding;
        T acc = 0;
        for (int y = std::max(y0, 0); y < std::min(y0 + k, s.h); ++y) {
          const T* row = plane + static_cast<std::size_t>(y) * s.w;
          for (int x = std::max(x0, 0); x < std::min(x0 + k, s.w); ++x) {
            acc += row[x];
          }
        }
        dst[oy * ow + ox] = acc * inv;
      }
    }
  }

  Tape<T>* tape = common_tape<T>({&input});
  if (tape == nullptr) return out;
  return tape->record(
      OpKind::avg_pool2d, {input.node()}, out,
      [s, k, stride, padding, oh, ow, inv, node = input.node()](
          std::span<const T> gout, Tape<T>& t) {
        std::span<T> gin = t.grad_for(node);
        for (int nc = 0; nc < s.n * s.c; ++nc) {
          T* plane = gin.data() + static_cast<std::size_t>(nc) * s.plane();
          const T* src = gout.data() + static_cast<std::size_t>(nc) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int y0 = oy * stride - padding;
            for (int ox = 0; ox < ow; ++ox) {
              const int x0 = ox * stride - padding;
              const T gv = src[oy * ow + ox] * inv;
              for (int y = std::max(y0, 0); y < std::min(y0 + k, s.h); ++y) {
                T* row = plane + static_cast<std::size_t>(y) * s.w;
                for (int x = std::max(x0, 0); x < std::min(x0 + k, s.w); ++x) {
                  row[x] += gv;
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  const Shape& s = input.shape();
  if (s.h < 1 || s.w < 1) {
    throw ShapeError("global_avg_pool: empty spatial extent " + to_string(s));
  }
  const std::size_t plane = s.plane();
  const T inv = T(1) / static_cast<T>(plane);
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = input.data().data() + static_cast<std::size_t>(nc) * plane;
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    out.mutable_data()[nc] = acc * inv;
  }
  Tape<T>* tape = common_tape<T>({&input});
  if (tape == nullptr) return out;
  return tape->record(OpKind::global_avg_pool, {input.node()}, out,
                      [s, plane, inv, node = input.node()](
                          std::span<const T> gout, Tape<T>& t) {
                        std::span<T> gin = t.grad_for(node);
                        for (int nc = 0; nc < s.n * s.c; ++nc) {
                          const T gv = gout[nc] * inv;
                          T* p = gin.data() + static_cast<std::size_t>(nc) * plane;
                          for (std::size_t i = 0; i < plane; ++i) p[i] += gv;
                        }
                      });
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("bilinear_resize: output extents must be >= 1");
  }
  const Shape& s = input.shape();
  const AxisSamples ys = axis_samples(s.h, out_h);
  const AxisSamples xs = axis_samples(s.w, out_w);
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = input.data().data() + static_cast<std::size_t>(nc) * s.plane();
    T* o = out.mutable_data().data() +
           static_cast<std::size_t>(nc) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ys.frac[y]);
      const T* r0 = p + static_cast<std::size_t>(ys.lo[y]) * s.w;
      const T* r1 = p + static_cast<std::size_t>(ys.hi[y]) * s.w;
      for (int x = 0; x < out_w; ++x) {
        const T fx = static_cast<T>(xs.frac[x]);
        const T top = r0[xs.lo[x]] + fx * (r0[xs.hi[x]] - r0[xs.lo[x]]);
        const T bot = r1[xs.lo[x]] + fx * (r1[xs.hi[x]] - r1[xs.lo[x]]);
        o[y * out_w + x] = top + fy * (bot - top);
      }
    }
  }
  Tape<T>* tape = common_tape<T>({&input});
  if (tape == nullptr) return out;
  return tape->record(
      OpKind::bilinear_resize, {input.node()}, out,
      [s, out_h, out_w, ys, xs, node = input.node()](std::span<const T> gout,
                                                     Tape<T>& t) {
        std::span<T> gin = t.grad_for(node);
        for (int nc = 0; nc < s.n * s.c; ++nc) {
          T* p = gin.data() + static_cast<std::size_t>(nc) * s.plane();
          const T* g = gout.data() + static_cast<std::size_t>(nc) * out_h * out_w;
          for (int y = 0; y < out_h; ++y) {
            const T fy = static_cast<T>(ys.frac[y]);
            T* r0 = p + static_cast<std::size_t>(ys.lo[y]) * s.w;
            T* r1 = p + static_cast<std::size_t>(ys.hi[y]) * s.w;
            for (int x = 0; x < out_w; ++x) {
              const T fx = static_cast<T>(xs.frac[x]);
              const T gv = g[y * out_w + x];
              const T gt = gv * (T(1) - fy);
              const T gbm = gv * fy;
              r0[xs.lo[x]] += gt * (T(1) - fx);
              r0[xs.hi[x]] += gt * fx;
              r1[xs.lo[x]] += gbm * (T(1) - fx);
              r1[xs.hi[x]] += gbm * fx;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  const auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(in[i]);
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return out;
  return tape->record(OpKind::sigmoid, {x.node()}, out,
                      [out = out.detach(), node = x.node()](
                          std::span<const T> gout, Tape<T>& t) {
                        std::span<T> gin = t.grad_for(node);
                        const auto y = out.data();
                        for (std::size_t i = 0; i < gin.size(); ++i) {
                          gin[i] += gout[i] * y[i] * (T(1) - y[i]);
                        }
                      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  const auto in = x.data();
  // Written so that NaN passes through instead of becoming 0.
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] < T(0) ? T(0) : in[i];
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return out;
  return tape->record(OpKind::relu, {x.node()}, out,
                      [x = x.detach(), node = x.node()](std::span<const T> gout,
                                                        Tape<T>& t) {
                        std::span<T> gin = t.grad_for(node);
                        const auto in = x.data();
                        for (std::size_t i = 0; i < gin.size(); ++i) {
                          if (in[i] > T(0)) gin[i] += gout[i];
                        }
                      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  Tape<T>* tape = common_tape<T>({&a, &b});
  if (tape == nullptr) return out;
  return tape->record(OpKind::add, {a.node(), b.node()}, out,
                      [na = a.node(), nb = b.node()](std::span<const T> gout,
                                                     Tape<T>& t) {
                        for (int node : {na, nb}) {
                          std::span<T> g = t.grad_for(node);
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
                        }
                      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] - b.data()[i];
  Tape<T>* tape = common_tape<T>({&a, &b});
  if (tape == nullptr) return out;
  return tape->record(OpKind::sub, {a.node(), b.node()}, out,
                      [na = a.node(), nb = b.node()](std::span<const T> gout,
                                                     Tape<T>& t) {
                        std::span<T> ga = t.grad_for(na);
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
                        std::span<T> gb = t.grad_for(nb);
                        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gout[i];
                      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  Tape<T>* tape = common_tape<T>({&a, &b});
  if (tape == nullptr) return out;
  return tape->record(OpKind::mul, {a.node(), b.node()}, out,
                      [a = a.detach(), b = b.detach(), na = a.node(),
                       nb = b.node()](std::span<const T> gout, Tape<T>& t) {
                        std::span<T> ga = t.grad_for(na);
                        for (std::size_t i = 0; i < ga.size(); ++i) {
                          ga[i] += gout[i] * b.data()[i];
                        }
                        std::span<T> gb = t.grad_for(nb);
                        for (std::size_t i = 0; i < gb.size(); ++i) {
                          gb[i] += gout[i] * a.data()[i];
                        }
                      });
}

template <typename T>
Tensor<T> scalar_rsub(T s, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = s - a.data()[i];
  Tape<T>* tape = common_tape<T>({&a});
  if (tape == nullptr) return out;
  return tape->record(OpKind::scalar_rsub, {a.node()}, out,
                      [node = a.node()](std::span<const T> gout, Tape<T>& t) {
                        std::span<T> g = t.grad_for(node);
                        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gout[i];
                      });
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts[0].shape();
  int channels = 0;
  Tape<T>* tape = nullptr;
  for (const Tensor<T>& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: incompatible shapes " +
                       to_string(first) + " and " + to_string(s));
    }
    channels += s.c;
    Tape<T>* t = common_tape<T>({&p});
    if (t != nullptr) {
      if (tape != nullptr && tape != t) {
        throw ShapeError("operation mixes tensors from two different tapes");
      }
      tape = t;
    }
  }
  const std::size_t plane = first.plane();
  Tensor<T> out(Shape{first.n, channels, first.h, first.w});
  std::vector<int> nodes;
  std::vector<int> widths;
  for (int n = 0; n < first.n; ++n) {
    T* dst = out.mutable_data().data() +
             static_cast<std::size_t>(n) * channels * plane;
    for (const Tensor<T>& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      const T* src = p.data().data() + n * len;
      std::copy(src, src + len, dst);
      dst += len;
    }
  }
  if (tape == nullptr) return out;
  for (const Tensor<T>& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.shape().c);
  }
  return tape->record(
      OpKind::concat_channels, nodes, out,
      [nodes, widths, batch = first.n, channels, plane](std::span<const T> gout,
                                                        Tape<T>& t) {
        int offset = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          std::span<T> g = t.grad_for(nodes[k]);
          const std::size_t len = static_cast<std::size_t>(widths[k]) * plane;
          if (!g.empty()) {
            for (int n = 0; n < batch; ++n) {
              const T* src = gout.data() +
                             (static_cast<std::size_t>(n) * channels + offset) *
                                 plane;
              T* dst = g.data() + n * len;
              for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
            }
          }
          offset += widths[k];
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return out;
  return tape->record(OpKind::sum, {x.node()}, out,
                      [node = x.node()](std::span<const T> gout, Tape<T>& t) {
                        std::span<T> g = t.grad_for(node);
                        for (T& v : g) v += gout[0];
                      });
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& target) {
  require_same_shape(logits.shape(), target.shape(), "bce_loss");
  const std::size_t count = logits.numel();
  if (count == 0) throw ShapeError("bce_loss: empty input");
  const auto z = logits.data();
  const auto gt = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double g = static_cast<double>(gt[i]);
    if (g != 0.0 && g != 1.0) {
      throw ShapeError("bce_loss: target value " + std::to_string(g) +
                       " at index " + std::to_string(i) + " is not 0 or 1");
    }
    const double p = std::clamp(stable_sigmoid(static_cast<double>(z[i])),
                                kBceEpsilon, 1.0 - kBceEpsilon);
    acc -= g * std::log(p) + (1.0 - g) * std::log1p(-p);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / count));
  Tape<T>* tape = common_tape<T>({&logits, &target});
  if (tape == nullptr) return out;
  return tape->record(
      OpKind::bce_loss, {logits.node(), target.node()}, out,
      [logits = logits.detach(), target = target.detach(), count,
       node = logits.node()](std::span<const T> gout, Tape<T>& t) {
        std::span<T> g = t.grad_for(node);
        if (g.empty()) return;
        const double scale = static_cast<double>(gout[0]) / count;
        const auto z = logits.data();
        const auto gt = target.data();
        for (std::size_t i = 0; i < count; ++i) {
          const double p = stable_sigmoid(static_cast<double>(z[i]));
          if (p <= kBceEpsilon || p >= 1.0 - kBceEpsilon) continue;
          g[i] += static_cast<T>((p - static_cast<double>(gt[i])) * scale);
        }
      });
}

#define BANET_INSTANTIATE_OPS(T)                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,              \
                            const Tensor<T>&, Conv2dParams);                 \
  template Tensor<T> avg_pool2d(const Tensor<T>&, int, int, int);            \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                      \
  template Tensor<T> bilinear_resize(const Tensor<T>&, int, int);            \
  template Tensor<T> sigmoid(const Tensor<T>&);                              \
  template Tensor<T> relu(const Tensor<T>&);                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> scalar_rsub(T, const Tensor<T>&);                       \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);            \
  template Tensor<T> sum(const Tensor<T>&);                                  \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);

BANET_INSTANTIATE_OPS(float)
BANET_INSTANTIATE_OPS(double)

#undef BANET_INSTANTIATE_OPS

}  // namespace banet::ops
