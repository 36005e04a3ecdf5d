#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <vector>

#include "segnext/autograd.hpp"

namespace segnext {

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

namespace ag {
namespace {

template <class T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : vars) {
    if (v->tape() == nullptr) throw Error("operand was created outside any tape");
    if (tape == nullptr) tape = v->tape();
    if (v->tape() != tape) throw Error("operands belong to different tapes");
  }
  return tape;
}

template <class T>
bool any_grad(std::initializer_list<const Var<T>*> vars) {
  for (const Var<T>* v : vars)
    if (v->requires_grad()) return true;
  return false;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw Error(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str() +
                " (broadcasting is not supported)");
  }
}

template <class T, class F>
BasicTensor<T> map_unary(const BasicTensor<T>& x, F f) {
  BasicTensor<T> out(x.shape());
  const T* src = x.ptr();
  T* dst = out.mutable_ptr();
  const int64_t n = x.numel();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return out;
}

template <class T, class F>
BasicTensor<T> map_binary(const BasicTensor<T>& a, const BasicTensor<T>& b, F f) {
  BasicTensor<T> out(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* dst = out.mutable_ptr();
  const int64_t n = a.numel();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              const ConvSpec& spec) {
  Tape<T>* tape = bias ? common_tape<T>({&x, &weight, &*bias}) : common_tape<T>({&x, &weight});
  const Shape out_shape = spec.output_shape(x.shape());
  if (!(weight.shape() == spec.weight_shape()) &&
      weight.value().numel() != spec.weight_count()) {
    throw Error("conv2d: weight shape " + weight.shape().str() + " does not match expected " +
                spec.weight_shape().str());
  }
  if (spec.bias != bias.has_value()) throw Error("conv2d: bias presence does not match spec");
  if (bias && bias->value().numel() != spec.out_channels) {
    throw Error("conv2d: bias length " + std::to_string(bias->value().numel()) +
                " does not match out_channels " + std::to_string(spec.out_channels));
  }
  BasicTensor<T> out(out_shape);
  kernels::conv2d_forward(x.value().ptr(), x.shape(), weight.value().ptr(),
                          bias ? bias->value().ptr() : nullptr, spec, out.mutable_ptr());
  tape->add_flops(spec.weight_count() * out_shape.n * out_shape.plane());

  const bool needs = any_grad<T>({&x, &weight}) || (bias && bias->requires_grad());
  const int32_t xi = x.index();
  const int32_t wi = weight.index();
  const int32_t bi = bias ? bias->index() : -1;
  const BasicTensor<T> xv = x.value();
  const BasicTensor<T> wv = weight.value();
  return tape->record(std::move(out), needs,
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        if (xi >= 0) {
                          BasicTensor<T> gx(xv.shape());
                          kernels::conv2d_backward_input(g.ptr(), g.shape(), wv.ptr(), spec,
                                                         xv.shape(), gx.mutable_ptr());
                          sink.add(xi, std::move(gx));
                        }
                        if (wi >= 0 || bi >= 0) {
                          BasicTensor<T> gw(wv.shape());
                          BasicTensor<T> gb(Shape{1, spec.out_channels, 1, 1});
                          kernels::conv2d_backward_weight(g.ptr(), g.shape(), xv.ptr(), xv.shape(),
                                                          spec, gw.mutable_ptr(),
                                                          bi >= 0 ? gb.mutable_ptr() : nullptr);
                          sink.add(wi, std::move(gw));
                          sink.add(bi, std::move(gb));
                        }
                      });
}

template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
                  const BatchNormOptions& opts) {
  Tape<T>* tape = common_tape<T>({&x, &gamma, &beta});
  const Shape s = x.shape();
  const int64_t C = s.c;
  if (gamma.value().numel() != C || beta.value().numel() != C || running_mean.numel() != C ||
      running_var.numel() != C) {
    throw Error("batch_norm: per-channel parameter length does not match channel dimension " +
                std::to_string(C));
  }
  if (s.n * s.plane() == 0) throw Error("batch_norm: zero-size spatial extent " + s.str());
  if (!(opts.eps > 0.0)) throw Error("batch_norm: eps must be positive");

  std::vector<double> mean(static_cast<size_t>(C));
  std::vector<double> var(static_cast<size_t>(C));
  if (opts.training) {
    kernels::channel_stats(x.value().ptr(), s, mean.data(), var.data());
    const double m = static_cast<double>(s.n * s.plane());
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    for (int64_t c = 0; c < C; ++c) {
      const double unbiased = m > 1 ? var[c] * m / (m - 1) : var[c];
      rm[c] = static_cast<T>((1.0 - opts.momentum) * rm[c] + opts.momentum * mean[c]);
      rv[c] = static_cast<T>((1.0 - opts.momentum) * rv[c] + opts.momentum * unbiased);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
  }
  BasicTensor<T> invstd(Shape{1, C, 1, 1});
  for (int64_t c = 0; c < C; ++c) {
    invstd.mutable_data()[c] = static_cast<T>(1.0 / std::sqrt(var[c] + opts.eps));
  }
  BasicTensor<T> xhat(s);
  BasicTensor<T> out(s);
  {
    const T* xp = x.value().ptr();
    T* hp = xhat.mutable_ptr();
    T* op = out.mutable_ptr();
    const T* gp = gamma.value().ptr();
    const T* bp = beta.value().ptr();
    const T* ip = invstd.ptr();
    const int64_t plane = s.plane();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        const int64_t base = (n * C + c) * plane;
        const T mu = static_cast<T>(mean[c]);
        const T is = ip[c];
        const T ga = gp[c];
        const T be = bp[c];
        for (int64_t i = 0; i < plane; ++i) {
          const T h = (xp[base + i] - mu) * is;
          hp[base + i] = h;
          op[base + i] = ga * h + be;
        }
      }
    }
  }
  tape->add_flops(s.numel());

  const bool needs = any_grad<T>({&x, &gamma, &beta});
  const int32_t xi = x.index();
  const int32_t gi = gamma.index();
  const int32_t bi = beta.index();
  const BasicTensor<T> gv = gamma.value();
  const bool training = opts.training;
  return tape->record(std::move(out), needs, [=](const BasicTensor<T>& g, GradSink<T>& sink) {
    const int64_t plane = s.plane();
    const double m = static_cast<double>(s.n * plane);
    std::vector<double> sum_dy(static_cast<size_t>(C), 0.0);
    std::vector<double> sum_dyh(static_cast<size_t>(C), 0.0);
    const T* gp = g.ptr();
    const T* hp = xhat.ptr();
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
      double a = 0.0;
      double b = 0.0;
      for (int64_t n = 0; n < s.n; ++n) {
        const int64_t base = (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          a += static_cast<double>(gp[base + i]);
          b += static_cast<double>(gp[base + i]) * static_cast<double>(hp[base + i]);
        }
      }
      sum_dy[c] = a;
      sum_dyh[c] = b;
    }
    if (xi >= 0) {
      BasicTensor<T> gx(s);
      T* dx = gx.mutable_ptr();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t c = 0; c < C; ++c) {
          const int64_t base = (n * C + c) * plane;
          const T k = gv[c] * invstd[c];
          if (training) {
            const T mdy = static_cast<T>(sum_dy[c] / m);
            const T mdyh = static_cast<T>(sum_dyh[c] / m);
            for (int64_t i = 0; i < plane; ++i) {
              dx[base + i] = k * (gp[base + i] - mdy - hp[base + i] * mdyh);
            }
          } else {
            for (int64_t i = 0; i < plane; ++i) dx[base + i] = k * gp[base + i];
          }
        }
      }
      sink.add(xi, std::move(gx));
    }
    if (gi >= 0) {
      BasicTensor<T> gg(gv.shape());
      for (int64_t c = 0; c < C; ++c) gg.mutable_data()[c] = static_cast<T>(sum_dyh[c]);
      sink.add(gi, std::move(gg));
    }
    if (bi >= 0) {
      BasicTensor<T> gb(gv.shape());
      for (int64_t c = 0; c < C; ++c) gb.mutable_data()[c] = static_cast<T>(sum_dy[c]);
      sink.add(bi, std::move(gb));
    }
  });
}

template <class T>
Var<T> gelu(const Var<T>& x) {
  Tape<T>* tape = common_tape<T>({&x});
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  BasicTensor<T> out = map_unary(x.value(), [](T v) {
    return static_cast<T>(0.5 * v * (1.0 + std::erf(static_cast<double>(v) * kInvSqrt2)));
  });
  tape->add_flops(out.numel());
  const int32_t xi = x.index();
  const BasicTensor<T> xv = x.value();
  return tape->record(std::move(out), x.requires_grad(),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
                        sink.add(xi, map_binary(xv, g, [](T v, T gy) {
                                   const double d = static_cast<double>(v);
                                   const double cdf = 0.5 * (1.0 + std::erf(d * kInvSqrt2));
                                   const double pdf = kInvSqrt2Pi * std::exp(-0.5 * d * d);
                                   return static_cast<T>(gy * (cdf + d * pdf));
                                 }));
                      });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tape<T>* tape = common_tape<T>({&x});
  // NaN passes through, forward and backward
  BasicTensor<T> out = map_unary(x.value(), [](T v) { return v <= T(0) ? T(0) : v; });
  tape->add_flops(out.numel());
  const int32_t xi = x.index();
  const BasicTensor<T> xv = x.value();
  return tape->record(std::move(out), x.requires_grad(),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        sink.add(xi, map_binary(xv, g, [](T v, T gy) { return v <= T(0) ? T(0) : (v == v ? gy : v); }));
                      });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>* tape = common_tape<T>({&a, &b});
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> out = map_binary(a.value(), b.value(), [](T x, T y) { return x + y; });
  tape->add_flops(out.numel());
  const int32_t ai = a.index();
  const int32_t bi = b.index();
  return tape->record(std::move(out), any_grad<T>({&a, &b}),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        sink.add(ai, g);
                        sink.add(bi, g);
                      });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>* tape = common_tape<T>({&a, &b});
  require_same_shape(a.shape(), b.shape(), "mul");
  BasicTensor<T> out = map_binary(a.value(), b.value(), [](T x, T y) { return x * y; });
  tape->add_flops(out.numel());
  const int32_t ai = a.index();
  const int32_t bi = b.index();
  const BasicTensor<T> av = a.value();
  const BasicTensor<T> bv = b.value();
  return tape->record(std::move(out), any_grad<T>({&a, &b}),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        if (ai >= 0) sink.add(ai, map_binary(g, bv, [](T x, T y) { return x * y; }));
                        if (bi >= 0) sink.add(bi, map_binary(g, av, [](T x, T y) { return x * y; }));
                      });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  Tape<T>* tape = common_tape<T>({&a, &b});
  require_same_shape(a.shape(), b.shape(), "div");
  BasicTensor<T> out = map_binary(a.value(), b.value(), [](T x, T y) { return x / y; });
  tape->add_flops(out.numel());
  const int32_t ai = a.index();
  const int32_t bi = b.index();
  const BasicTensor<T> bv = b.value();
  const BasicTensor<T> ov = out;
  return tape->record(std::move(out), any_grad<T>({&a, &b}),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        if (ai >= 0) sink.add(ai, map_binary(g, bv, [](T x, T y) { return x / y; }));
                        if (bi >= 0) {
                          BasicTensor<T> q = map_binary(ov, bv, [](T o, T y) { return o / y; });
                          sink.add(bi, map_binary(g, q, [](T x, T y) { return -x * y; }));
                        }
                      });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T s) {
  Tape<T>* tape = common_tape<T>({&x});
  BasicTensor<T> out = map_unary(x.value(), [s](T v) { return v + s; });
  tape->add_flops(out.numel());
  const int32_t xi = x.index();
  return tape->record(std::move(out), x.requires_grad(),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) { sink.add(xi, g); });
}

template <class T>
Var<T> mul_scalar(const Var<T>& x, T s) {
  Tape<T>* tape = common_tape<T>({&x});
  BasicTensor<T> out = map_unary(x.value(), [s](T v) { return v * s; });
  tape->add_flops(out.numel());
  const int32_t xi = x.index();
  return tape->record(std::move(out), x.requires_grad(),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        sink.add(xi, map_unary(g, [s](T v) { return v * s; }));
                      });
}

template <class T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& scale) {
  Tape<T>* tape = common_tape<T>({&x, &scale});
  const Shape s = x.shape();
  if (scale.value().numel() != s.c) {
    throw Error("channel_scale: scale length " + std::to_string(scale.value().numel()) +
                " does not match channel dimension " + std::to_string(s.c));
  }
  BasicTensor<T> out(s);
  const T* xp = x.value().ptr();
  const T* sp = scale.value().ptr();
  T* op = out.mutable_ptr();
  const int64_t plane = s.plane();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const int64_t base = (n * s.c + c) * plane;
      for (int64_t i = 0; i < plane; ++i) op[base + i] = xp[base + i] * sp[c];
    }
  tape->add_flops(out.numel());
  const int32_t xi = x.index();
  const int32_t si = scale.index();
  const BasicTensor<T> xv = x.value();
  const BasicTensor<T> sv = scale.value();
  return tape->record(std::move(out), any_grad<T>({&x, &scale}),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        const int64_t pl = s.plane();
                        const T* gp = g.ptr();
                        if (xi >= 0) {
                          BasicTensor<T> gx(s);
                          T* dp = gx.mutable_ptr();
                          for (int64_t n = 0; n < s.n; ++n)
                            for (int64_t c = 0; c < s.c; ++c) {
                              const int64_t base = (n * s.c + c) * pl;
                              for (int64_t i = 0; i < pl; ++i) dp[base + i] = gp[base + i] * sv[c];
                            }
                          sink.add(xi, std::move(gx));
                        }
                        if (si >= 0) {
                          BasicTensor<T> gs(sv.shape());
                          const T* xq = xv.ptr();
                          for (int64_t c = 0; c < s.c; ++c) {
                            T acc = 0;
                            for (int64_t n = 0; n < s.n; ++n) {
                              const int64_t base = (n * s.c + c) * pl;
                              for (int64_t i = 0; i < pl; ++i) acc += gp[base + i] * xq[base + i];
                            }
                            gs.mutable_data()[c] = acc;
                          }
                          sink.add(si, std::move(gs));
                        }
                      });
}

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int64_t out_h, int64_t out_w, bool align_corners) {
  Tape<T>* tape = common_tape<T>({&x});
  if (out_h < 1 || out_w < 1) throw Error("resize_bilinear: output size must be >= 1");
  const Shape s = x.shape();
  if (s.numel() == 0) throw Error("resize_bilinear: zero-size input " + s.str());
  if (s.h == out_h && s.w == out_w) return x;
  BasicTensor<T> out(Shape{s.n, s.c, out_h, out_w});
  kernels::bilinear_forward(x.value().ptr(), s, out_h, out_w, align_corners, out.mutable_ptr());
  tape->add_flops(8 * out.numel());
  const int32_t xi = x.index();
  return tape->record(std::move(out), x.requires_grad(),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        BasicTensor<T> gx(s);
                        kernels::bilinear_backward(g.ptr(), out_h, out_w, s, align_corners,
                                                   gx.mutable_ptr());
                        sink.add(xi, std::move(gx));
                      });
}

template <class T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  Tape<T>* tape = nullptr;
  bool needs = false;
  Shape s = parts[0].shape();
  int64_t channels = 0;
  for (const auto& p : parts) {
    Tape<T>* t = common_tape<T>({&p});
    if (tape && t != tape) throw Error("operands belong to different tapes");
    tape = t;
    if (p.shape().n != s.n) {
      throw Error("concat_channels: batch dimension mismatch " + p.shape().str() + " vs " + s.str());
    }
    if (p.shape().h != s.h || p.shape().w != s.w) {
      throw Error("concat_channels: spatial mismatch " + p.shape().str() + " vs " + s.str());
    }
    channels += p.shape().c;
    needs = needs || p.requires_grad();
  }
  const Shape os{s.n, channels, s.h, s.w};
  BasicTensor<T> out(os);
  T* op = out.mutable_ptr();
  std::vector<int32_t> idx;
  std::vector<int64_t> chans;
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t block = p.shape().c * s.plane();
    for (int64_t n = 0; n < s.n; ++n) {
      std::copy_n(p.value().ptr() + n * block, block, op + (n * channels + offset) * s.plane());
    }
    offset += p.shape().c;
    idx.push_back(p.index());
    chans.push_back(p.shape().c);
  }
  return tape->record(std::move(out), needs, [=](const BasicTensor<T>& g, GradSink<T>& sink) {
    int64_t off = 0;
    for (size_t k = 0; k < idx.size(); ++k) {
      const int64_t c = chans[k];
      if (idx[k] >= 0) {
        BasicTensor<T> gp(Shape{os.n, c, os.h, os.w});
        const int64_t block = c * os.plane();
        for (int64_t n = 0; n < os.n; ++n) {
          std::copy_n(g.ptr() + (n * os.c + off) * os.plane(), block, gp.mutable_ptr() + n * block);
        }
        sink.add(idx[k], std::move(gp));
      }
      off += c;
    }
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tape<T>* tape = common_tape<T>({&x});
  BasicTensor<T> out = x.value().reshape(shape);
  const int32_t xi = x.index();
  const Shape in = x.shape();
  return tape->record(std::move(out), x.requires_grad(),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) { sink.add(xi, g.reshape(in)); });
}

namespace {
template <class T>
BasicTensor<T> flip_w(const BasicTensor<T>& x) {
  const Shape s = x.shape();
  BasicTensor<T> out(s);
  const T* src = x.ptr();
  T* dst = out.mutable_ptr();
  const int64_t rows = s.n * s.c * s.h;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t i = 0; i < s.w; ++i) dst[r * s.w + i] = src[r * s.w + (s.w - 1 - i)];
  return out;
}
}  // namespace

template <class T>
Var<T> flip_horizontal(const Var<T>& x) {
  Tape<T>* tape = common_tape<T>({&x});
  const int32_t xi = x.index();
  return tape->record(flip_w(x.value()), x.requires_grad(),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) { sink.add(xi, flip_w(g)); });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  Tape<T>* tape = common_tape<T>({&a, &b});
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.c != 1 || bs.c != 1) throw Error("matmul: operands must have a unit channel dimension");
  if (as.n != bs.n) {
    throw Error("matmul: batch dimension mismatch " + as.str() + " vs " + bs.str());
  }
  const int64_t m = trans_a ? as.w : as.h;
  const int64_t k = trans_a ? as.h : as.w;
  const int64_t kb = trans_b ? bs.w : bs.h;
  const int64_t n = trans_b ? bs.h : bs.w;
  if (k != kb) {
    throw Error("matmul: inner dimension mismatch " + std::to_string(k) + " vs " + std::to_string(kb));
  }
  BasicTensor<T> out(Shape{as.n, 1, m, n});
  kernels::gemm_batched(as.n, m, n, k, a.value().ptr(), trans_a, b.value().ptr(), trans_b,
                        out.mutable_ptr());
  tape->add_flops(as.n * m * n * k);
  const int32_t ai = a.index();
  const int32_t bi = b.index();
  const BasicTensor<T> av = a.value();
  const BasicTensor<T> bv = b.value();
  return tape->record(std::move(out), any_grad<T>({&a, &b}),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        // C = op(A) op(B); dop(A) = G op(B)^T, dop(B) = op(A)^T G.
                        if (ai >= 0) {
                          BasicTensor<T> ga(as);
                          if (!trans_a) {
                            kernels::gemm_batched(as.n, m, k, n, g.ptr(), false, bv.ptr(), !trans_b,
                                                  ga.mutable_ptr());
                          } else {
                            kernels::gemm_batched(as.n, k, m, n, bv.ptr(), trans_b, g.ptr(), true,
                                                  ga.mutable_ptr());
                          }
                          sink.add(ai, std::move(ga));
                        }
                        if (bi >= 0) {
                          BasicTensor<T> gb(bs);
                          if (!trans_b) {
                            kernels::gemm_batched(as.n, k, n, m, av.ptr(), !trans_a, g.ptr(), false,
                                                  gb.mutable_ptr());
                          } else {
                            kernels::gemm_batched(as.n, n, k, m, g.ptr(), true, av.ptr(), trans_a,
                                                  gb.mutable_ptr());
                          }
                          sink.add(bi, std::move(gb));
                        }
                      });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  Tape<T>* tape = common_tape<T>({&x});
  double acc = 0.0;
  for (T v : x.value().data()) acc += static_cast<double>(v);
  tape->add_flops(x.value().numel());
  const int32_t xi = x.index();
  const Shape s = x.shape();
  return tape->record(BasicTensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(acc)), x.requires_grad(),
                      [=](const BasicTensor<T>& g, GradSink<T>& sink) {
                        sink.add(xi, BasicTensor<T>::full(s, g[0]));
                      });
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const uint8_t> labels, int ignore_index) {
  Tape<T>* tape = common_tape<T>({&logits});
  const Shape s = logits.shape();
  const int64_t K = s.c;
  const int64_t plane = s.plane();
  if (static_cast<int64_t>(labels.size()) != s.n * plane) {
    throw Error("cross_entropy: label count " + std::to_string(labels.size()) +
                " does not match logits " + s.str());
  }
  BasicTensor<T> prob(s);
  const T* lp = logits.value().ptr();
  T* pp = prob.mutable_ptr();
  double total = 0.0;
  int64_t count = 0;
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t i = 0; i < plane; ++i) {
      const int label = labels[static_cast<size_t>(n * plane + i)];
      const bool ignored = label == ignore_index;
      if (!ignored && label >= K) {
        throw Error("cross_entropy: label " + std::to_string(label) + " out of range for " +
                    std::to_string(K) + " classes");
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(lp[(n * K + k) * plane + i]));
      double z = 0.0;
      for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(lp[(n * K + k) * plane + i]) - mx);
      for (int64_t k = 0; k < K; ++k) {
        pp[(n * K + k) * plane + i] =
            static_cast<T>(std::exp(static_cast<double>(lp[(n * K + k) * plane + i]) - mx) / z);
      }
      if (ignored) continue;
      total += std::log(z) + mx - static_cast<double>(lp[(n * K + label) * plane + i]);
      ++count;
    }
  }
  if (count == 0) throw Error("cross_entropy: every pixel is ignored");
  const int32_t li = logits.index();
  std::vector<uint8_t> lab(labels.begin(), labels.end());
  return tape->record(
      BasicTensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(total / static_cast<double>(count))),
      logits.requires_grad(), [=](const BasicTensor<T>& g, GradSink<T>& sink) {
        BasicTensor<T> gl(s);
        T* d = gl.mutable_ptr();
        const T* p = prob.ptr();
        const T scale = g[0] / static_cast<T>(count);
        for (int64_t n = 0; n < s.n; ++n) {
          for (int64_t i = 0; i < plane; ++i) {
            const int label = lab[static_cast<size_t>(n * plane + i)];
            for (int64_t k = 0; k < K; ++k) {
              const int64_t at = (n * K + k) * plane + i;
              if (label == ignore_index) {
                d[at] = T(0);
              } else {
                d[at] = (p[at] - (k == label ? T(1) : T(0))) * scale;
              }
            }
          }
        }
        sink.add(li, std::move(gl));
      });
}

#define SEGNEXT_INSTANTIATE(T)                                                                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&,             \
                         const ConvSpec&);                                                        \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BasicTensor<T>&,        \
                             BasicTensor<T>&, const BatchNormOptions&);                           \
  template Var<T> gelu(const Var<T>&);                                                            \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> div(const Var<T>&, const Var<T>&);                                              \
  template Var<T> add_scalar(const Var<T>&, T);                                                   \
  template Var<T> mul_scalar(const Var<T>&, T);                                                   \
  template Var<T> channel_scale(const Var<T>&, const Var<T>&);                                    \
  template Var<T> resize_bilinear(const Var<T>&, int64_t, int64_t, bool);                         \
  template Var<T> concat_channels(std::span<const Var<T>>);                                       \
  template Var<T> reshape(const Var<T>&, Shape);                                                  \
  template Var<T> flip_horizontal(const Var<T>&);                                                 \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                               \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> cross_entropy(const Var<T>&, std::span<const uint8_t>, int);

SEGNEXT_INSTANTIATE(float)
SEGNEXT_INSTANTIATE(double)
#undef SEGNEXT_INSTANTIATE

}  // namespace ag
}  // namespace segnext
