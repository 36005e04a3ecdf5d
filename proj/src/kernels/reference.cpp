// Serial reference kernels. Straight loops, no tiling; these are what the
// parallel kernels are tested and benchmarked against.

#include <algorithm>
#include <cmath>
#include <vector>

#include "segnext/kernels.hpp"

namespace segnext {

ConvSpec ConvSpec::make(int64_t in, int64_t out, int64_t kh, int64_t kw, int64_t stride,
                        int64_t groups, bool bias) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kh = kh;
  s.kw = kw;
  s.sh = stride;
  s.sw = stride;
  s.ph = kh / 2;
  s.pw = kw / 2;
  s.groups = groups;
  s.bias = bias;
  return s;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw Error("conv2d: channel counts must be positive");
  if (kh < 1 || kw < 1) throw Error("conv2d: kernel size must be >= 1");
  if (sh < 1 || sw < 1) throw Error("conv2d: stride must be >= 1");
  if (ph < 0 || pw < 0) throw Error("conv2d: padding must be >= 0");
  if (groups < 1) throw Error("conv2d: groups must be >= 1");
  if (in_channels % groups != 0) {
    throw Error("conv2d: in_channels " + std::to_string(in_channels) + " not divisible by groups " +
                std::to_string(groups));
  }
  if (out_channels % groups != 0) {
    throw Error("conv2d: out_channels " + std::to_string(out_channels) +
                " not divisible by groups " + std::to_string(groups));
  }
}

Shape ConvSpec::output_shape(const Shape& input) const {
  validate();
  if (input.c != in_channels) {
    throw Error("conv2d: input channel dimension is " + std::to_string(input.c) + ", expected " +
                std::to_string(in_channels));
  }
  const int64_t oh = (input.h + 2 * ph - kh) / sh + 1;
  const int64_t ow = (input.w + 2 * pw - kw) / sw + 1;
  if (input.h + 2 * ph < kh || oh < 1) {
    throw Error("conv2d: input height " + std::to_string(input.h) + " too small for kernel height " +
                std::to_string(kh));
  }
  if (input.w + 2 * pw < kw || ow < 1) {
    throw Error("conv2d: input width " + std::to_string(input.w) + " too small for kernel width " +
                std::to_string(kw));
  }
  return {input.n, out_channels, oh, ow};
}

namespace kernels {

BilinearTap bilinear_tap(int64_t dst, int64_t in_size, int64_t out_size, bool align_corners) {
  double src = 0.0;
  if (align_corners) {
    src = out_size > 1 ? static_cast<double>(dst) * static_cast<double>(in_size - 1) /
                             static_cast<double>(out_size - 1)
                       : 0.0;
  } else {
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
  }
  int64_t i0 = static_cast<int64_t>(std::floor(src));
  i0 = std::min(i0, in_size - 1);
  const int64_t i1 = std::min(i0 + 1, in_size - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

namespace reference {

template <class T>
void conv2d_forward(const T* in, const Shape& s, const T* weight, const T* bias,
                    const ConvSpec& spec, T* out) {
  const Shape o = spec.output_shape(s);
  const int64_t cin_g = spec.in_channels / spec.groups;
  const int64_t cout_g = spec.out_channels / spec.groups;
  for (int64_t n = 0; n < o.n; ++n) {
    for (int64_t co = 0; co < o.c; ++co) {
      const int64_t g = co / cout_g;
      for (int64_t oy = 0; oy < o.h; ++oy) {
        for (int64_t ox = 0; ox < o.w; ++ox) {
          T acc = bias ? bias[co] : T(0);
          for (int64_t cl = 0; cl < cin_g; ++cl) {
            const int64_t ci = g * cin_g + cl;
            for (int64_t ky = 0; ky < spec.kh; ++ky) {
              const int64_t iy = oy * spec.sh - spec.ph + ky;
              if (iy < 0 || iy >= s.h) continue;
              for (int64_t kx = 0; kx < spec.kw; ++kx) {
                const int64_t ix = ox * spec.sw - spec.pw + kx;
                if (ix < 0 || ix >= s.w) continue;
                acc += weight[((co * cin_g + cl) * spec.kh + ky) * spec.kw + kx] *
                       in[((n * s.c + ci) * s.h + iy) * s.w + ix];
              }
            }
          }
          out[((n * o.c + co) * o.h + oy) * o.w + ox] = acc;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_input(const T* grad_out, const Shape& o, const T* weight,
                           const ConvSpec& spec, const Shape& s, T* grad_in) {
  const int64_t cin_g = spec.in_channels / spec.groups;
  const int64_t cout_g = spec.out_channels / spec.groups;
  std::fill(grad_in, grad_in + s.numel(), T(0));
  for (int64_t n = 0; n < o.n; ++n) {
    for (int64_t co = 0; co < o.c; ++co) {
      const int64_t g = co / cout_g;
      for (int64_t oy = 0; oy < o.h; ++oy) {
        for (int64_t ox = 0; ox < o.w; ++ox) {
          const T go = grad_out[((n * o.c + co) * o.h + oy) * o.w + ox];
          for (int64_t cl = 0; cl < cin_g; ++cl) {
            const int64_t ci = g * cin_g + cl;
            for (int64_t ky = 0; ky < spec.kh; ++ky) {
              const int64_t iy = oy * spec.sh - spec.ph + ky;
              if (iy < 0 || iy >= s.h) continue;
              for (int64_t kx = 0; kx < spec.kw; ++kx) {
                const int64_t ix = ox * spec.sw - spec.pw + kx;
                if (ix < 0 || ix >= s.w) continue;
                grad_in[((n * s.c + ci) * s.h + iy) * s.w + ix] +=
                    weight[((co * cin_g + cl) * spec.kh + ky) * spec.kw + kx] * go;
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_weight(const T* grad_out, const Shape& o, const T* in, const Shape& s,
                            const ConvSpec& spec, T* grad_weight, T* grad_bias) {
  const int64_t cin_g = spec.in_channels / spec.groups;
  const int64_t cout_g = spec.out_channels / spec.groups;
  std::fill(grad_weight, grad_weight + spec.weight_count(), T(0));
  if (grad_bias) std::fill(grad_bias, grad_bias + spec.out_channels, T(0));
  for (int64_t n = 0; n < o.n; ++n) {
    for (int64_t co = 0; co < o.c; ++co) {
      const int64_t g = co / cout_g;
      for (int64_t oy = 0; oy < o.h; ++oy) {
        for (int64_t ox = 0; ox < o.w; ++ox) {
          const T go = grad_out[((n * o.c + co) * o.h + oy) * o.w + ox];
          if (grad_bias) grad_bias[co] += go;
          for (int64_t cl = 0; cl < cin_g; ++cl) {
            const int64_t ci = g * cin_g + cl;
            for (int64_t ky = 0; ky < spec.kh; ++ky) {
              const int64_t iy = oy * spec.sh - spec.ph + ky;
              if (iy < 0 || iy >= s.h) continue;
              for (int64_t kx = 0; kx < spec.kw; ++kx) {
                const int64_t ix = ox * spec.sw - spec.pw + kx;
                if (ix < 0 || ix >= s.w) continue;
                grad_weight[((co * cin_g + cl) * spec.kh + ky) * spec.kw + kx] +=
                    go * in[((n * s.c + ci) * s.h + iy) * s.w + ix];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void channel_stats(const T* in, const Shape& s, double* mean, double* var) {
  const double count = static_cast<double>(s.n * s.plane());
  for (int64_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t i = 0; i < s.plane(); ++i) sum += in[(n * s.c + c) * s.plane() + i];
    const double m = sum / count;
    double sq = 0.0;
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t i = 0; i < s.plane(); ++i) {
        const double d = in[(n * s.c + c) * s.plane() + i] - m;
        sq += d * d;
      }
    mean[c] = m;
    var[c] = sq / count;
  }
}

template <class T>
void bilinear_forward(const T* in, const Shape& s, int64_t out_h, int64_t out_w,
                      bool align_corners, T* out) {
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = in + nc * s.plane();
    T* dst = out + nc * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const BilinearTap ty = bilinear_tap(oy, s.h, out_h, align_corners);
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const BilinearTap tx = bilinear_tap(ox, s.w, out_w, align_corners);
        const T ly = static_cast<T>(ty.frac);
        const T lx = static_cast<T>(tx.frac);
        const T top = (T(1) - lx) * src[ty.i0 * s.w + tx.i0] + lx * src[ty.i0 * s.w + tx.i1];
        const T bot = (T(1) - lx) * src[ty.i1 * s.w + tx.i0] + lx * src[ty.i1 * s.w + tx.i1];
        dst[oy * out_w + ox] = (T(1) - ly) * top + ly * bot;
      }
    }
  }
}

template <class T>
void bilinear_backward(const T* grad_out, int64_t out_h, int64_t out_w, const Shape& s,
                       bool align_corners, T* grad_in) {
  std::fill(grad_in, grad_in + s.numel(), T(0));
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* go = grad_out + nc * out_h * out_w;
    T* gi = grad_in + nc * s.plane();
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const BilinearTap ty = bilinear_tap(oy, s.h, out_h, align_corners);
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const BilinearTap tx = bilinear_tap(ox, s.w, out_w, align_corners);
        const T ly = static_cast<T>(ty.frac);
        const T lx = static_cast<T>(tx.frac);
        const T g = go[oy * out_w + ox];
        gi[ty.i0 * s.w + tx.i0] += (T(1) - ly) * (T(1) - lx) * g;
        gi[ty.i0 * s.w + tx.i1] += (T(1) - ly) * lx * g;
        gi[ty.i1 * s.w + tx.i0] += ly * (T(1) - lx) * g;
        gi[ty.i1 * s.w + tx.i1] += ly * lx * g;
      }
    }
  }
}

template <class T>
void gemm_batched(int64_t batch, int64_t m, int64_t n, int64_t k, const T* a, bool trans_a,
                  const T* b, bool trans_b, T* c) {
  for (int64_t bi = 0; bi < batch; ++bi) {
    const T* A = a + bi * m * k;
    const T* B = b + bi * k * n;
    T* C = c + bi * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (int64_t p = 0; p < k; ++p) {
          const T av = trans_a ? A[p * m + i] : A[i * k + p];
          const T bv = trans_b ? B[j * k + p] : B[p * n + j];
          acc += av * bv;
        }
        C[i * n + j] = acc;
      }
    }
  }
}

#define SEGNEXT_INSTANTIATE(T)                                                                    \
  template void conv2d_forward<T>(const T*, const Shape&, const T*, const T*, const ConvSpec&,   \
                                  T*);                                                            \
  template void conv2d_backward_input<T>(const T*, const Shape&, const T*, const ConvSpec&,       \
                                         const Shape&, T*);                                       \
  template void conv2d_backward_weight<T>(const T*, const Shape&, const T*, const Shape&,         \
                                          const ConvSpec&, T*, T*);                               \
  template void channel_stats<T>(const T*, const Shape&, double*, double*);                       \
  template void bilinear_forward<T>(const T*, const Shape&, int64_t, int64_t, bool, T*);          \
  template void bilinear_backward<T>(const T*, int64_t, int64_t, const Shape&, bool, T*);         \
  template void gemm_batched<T>(int64_t, int64_t, int64_t, int64_t, const T*, bool, const T*,     \
                                bool, T*);

SEGNEXT_INSTANTIATE(float)
SEGNEXT_INSTANTIATE(double)
#undef SEGNEXT_INSTANTIATE

}  // namespace reference
}  // namespace kernels
}  // namespace segnext
