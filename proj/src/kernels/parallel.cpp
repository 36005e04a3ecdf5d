// OpenMP kernels. Parallel loops always partition over output planes or
// output rows; reductions inside one output element run on a single thread.

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "segnext/kernels.hpp"

namespace segnext::kernels {

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

constexpr int64_t floor_div(int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
constexpr int64_t ceil_div(int64_t a, int64_t b) { return -floor_div(-a, b); }

// Output indices o in [lo, hi) whose input coordinate o*stride - pad + k lies in [0, size).
struct Range {
  int64_t lo;
  int64_t hi;
};
inline Range valid_range(int64_t k, int64_t pad, int64_t stride, int64_t size, int64_t out) {
  const int64_t lo = std::max<int64_t>(0, ceil_div(pad - k, stride));
  const int64_t hi = std::min<int64_t>(out, floor_div(size - 1 + pad - k, stride) + 1);
  return {lo, std::max(lo, hi)};
}

constexpr int64_t kTile = 256;

// out[n, co, p] = bias[co] + sum_ci w[co, ci] * in[n, ci, p]
template <class T>
void pointwise(const T* in, int64_t batch, int64_t cin, int64_t plane, const T* w, const T* bias,
               int64_t cout, T* out) {
  const int64_t tiles = (plane + kTile - 1) / kTile;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < batch; ++n) {
    for (int64_t t = 0; t < tiles; ++t) {
      const int64_t p0 = t * kTile;
      const int64_t len = std::min(kTile, plane - p0);
      const T* ib = in + n * cin * plane + p0;
      T* ob = out + n * cout * plane + p0;
      int64_t co = 0;
      for (; co + 4 <= cout; co += 4) {
        T* o0 = ob + (co + 0) * plane;
        T* o1 = ob + (co + 1) * plane;
        T* o2 = ob + (co + 2) * plane;
        T* o3 = ob + (co + 3) * plane;
        const T b0 = bias ? bias[co + 0] : T(0);
        const T b1 = bias ? bias[co + 1] : T(0);
        const T b2 = bias ? bias[co + 2] : T(0);
        const T b3 = bias ? bias[co + 3] : T(0);
        for (int64_t p = 0; p < len; ++p) {
          o0[p] = b0;
          o1[p] = b1;
          o2[p] = b2;
          o3[p] = b3;
        }
        for (int64_t ci = 0; ci < cin; ++ci) {
          const T w0 = w[(co + 0) * cin + ci];
          const T w1 = w[(co + 1) * cin + ci];
          const T w2 = w[(co + 2) * cin + ci];
          const T w3 = w[(co + 3) * cin + ci];
          const T* x = ib + ci * plane;
#pragma omp simd
          for (int64_t p = 0; p < len; ++p) {
            const T xv = x[p];
            o0[p] += w0 * xv;
            o1[p] += w1 * xv;
            o2[p] += w2 * xv;
            o3[p] += w3 * xv;
          }
        }
      }
      for (; co < cout; ++co) {
        T* o = ob + co * plane;
        const T b = bias ? bias[co] : T(0);
        for (int64_t p = 0; p < len; ++p) o[p] = b;
        for (int64_t ci = 0; ci < cin; ++ci) {
          const T wv = w[co * cin + ci];
          const T* x = ib + ci * plane;
#pragma omp simd
          for (int64_t p = 0; p < len; ++p) o[p] += wv * x[p];
        }
      }
    }
  }
}

template <class T>
void pointwise_weight_grad(const T* grad_out, const T* in, int64_t batch, int64_t cin,
                           int64_t plane, int64_t cout, T* gw, T* gb) {
  const int64_t blocks = (cout + 3) / 4;
#pragma omp parallel for schedule(static)
  for (int64_t bk = 0; bk < blocks; ++bk) {
    const int64_t co = bk * 4;
    const int64_t width = std::min<int64_t>(4, cout - co);
    if (width == 4) {
      for (int64_t ci = 0; ci < cin; ++ci) {
        T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
        for (int64_t n = 0; n < batch; ++n) {
          const T* x = in + (n * cin + ci) * plane;
          const T* d0 = grad_out + (n * cout + co + 0) * plane;
          const T* d1 = grad_out + (n * cout + co + 1) * plane;
          const T* d2 = grad_out + (n * cout + co + 2) * plane;
          const T* d3 = grad_out + (n * cout + co + 3) * plane;
#pragma omp simd reduction(+ : a0, a1, a2, a3)
          for (int64_t p = 0; p < plane; ++p) {
            const T xv = x[p];
            a0 += d0[p] * xv;
            a1 += d1[p] * xv;
            a2 += d2[p] * xv;
            a3 += d3[p] * xv;
          }
        }
        gw[(co + 0) * cin + ci] = a0;
        gw[(co + 1) * cin + ci] = a1;
        gw[(co + 2) * cin + ci] = a2;
        gw[(co + 3) * cin + ci] = a3;
      }
    } else {
      for (int64_t c = co; c < co + width; ++c) {
        for (int64_t ci = 0; ci < cin; ++ci) {
          T acc = 0;
          for (int64_t n = 0; n < batch; ++n) {
            const T* x = in + (n * cin + ci) * plane;
            const T* d = grad_out + (n * cout + c) * plane;
#pragma omp simd reduction(+ : acc)
            for (int64_t p = 0; p < plane; ++p) acc += d[p] * x[p];
          }
          gw[c * cin + ci] = acc;
        }
      }
    }
    if (gb) {
      for (int64_t c = co; c < co + width; ++c) {
        T acc = 0;
        for (int64_t n = 0; n < batch; ++n) {
          const T* d = grad_out + (n * cout + c) * plane;
#pragma omp simd reduction(+ : acc)
          for (int64_t p = 0; p < plane; ++p) acc += d[p];
        }
        gb[c] = acc;
      }
    }
  }
}

}  // namespace

template <class T>
void conv2d_forward(const T* in, const Shape& s, const T* weight, const T* bias,
                    const ConvSpec& spec, T* out) {
  const Shape o = spec.output_shape(s);
  if (spec.is_pointwise()) {
    pointwise(in, s.n, s.c, s.plane(), weight, bias, o.c, out);
    return;
  }
  const int64_t cin_g = spec.in_channels / spec.groups;
  const int64_t cout_g = spec.out_channels / spec.groups;
  const int64_t ksize = spec.kh * spec.kw;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < o.n; ++n) {
    for (int64_t co = 0; co < o.c; ++co) {
      T* op = out + (n * o.c + co) * o.plane();
      const T b = bias ? bias[co] : T(0);
      for (int64_t i = 0; i < o.plane(); ++i) op[i] = b;
      const int64_t g = co / cout_g;
      for (int64_t cl = 0; cl < cin_g; ++cl) {
        const T* ip = in + (n * s.c + g * cin_g + cl) * s.plane();
        const T* wk = weight + (co * cin_g + cl) * ksize;
        for (int64_t ky = 0; ky < spec.kh; ++ky) {
          const Range ry = valid_range(ky, spec.ph, spec.sh, s.h, o.h);
          for (int64_t kx = 0; kx < spec.kw; ++kx) {
            const Range rx = valid_range(kx, spec.pw, spec.sw, s.w, o.w);
            const T wv = wk[ky * spec.kw + kx];
            for (int64_t oy = ry.lo; oy < ry.hi; ++oy) {
              const int64_t iy = oy * spec.sh - spec.ph + ky;
              T* orow = op + oy * o.w;
              const T* irow = ip + iy * s.w + kx - spec.pw;
              if (spec.sw == 1) {
#pragma omp simd
                for (int64_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (int64_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * irow[ox * spec.sw];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_input(const T* grad_out, const Shape& o, const T* weight,
                           const ConvSpec& spec, const Shape& s, T* grad_in) {
  if (spec.is_pointwise()) {
    std::vector<T> wt(static_cast<size_t>(spec.in_channels * spec.out_channels));
    for (int64_t co = 0; co < spec.out_channels; ++co)
      for (int64_t ci = 0; ci < spec.in_channels; ++ci)
        wt[static_cast<size_t>(ci * spec.out_channels + co)] = weight[co * spec.in_channels + ci];
    pointwise(grad_out, o.n, o.c, o.plane(), wt.data(), static_cast<const T*>(nullptr), s.c,
              grad_in);
    return;
  }
  const int64_t cin_g = spec.in_channels / spec.groups;
  const int64_t cout_g = spec.out_channels / spec.groups;
  const int64_t ksize = spec.kh * spec.kw;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t ci = 0; ci < s.c; ++ci) {
      T* dp = grad_in + (n * s.c + ci) * s.plane();
      std::fill(dp, dp + s.plane(), T(0));
      const int64_t g = ci / cin_g;
      const int64_t cl = ci % cin_g;
      for (int64_t co = g * cout_g; co < (g + 1) * cout_g; ++co) {
        const T* gp = grad_out + (n * o.c + co) * o.plane();
        const T* wk = weight + (co * cin_g + cl) * ksize;
        for (int64_t ky = 0; ky < spec.kh; ++ky) {
          const Range ry = valid_range(ky, spec.ph, spec.sh, s.h, o.h);
          for (int64_t kx = 0; kx < spec.kw; ++kx) {
            const Range rx = valid_range(kx, spec.pw, spec.sw, s.w, o.w);
            const T wv = wk[ky * spec.kw + kx];
            for (int64_t oy = ry.lo; oy < ry.hi; ++oy) {
              const int64_t iy = oy * spec.sh - spec.ph + ky;
              T* drow = dp + iy * s.w + kx - spec.pw;
              const T* grow = gp + oy * o.w;
              if (spec.sw == 1) {
#pragma omp simd
                for (int64_t ox = rx.lo; ox < rx.hi; ++ox) drow[ox] += wv * grow[ox];
              } else {
                for (int64_t ox = rx.lo; ox < rx.hi; ++ox) drow[ox * spec.sw] += wv * grow[ox];
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
  if (spec.is_pointwise()) {
    pointwise_weight_grad(grad_out, in, s.n, s.c, s.plane(), o.c, grad_weight, grad_bias);
    return;
  }
  const int64_t cin_g = spec.in_channels / spec.groups;
  const int64_t cout_g = spec.out_channels / spec.groups;
  const int64_t ksize = spec.kh * spec.kw;
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < o.c; ++co) {
    const int64_t g = co / cout_g;
    for (int64_t cl = 0; cl < cin_g; ++cl) {
      const int64_t ci = g * cin_g + cl;
      for (int64_t ky = 0; ky < spec.kh; ++ky) {
        const Range ry = valid_range(ky, spec.ph, spec.sh, s.h, o.h);
        for (int64_t kx = 0; kx < spec.kw; ++kx) {
          const Range rx = valid_range(kx, spec.pw, spec.sw, s.w, o.w);
          T acc = 0;
          for (int64_t n = 0; n < o.n; ++n) {
            const T* ip = in + (n * s.c + ci) * s.plane();
            const T* gp = grad_out + (n * o.c + co) * o.plane();
            for (int64_t oy = ry.lo; oy < ry.hi; ++oy) {
              const int64_t iy = oy * spec.sh - spec.ph + ky;
              const T* irow = ip + iy * s.w + kx - spec.pw;
              const T* grow = gp + oy * o.w;
              if (spec.sw == 1) {
#pragma omp simd reduction(+ : acc)
                for (int64_t ox = rx.lo; ox < rx.hi; ++ox) acc += grow[ox] * irow[ox];
              } else {
                for (int64_t ox = rx.lo; ox < rx.hi; ++ox) acc += grow[ox] * irow[ox * spec.sw];
              }
            }
          }
          grad_weight[(co * cin_g + cl) * ksize + ky * spec.kw + kx] = acc;
        }
      }
    }
    if (grad_bias) {
      T acc = 0;
      for (int64_t n = 0; n < o.n; ++n) {
        const T* gp = grad_out + (n * o.c + co) * o.plane();
#pragma omp simd reduction(+ : acc)
        for (int64_t i = 0; i < o.plane(); ++i) acc += gp[i];
      }
      grad_bias[co] = acc;
    }
  }
}

template <class T>
void channel_stats(const T* in, const Shape& s, double* mean, double* var) {
  const double count = static_cast<double>(s.n * s.plane());
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = in + (n * s.c + c) * s.plane();
#pragma omp simd reduction(+ : sum)
      for (int64_t i = 0; i < s.plane(); ++i) sum += static_cast<double>(p[i]);
    }
    const double m = sum / count;
    double sq = 0.0;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = in + (n * s.c + c) * s.plane();
#pragma omp simd reduction(+ : sq)
      for (int64_t i = 0; i < s.plane(); ++i) {
        const double d = static_cast<double>(p[i]) - m;
        sq += d * d;
      }
    }
    mean[c] = m;
    var[c] = sq / count;
  }
}

template <class T>
void bilinear_forward(const T* in, const Shape& s, int64_t out_h, int64_t out_w,
                      bool align_corners, T* out) {
  std::vector<BilinearTap> ty(static_cast<size_t>(out_h));
  std::vector<BilinearTap> tx(static_cast<size_t>(out_w));
  for (int64_t i = 0; i < out_h; ++i) ty[static_cast<size_t>(i)] = bilinear_tap(i, s.h, out_h, align_corners);
  for (int64_t i = 0; i < out_w; ++i) tx[static_cast<size_t>(i)] = bilinear_tap(i, s.w, out_w, align_corners);
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = in + nc * s.plane();
    T* dst = out + nc * out_h * out_w;
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const BilinearTap& y = ty[static_cast<size_t>(oy)];
      const T ly = static_cast<T>(y.frac);
      const T* r0 = src + y.i0 * s.w;
      const T* r1 = src + y.i1 * s.w;
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const BilinearTap& x = tx[static_cast<size_t>(ox)];
        const T lx = static_cast<T>(x.frac);
        const T top = (T(1) - lx) * r0[x.i0] + lx * r0[x.i1];
        const T bot = (T(1) - lx) * r1[x.i0] + lx * r1[x.i1];
        dst[oy * out_w + ox] = (T(1) - ly) * top + ly * bot;
      }
    }
  }
}

template <class T>
void bilinear_backward(const T* grad_out, int64_t out_h, int64_t out_w, const Shape& s,
                       bool align_corners, T* grad_in) {
  std::vector<BilinearTap> ty(static_cast<size_t>(out_h));
  std::vector<BilinearTap> tx(static_cast<size_t>(out_w));
  for (int64_t i = 0; i < out_h; ++i) ty[static_cast<size_t>(i)] = bilinear_tap(i, s.h, out_h, align_corners);
  for (int64_t i = 0; i < out_w; ++i) tx[static_cast<size_t>(i)] = bilinear_tap(i, s.w, out_w, align_corners);
#pragma omp parallel for schedule(static)
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* go = grad_out + nc * out_h * out_w;
    T* gi = grad_in + nc * s.plane();
    std::fill(gi, gi + s.plane(), T(0));
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const BilinearTap& y = ty[static_cast<size_t>(oy)];
      const T ly = static_cast<T>(y.frac);
      T* r0 = gi + y.i0 * s.w;
      T* r1 = gi + y.i1 * s.w;
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const BilinearTap& x = tx[static_cast<size_t>(ox)];
        const T lx = static_cast<T>(x.frac);
        const T g = go[oy * out_w + ox];
        r0[x.i0] += (T(1) - ly) * (T(1) - lx) * g;
        r0[x.i1] += (T(1) - ly) * lx * g;
        r1[x.i0] += ly * (T(1) - lx) * g;
        r1[x.i1] += ly * lx * g;
      }
    }
  }
}

template <class T>
void gemm_batched(int64_t batch, int64_t m, int64_t n, int64_t k, const T* a, bool trans_a,
                  const T* b, bool trans_b, T* c) {
  // Materialize transposed operands so the inner loop is contiguous.
  std::vector<T> at;
  std::vector<T> bt;
  if (trans_a) {
    at.resize(static_cast<size_t>(batch * m * k));
    for (int64_t bi = 0; bi < batch; ++bi)
      for (int64_t p = 0; p < k; ++p)
        for (int64_t i = 0; i < m; ++i)
          at[static_cast<size_t>(bi * m * k + i * k + p)] = a[bi * m * k + p * m + i];
    a = at.data();
  }
  if (trans_b) {
    bt.resize(static_cast<size_t>(batch * k * n));
    for (int64_t bi = 0; bi < batch; ++bi)
      for (int64_t j = 0; j < n; ++j)
        for (int64_t p = 0; p < k; ++p)
          bt[static_cast<size_t>(bi * k * n + p * n + j)] = b[bi * k * n + j * k + p];
    b = bt.data();
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t bi = 0; bi < batch; ++bi) {
    for (int64_t i = 0; i < m; ++i) {
      const T* arow = a + bi * m * k + i * k;
      const T* B = b + bi * k * n;
      T* crow = c + bi * m * n + i * n;
      std::fill(crow, crow + n, T(0));
      for (int64_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = B + p * n;
#pragma omp simd
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
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

}  // namespace segnext::kernels
