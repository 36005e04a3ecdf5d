#pragma once

// Raw compute kernels over contiguous NCHW buffers.
//
// Two implementations live side by side:
//   segnext::kernels             OpenMP-parallel, tiled where it pays off.
//   segnext::kernels::reference  plain serial loops, kept as the test oracle
//                                and as the benchmark baseline.
// Every parallel kernel assigns each output element to exactly one thread and
// accumulates it in a fixed order, so results do not depend on thread count.

#include <cstdint>

#include "segnext/tensor.hpp"

namespace segnext {

/// Convolution geometry. Zero padding, cross-correlation (no kernel flip).
struct ConvSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kh = 1, kw = 1;
  int64_t sh = 1, sw = 1;
  int64_t ph = 0, pw = 0;
  int64_t groups = 1;
  bool bias = true;

  /// Padding defaults to floor(k/2) per axis.
  static ConvSpec make(int64_t in, int64_t out, int64_t kh, int64_t kw, int64_t stride = 1,
                       int64_t groups = 1, bool bias = true);
  static ConvSpec pointwise(int64_t in, int64_t out, bool bias = true) {
    return make(in, out, 1, 1, 1, 1, bias);
  }
  static ConvSpec depthwise(int64_t channels, int64_t kh, int64_t kw, bool bias = true) {
    return make(channels, channels, kh, kw, 1, channels, bias);
  }

  void validate() const;
  Shape weight_shape() const { return {out_channels, in_channels / groups, kh, kw}; }
  int64_t weight_count() const { return weight_shape().numel(); }
  int64_t param_count() const { return weight_count() + (bias ? out_channels : 0); }
  /// Throws naming the offending dimension when `input` does not fit.
  Shape output_shape(const Shape& input) const;
  bool is_pointwise() const {
    return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0 && groups == 1;
  }
  bool operator==(const ConvSpec&) const = default;
};

namespace kernels {

void set_num_threads(int threads);
int max_threads();

template <class T>
void conv2d_forward(const T* in, const Shape& in_shape, const T* weight, const T* bias,
                    const ConvSpec& spec, T* out);
template <class T>
void conv2d_backward_input(const T* grad_out, const Shape& out_shape, const T* weight,
                           const ConvSpec& spec, const Shape& in_shape, T* grad_in);
/// grad_bias may be null.
template <class T>
void conv2d_backward_weight(const T* grad_out, const Shape& out_shape, const T* in,
                            const Shape& in_shape, const ConvSpec& spec, T* grad_weight,
                            T* grad_bias);

/// Per-channel mean and biased variance over N, H, W.
template <class T>
void channel_stats(const T* in, const Shape& shape, double* mean, double* var);

template <class T>
void bilinear_forward(const T* in, const Shape& in_shape, int64_t out_h, int64_t out_w,
                      bool align_corners, T* out);
template <class T>
void bilinear_backward(const T* grad_out, int64_t out_h, int64_t out_w, const Shape& in_shape,
                       bool align_corners, T* grad_in);

/// C[b] = op(A[b]) * op(B[b]) with C of size m x n and inner dimension k.
template <class T>
void gemm_batched(int64_t batch, int64_t m, int64_t n, int64_t k, const T* a, bool trans_a,
                  const T* b, bool trans_b, T* c);

namespace reference {

template <class T>
void conv2d_forward(const T* in, const Shape& in_shape, const T* weight, const T* bias,
                    const ConvSpec& spec, T* out);
template <class T>
void conv2d_backward_input(const T* grad_out, const Shape& out_shape, const T* weight,
                           const ConvSpec& spec, const Shape& in_shape, T* grad_in);
template <class T>
void conv2d_backward_weight(const T* grad_out, const Shape& out_shape, const T* in,
                            const Shape& in_shape, const ConvSpec& spec, T* grad_weight,
                            T* grad_bias);
template <class T>
void channel_stats(const T* in, const Shape& shape, double* mean, double* var);
template <class T>
void bilinear_forward(const T* in, const Shape& in_shape, int64_t out_h, int64_t out_w,
                      bool align_corners, T* out);
template <class T>
void bilinear_backward(const T* grad_out, int64_t out_h, int64_t out_w, const Shape& in_shape,
                       bool align_corners, T* grad_in);
template <class T>
void gemm_batched(int64_t batch, int64_t m, int64_t n, int64_t k, const T* a, bool trans_a,
                  const T* b, bool trans_b, T* c);

}  // namespace reference

/// Source coordinate and blend weight for one bilinear output index.
struct BilinearTap {
  int64_t i0;
  int64_t i1;
  double frac;
};
BilinearTap bilinear_tap(int64_t dst, int64_t in_size, int64_t out_size, bool align_corners);

}  // namespace kernels
}  // namespace segnext
