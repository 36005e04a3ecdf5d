#pragma once

// Multi-scale convolutional attention and the encoder building block.
//
//   base = DW5x5(F)
//   Att  = Conv1x1(base + sum_k V_k(H_k(base)))      k in {7, 11, 21}
//   Out  = Att * F
//
// H_k is a depthwise (1,k) strip and V_k a depthwise (k,1) strip; the bare
// `base` term is the identity branch.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "segnext/nn.hpp"

namespace segnext {

enum class AttentionKind {
  multi_scale,   // identity + 7/11/21 strip branches
  large_kernel,  // a single 21 strip pair, no identity term
};

inline constexpr std::array<int64_t, 3> kStripKernels{7, 11, 21};
inline constexpr int64_t kLocalKernel = 5;

struct StripBranch {
  int64_t kernel = 0;
  ConvLayer horizontal;  // (1, k)
  ConvLayer vertical;    // (k, 1)
};

struct MscaLayer {
  std::string name;
  int64_t channels = 0;
  AttentionKind kind = AttentionKind::multi_scale;
  ConvLayer local;
  std::vector<StripBranch> branches;
  ConvLayer channel_mix;

  static MscaLayer create(Registry& reg, std::string name, int64_t channels, AttentionKind kind);

  /// Returns Att * F; shape preserved.
  template <class T>
  Var<T> forward(Context<T>& ctx, const Var<T>& f) const;
  /// The attention map alone.
  template <class T>
  Var<T> attention(Context<T>& ctx, const Var<T>& f) const;
  Shape cost(CostReport& report, const Shape& in) const;
};

/// Pre-norm residual block:
///   x1  = x  + ls1 * proj_out(MSCA(gelu(proj_in(bn1(x)))))
///   out = x1 + ls2 * fc2(gelu(dw3x3(fc1(bn2(x1)))))
struct BlockLayer {
  std::string name;
  int64_t channels = 0;
  int64_t expansion = 0;
  double drop_rate = 0.0;
  BatchNormLayer norm1;
  ConvLayer proj_in;
  MscaLayer msca;
  ConvLayer proj_out;
  int layer_scale1 = -1;
  BatchNormLayer norm2;
  ConvLayer fc1;
  ConvLayer dw;
  ConvLayer fc2;
  int layer_scale2 = -1;

  static constexpr double kLayerScaleInit = 1e-2;

  static BlockLayer create(Registry& reg, std::string name, int64_t channels, int64_t expansion,
                           AttentionKind kind);

  template <class T>
  Var<T> forward(Context<T>& ctx, const Var<T>& x) const;
  Shape cost(CostReport& report, const Shape& in) const;
};

}  // namespace segnext
