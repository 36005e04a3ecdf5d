#pragma once

#include <array>
#include <cstdint>
#include <variant>
#include <vector>

#include "segnext/encoder.hpp"

namespace segnext {

struct NmfOptions {
  int64_t rank = 64;
  int64_t iters = 6;
  uint64_t seed = 0;
  double eps = 1e-6;
};

/// Multiplicative-update NMF on a batch of (C x N) matrices stored as
/// (B, 1, C, N). Bases (C x r) and codes (r x N) start from seeded
/// uniform(0, 1] values shared across the batch. Each iteration updates the
/// codes, then the bases; gradients flow through every unrolled update.
/// When `residuals` is given it receives the Frobenius residual before the
/// first and after every iteration.
template <class T>
Var<T> nmf(const Var<T>& x, const NmfOptions& opts, std::vector<double>* residuals = nullptr);

template <class T>
struct NmfResult {
  BasicTensor<T> reconstruction;
  BasicTensor<T> bases;
  BasicTensor<T> codes;
  std::vector<double> residuals;
  bool nonnegative = true;  // every intermediate bases/codes entry >= 0
};

/// Validated matrix entry point: x is a single non-negative C x N matrix
/// given as (1, 1, C, N).
template <class T>
NmfResult<T> nmf_reconstruct(const BasicTensor<T>& x, int64_t rank, int64_t iters, uint64_t seed);

/// Analytic cost of `nmf` for one (C x N) matrix.
int64_t nmf_flops(int64_t channels, int64_t n, const NmfOptions& opts);

/// (c) Aggregate stages 2-4 (optionally 1) on the finest grid used, NMF
/// global context, classifier, upsample to input size.
struct HamDecoder {
  bool with_stage1 = false;
  ConvLayer pre_proj;
  BatchNormLayer pre_bn;
  NmfOptions nmf;
  ConvLayer post_proj;
  BatchNormLayer post_bn;
  ConvLayer align;
  BatchNormLayer align_bn;
  ConvLayer classifier;

  static HamDecoder create(Registry& reg, const ModelConfig& cfg);
  template <class T>
  Var<T> forward(Context<T>& ctx, const EncoderFeatures<T>& feats, int64_t out_h, int64_t out_w) const;
  void cost(CostReport& report, const std::array<Shape, 4>& feats, int64_t out_h, int64_t out_w) const;
};

/// (a) Per-stage linear projections, fused at stride 4.
struct MlpDecoder {
  std::array<ConvLayer, 4> proj;
  ConvLayer fuse;
  BatchNormLayer fuse_bn;
  ConvLayer classifier;

  static MlpDecoder create(Registry& reg, const ModelConfig& cfg);
  template <class T>
  Var<T> forward(Context<T>& ctx, const EncoderFeatures<T>& feats, int64_t out_h, int64_t out_w) const;
  void cost(CostReport& report, const std::array<Shape, 4>& feats, int64_t out_h, int64_t out_w) const;
};

/// (b) Last stage only: two 3x3 conv+BN+GELU layers at stride 32.
struct CoreDecoder {
  ConvLayer conv1;
  BatchNormLayer bn1;
  ConvLayer conv2;
  BatchNormLayer bn2;
  ConvLayer classifier;

  static CoreDecoder create(Registry& reg, const ModelConfig& cfg);
  template <class T>
  Var<T> forward(Context<T>& ctx, const EncoderFeatures<T>& feats, int64_t out_h, int64_t out_w) const;
  void cost(CostReport& report, const std::array<Shape, 4>& feats, int64_t out_h, int64_t out_w) const;
};

using Decoder = std::variant<MlpDecoder, CoreDecoder, HamDecoder>;

Decoder create_decoder(Registry& reg, const ModelConfig& cfg);

template <class T>
Var<T> decoder_forward(const Decoder& dec, Context<T>& ctx, const EncoderFeatures<T>& feats,
                       int64_t out_h, int64_t out_w);

/// Classifier layer of any decoder variant.
const ConvLayer& decoder_classifier(const Decoder& dec);

}  // namespace segnext
