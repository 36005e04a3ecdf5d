#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "segnext/msca.hpp"

namespace segnext {

struct StageConfig {
  int64_t channels = 0;
  int64_t depth = 0;
  int64_t expansion = 0;
  bool operator==(const StageConfig&) const = default;
};

enum class DecoderVariant {
  mlp,  // (a) all four stages, MLP fusion at stride 4
  core, // (b) last stage only, heavy conv head
  ham,  // (c) last three stages + NMF global context
};

std::string_view to_string(DecoderVariant v);
DecoderVariant decoder_variant_from_string(std::string_view s);
std::string_view to_string(AttentionKind k);
AttentionKind attention_kind_from_string(std::string_view s);

struct ModelConfig {
  std::array<StageConfig, 4> stages{};
  int64_t decoder_dim = 256;
  int64_t num_classes = 150;
  DecoderVariant decoder = DecoderVariant::ham;
  bool stage1_in_decoder = false;
  int64_t ham_rank = 64;
  int64_t ham_iters = 6;
  AttentionKind attention = AttentionKind::multi_scale;
  double drop_path = 0.0;  // stochastic depth, rises linearly to this over all blocks

  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  /// Preset names: segnext-{t,s,b,l} (aliases mscan-{t,s,b,l}) and
  /// segnext-micro. Throws on unknown names.
  static ModelConfig preset(std::string_view name);
  static std::vector<std::string> preset_names();
};

/// Stage outputs at strides 4, 8, 16, 32.
template <class T>
struct EncoderFeatures {
  std::array<Var<T>, 4> f;
};

struct Encoder {
  static constexpr int64_t kMinInput = 32;

  ConvLayer stem1;
  BatchNormLayer stem1_bn;
  ConvLayer stem2;
  BatchNormLayer stem2_bn;
  std::array<ConvLayer, 3> down;
  std::array<BatchNormLayer, 3> down_bn;
  std::array<std::vector<BlockLayer>, 4> stages;

  static Encoder create(Registry& reg, const ModelConfig& cfg, const std::string& prefix = "encoder");

  template <class T>
  EncoderFeatures<T> forward(Context<T>& ctx, const Var<T>& image) const;
  std::array<Shape, 4> cost(CostReport& report, const Shape& input) const;
};

/// Spatial size after one 3x3 stride-2 pad-1 convolution.
constexpr int64_t downsampled(int64_t size) { return (size + 2 - 3) / 2 + 1; }

/// Encoder plus its own parameter store; optionally with the linear
/// classification head used for encoder-only parameter accounting.
template <class T>
struct EncoderModel {
  ModelConfig config;
  Registry registry;
  Encoder encoder;
  ParamStore<T> store;
  int64_t head_classes = 0;

  EncoderFeatures<T> forward(Context<T>& ctx, const Var<T>& image) const {
    return encoder.forward(ctx, image);
  }
};

template <class T>
EncoderModel<T> build_encoder(const ModelConfig& cfg, uint64_t seed, int64_t head_classes = 0);

}  // namespace segnext
