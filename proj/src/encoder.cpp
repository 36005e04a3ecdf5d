#include "segnext/encoder.hpp"

#include <algorithm>
#include <cctype>

namespace segnext {

std::string_view to_string(DecoderVariant v) {
  switch (v) {
    case DecoderVariant::mlp:
      return "a";
    case DecoderVariant::core:
      return "b";
    case DecoderVariant::ham:
      return "c";
  }
  return "c";
}

DecoderVariant decoder_variant_from_string(std::string_view s) {
  if (s == "a" || s == "mlp") return DecoderVariant::mlp;
  if (s == "b" || s == "core") return DecoderVariant::core;
  if (s == "c" || s == "ham") return DecoderVariant::ham;
  throw Error("unknown decoder variant '" + std::string(s) + "' (expected a, b or c)");
}

std::string_view to_string(AttentionKind k) {
  return k == AttentionKind::multi_scale ? "multi_scale" : "large_kernel";
}

AttentionKind attention_kind_from_string(std::string_view s) {
  if (s == "multi_scale") return AttentionKind::multi_scale;
  if (s == "large_kernel") return AttentionKind::large_kernel;
  throw Error("unknown attention kind '" + std::string(s) + "' (expected multi_scale or large_kernel)");
}

void ModelConfig::validate() const {
  for (size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string where = "stage " + std::to_string(i + 1);
    if (s.channels <= 0) throw Error(where + ": channels must be positive");
    if (s.depth <= 0) throw Error(where + ": depth must be positive");
    if (s.expansion <= 0) throw Error(where + ": expansion must be positive");
  }
  if (stages[0].channels % 2 != 0) throw Error("stage 1: channels must be even for the stem");
  if (decoder_dim <= 0) throw Error("decoder_dim must be positive");
  if (num_classes < 1) throw Error("num_classes must be positive");
  if (ham_rank < 1) throw Error("ham_rank must be >= 1");
  if (ham_iters < 1) throw Error("ham_iters must be >= 1");
  if (ham_rank > decoder_dim) throw Error("ham_rank must not exceed decoder_dim");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) throw Error("drop_path must be in [0, 1)");
}

namespace {
ModelConfig make(std::array<int64_t, 4> c, std::array<int64_t, 4> l, int64_t dim, int64_t rank) {
  ModelConfig cfg;
  const std::array<int64_t, 4> er{8, 8, 4, 4};
  for (size_t i = 0; i < 4; ++i) cfg.stages[i] = {c[i], l[i], er[i]};
  cfg.decoder_dim = dim;
  cfg.ham_rank = rank;
  cfg.num_classes = 150;
  return cfg;
}
}  // namespace

ModelConfig ModelConfig::preset(std::string_view raw) {
  std::string name(raw);
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (name.rfind("mscan-", 0) == 0) name = "segnext-" + name.substr(6);
  // NMF rank is decoder_dim / 16 for the published sizes.
  if (name == "segnext-t") return make({32, 64, 160, 256}, {3, 3, 5, 2}, 256, 16);
  if (name == "segnext-s") return make({64, 128, 320, 512}, {2, 2, 4, 2}, 256, 16);
  if (name == "segnext-b") return make({64, 128, 320, 512}, {3, 3, 12, 3}, 512, 32);
  if (name == "segnext-l") return make({64, 128, 320, 512}, {3, 5, 27, 3}, 1024, 64);
  if (name == "segnext-micro") {
    ModelConfig cfg = make({8, 16, 32, 64}, {1, 1, 1, 1}, 64, 4);
    cfg.num_classes = 3;
    return cfg;
  }
  throw Error("unknown model preset '" + std::string(raw) + "'");
}

std::vector<std::string> ModelConfig::preset_names() {
  return {"segnext-t", "segnext-s", "segnext-b", "segnext-l", "segnext-micro",
          "mscan-t",   "mscan-s",   "mscan-b",   "mscan-l"};
}

Encoder Encoder::create(Registry& reg, const ModelConfig& cfg, const std::string& prefix) {
  cfg.validate();
  Encoder e;
  const int64_t c1 = cfg.stages[0].channels;
  e.stem1 = ConvLayer::create(reg, prefix + ".stem.conv1", ConvSpec::make(3, c1 / 2, 3, 3, 2));
  e.stem1_bn = BatchNormLayer::create(reg, prefix + ".stem.bn1", c1 / 2);
  e.stem2 = ConvLayer::create(reg, prefix + ".stem.conv2", ConvSpec::make(c1 / 2, c1, 3, 3, 2));
  e.stem2_bn = BatchNormLayer::create(reg, prefix + ".stem.bn2", c1);
  int64_t total = 0, index = 0;
  for (const auto& sc : cfg.stages) total += sc.depth;
  for (size_t s = 0; s < 4; ++s) {
    const std::string stage = prefix + ".stage" + std::to_string(s + 1);
    const auto& sc = cfg.stages[s];
    if (s > 0) {
      e.down[s - 1] = ConvLayer::create(
          reg, stage + ".down.conv", ConvSpec::make(cfg.stages[s - 1].channels, sc.channels, 3, 3, 2));
      e.down_bn[s - 1] = BatchNormLayer::create(reg, stage + ".down.bn", sc.channels);
    }
    for (int64_t b = 0; b < sc.depth; ++b) {
      e.stages[s].push_back(BlockLayer::create(reg, stage + ".block" + std::to_string(b),
                                               sc.channels, sc.expansion, cfg.attention));
      e.stages[s].back().drop_rate =
          total > 1 ? cfg.drop_path * static_cast<double>(index) / static_cast<double>(total - 1) : cfg.drop_path;
      ++index;
    }
  }
  return e;
}

template <class T>
EncoderFeatures<T> Encoder::forward(Context<T>& ctx, const Var<T>& image) const {
  const Shape s = image.shape();
  if (s.c != 3) throw Error("encoder: input must have 3 channels, got " + std::to_string(s.c));
  if (s.h < kMinInput || s.w < kMinInput) {
    throw Error("encoder: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                " is smaller than the minimum " + std::to_string(kMinInput) + "x" +
                std::to_string(kMinInput));
  }
  EncoderFeatures<T> out;
  Var<T> x = stem1_bn.forward(ctx, stem1.forward(ctx, image));
  x = stem2_bn.forward(ctx, stem2.forward(ctx, x));
  for (size_t st = 0; st < 4; ++st) {
    if (st > 0) x = down_bn[st - 1].forward(ctx, down[st - 1].forward(ctx, x));
    for (const auto& block : stages[st]) x = block.forward(ctx, x);
    out.f[st] = x;
  }
  return out;
}

std::array<Shape, 4> Encoder::cost(CostReport& report, const Shape& input) const {
  std::array<Shape, 4> shapes;
  Shape s = stem1_bn.cost(report, stem1.cost(report, input));
  s = stem2_bn.cost(report, stem2.cost(report, s));
  for (size_t st = 0; st < 4; ++st) {
    if (st > 0) s = down_bn[st - 1].cost(report, down[st - 1].cost(report, s));
    for (const auto& block : stages[st]) s = block.cost(report, s);
    shapes[st] = s;
  }
  return shapes;
}

template <class T>
EncoderModel<T> build_encoder(const ModelConfig& cfg, uint64_t seed, int64_t head_classes) {
  EncoderModel<T> m;
  m.config = cfg;
  m.encoder = Encoder::create(m.registry, cfg);
  m.head_classes = head_classes;
  if (head_classes > 0) {
    ConvLayer::create(m.registry, "head.fc",
                      ConvSpec::pointwise(cfg.stages[3].channels, head_classes));
  }
  m.store = ParamStore<T>::initialize(m.registry, seed);
  return m;
}

template EncoderFeatures<float> Encoder::forward(Context<float>&, const Var<float>&) const;
template EncoderFeatures<double> Encoder::forward(Context<double>&, const Var<double>&) const;
template EncoderModel<float> build_encoder<float>(const ModelConfig&, uint64_t, int64_t);
template EncoderModel<double> build_encoder<double>(const ModelConfig&, uint64_t, int64_t);

}  // namespace segnext
