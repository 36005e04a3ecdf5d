#pragma once

#include <memory>

#include "segnext/cost.hpp"
#include "segnext/decoder.hpp"
#include "segnext/encoder.hpp"

namespace segnext {

/// Model structure without parameter values: layer graph and registry.
struct Architecture {
  ModelConfig config;
  Registry registry;
  Encoder encoder;
  Decoder decoder;

  static std::shared_ptr<const Architecture> build(const ModelConfig& cfg);

  /// Per-layer cost of a single-image forward at h x w. Encoder layers come
  /// first; every decoder record name starts with "decoder.".
  CostReport cost(int64_t h, int64_t w) const;
};

/// Encoder + decoder with a flat, ordered parameter store.
template <class T>
class SegModel {
 public:
  SegModel() = default;
  SegModel(std::shared_ptr<const Architecture> arch, ParamStore<T> store);

  static SegModel build(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return arch_->config; }
  const Architecture& arch() const { return *arch_; }
  std::shared_ptr<const Architecture> arch_ptr() const { return arch_; }
  const Registry& registry() const { return arch_->registry; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }

  /// Logits N x num_classes x H x W. In training mode the updated running
  /// statistics are left in ctx.buffers; see commit_buffers().
  Var<T> forward(Context<T>& ctx, const Var<T>& image) const;
  EncoderFeatures<T> encode(Context<T>& ctx, const Var<T>& image) const;

  /// Eval-mode forward without gradient recording.
  BasicTensor<T> predict(const BasicTensor<T>& image, int64_t* flops = nullptr) const;

  void commit_buffers(const Context<T>& ctx) { store_.buffers = ctx.buffers; }

  template <class U>
  SegModel<U> cast() const {
    return SegModel<U>(arch_, store_.template cast<U>());
  }

 private:
  std::shared_ptr<const Architecture> arch_;
  ParamStore<T> store_;
};

extern template class SegModel<float>;
extern template class SegModel<double>;

}  // namespace segnext
