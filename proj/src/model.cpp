#include "segnext/model.hpp"

namespace segnext {

std::shared_ptr<const Architecture> Architecture::build(const ModelConfig& cfg) {
  cfg.validate();
  auto arch = std::make_shared<Architecture>();
  arch->config = cfg;
  arch->encoder = Encoder::create(arch->registry, cfg);
  arch->decoder = create_decoder(arch->registry, cfg);
  return arch;
}

CostReport Architecture::cost(int64_t h, int64_t w) const {
  CostReport report;
  report.input_h = h;
  report.input_w = w;
  const auto feats = encoder.cost(report, Shape{1, 3, h, w});
  std::visit([&](const auto& d) { d.cost(report, feats, h, w); }, decoder);
  return report;
}

template <class T>
SegModel<T>::SegModel(std::shared_ptr<const Architecture> arch, ParamStore<T> store)
    : arch_(std::move(arch)), store_(std::move(store)) {
  const auto& specs = arch_->registry.params();
  if (store_.params.size() != specs.size() || store_.buffers.size() != arch_->registry.buffers().size()) {
    throw Error("parameter store does not match the model registry");
  }
  for (size_t i = 0; i < specs.size(); ++i) {
    if (store_.params[i].numel() != specs[i].shape.numel()) {
      throw Error("parameter '" + specs[i].name + "' has " + std::to_string(store_.params[i].numel()) +
                  " elements, expected " + std::to_string(specs[i].shape.numel()));
    }
  }
}

template <class T>
SegModel<T> SegModel<T>::build(const ModelConfig& cfg, uint64_t seed) {
  auto arch = Architecture::build(cfg);
  auto store = ParamStore<T>::initialize(arch->registry, seed);
  return SegModel<T>(std::move(arch), std::move(store));
}

template <class T>
EncoderFeatures<T> SegModel<T>::encode(Context<T>& ctx, const Var<T>& image) const {
  return arch_->encoder.forward(ctx, image);
}

template <class T>
Var<T> SegModel<T>::forward(Context<T>& ctx, const Var<T>& image) const {
  const auto feats = arch_->encoder.forward(ctx, image);
  return decoder_forward(arch_->decoder, ctx, feats, image.shape().h, image.shape().w);
}

template <class T>
BasicTensor<T> SegModel<T>::predict(const BasicTensor<T>& image, int64_t* flops) const {
  Tape<T> tape(false);
  Context<T> ctx(tape, store_, false, false);
  auto out = forward(ctx, tape.constant(image)).value();
  if (flops) *flops = tape.flops();
  return out;
}

template class SegModel<float>;
template class SegModel<double>;

}  // namespace segnext
