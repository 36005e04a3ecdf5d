#include "segnext/autograd.hpp"

namespace segnext {

template <class T>
void GradSink<T>::add(int32_t index, BasicTensor<T> grad) {
  if (index < 0) return;
  auto& slot = grads_[static_cast<size_t>(index)];
  if (slot.empty()) {
    slot = std::move(grad);
    return;
  }
  auto dst = slot.mutable_data();
  const auto src = grad.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class T>
BasicTensor<T> Gradients<T>::of(const Var<T>& v) const {
  if (v.tape() != tape_ || v.index() < 0) return BasicTensor<T>::zeros(v.shape());
  const auto& g = grads_[static_cast<size_t>(v.index())];
  if (g.empty()) return BasicTensor<T>::zeros(v.shape());
  return g.reshape(v.shape());
}

template <class T>
Var<T> Tape<T>::variable(BasicTensor<T> value) {
  if (!recording_) return Var<T>(std::move(value), this, -1);
  nodes_.push_back(Node{value.shape(), {}});
  return Var<T>(std::move(value), this, static_cast<int32_t>(nodes_.size() - 1));
}

template <class T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  return Var<T>(std::move(value), this, -1);
}

template <class T>
Var<T> Tape<T>::record(BasicTensor<T> value, bool needs_grad, Backward backward) {
  if (!recording_ || !needs_grad) return Var<T>(std::move(value), this, -1);
  nodes_.push_back(Node{value.shape(), std::move(backward)});
  return Var<T>(std::move(value), this, static_cast<int32_t>(nodes_.size() - 1));
}

template <class T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) const {
  if (loss.tape() != this) throw Error("backward: loss was not produced on this tape");
  if (loss.value().numel() != 1) {
    throw Error("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  std::vector<BasicTensor<T>> grads(nodes_.size());
  if (loss.index() < 0) return Gradients<T>(this, std::move(grads));
  grads[static_cast<size_t>(loss.index())] = BasicTensor<T>::full(loss.shape(), T(1));
  GradSink<T> sink(grads);
  for (int32_t i = loss.index(); i >= 0; --i) {
    const Node& node = nodes_[static_cast<size_t>(i)];
    if (!node.backward) continue;
    const BasicTensor<T> g = grads[static_cast<size_t>(i)];
    if (g.empty()) continue;
    node.backward(g, sink);
  }
  return Gradients<T>(this, std::move(grads));
}

template class GradSink<float>;
template class GradSink<double>;
template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace segnext
