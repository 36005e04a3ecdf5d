#pragma once

// Reverse-mode differentiation over a linear tape.
//
// A Tape records, in execution order, one node per operation whose inputs
// require gradients. Var is a cheap handle: the forward value plus the node
// index on its tape (-1 when nothing upstream needs a gradient). A tape built
// with recording disabled still evaluates every op and counts FLOPs but keeps
// no closures, so inference holds no intermediate activations.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "segnext/kernels.hpp"
#include "segnext/tensor.hpp"

namespace segnext {

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;

  const BasicTensor<T>& value() const { return value_; }
  const Shape& shape() const { return value_.shape(); }
  Tape<T>* tape() const { return tape_; }
  int32_t index() const { return index_; }
  bool requires_grad() const { return index_ >= 0; }

 private:
  friend class Tape<T>;
  Var(BasicTensor<T> value, Tape<T>* tape, int32_t index)
      : value_(std::move(value)), tape_(tape), index_(index) {}

  BasicTensor<T> value_;
  Tape<T>* tape_ = nullptr;
  int32_t index_ = -1;
};

/// Accumulates adjoint contributions during a backward sweep.
template <class T>
class GradSink {
 public:
  explicit GradSink(std::vector<BasicTensor<T>>& grads) : grads_(grads) {}
  /// Adds `grad` into the adjoint of node `index`; ignores index < 0.
  void add(int32_t index, BasicTensor<T> grad);

 private:
  std::vector<BasicTensor<T>>& grads_;
};

template <class T>
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape<T>* tape, std::vector<BasicTensor<T>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
  BasicTensor<T> of(const Var<T>& v) const;

 private:
  const Tape<T>* tape_ = nullptr;
  std::vector<BasicTensor<T>> grads_;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(const BasicTensor<T>& grad_out, GradSink<T>& sink)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  /// Leaf whose gradient is wanted.
  Var<T> variable(BasicTensor<T> value);
  /// Leaf treated as a constant.
  Var<T> constant(BasicTensor<T> value);

  /// Records an op result. `backward` is stored only when the tape records
  /// and `needs_grad` is set.
  Var<T> record(BasicTensor<T> value, bool needs_grad, Backward backward);

  /// Replays adjoints in reverse execution order. Does not consume the tape.
  Gradients<T> backward(const Var<T>& loss) const;

  void add_flops(int64_t n) { flops_ += n; }
  int64_t flops() const { return flops_; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool recording_;
  int64_t flops_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

/// Differentiable operations. All operands must live on the same tape.
namespace ag {

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              const ConvSpec& spec);
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const ConvSpec& spec) {
  return conv2d(x, weight, std::optional<Var<T>>{}, spec);
}

struct BatchNormOptions {
  bool training = false;
  double eps = 1e-5;
  double momentum = 0.1;
};

/// gamma/beta hold C elements; running stats are updated in training mode.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BasicTensor<T>& running_mean, BasicTensor<T>& running_var,
                  const BatchNormOptions& opts);

template <class T>
Var<T> gelu(const Var<T>& x);
template <class T>
Var<T> relu(const Var<T>& x);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> add_scalar(const Var<T>& x, T s);
template <class T>
Var<T> mul_scalar(const Var<T>& x, T s);

/// x[n, c, :, :] * scale[c]
template <class T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& scale);

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int64_t out_h, int64_t out_w, bool align_corners = false);

template <class T>
Var<T> concat_channels(std::span<const Var<T>> parts);

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Horizontal mirror along W.
template <class T>
Var<T> flip_horizontal(const Var<T>& x);

/// Batched matrix product on (B, 1, rows, cols) tensors.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);

template <class T>
Var<T> sum(const Var<T>& x);

/// Mean pixel cross-entropy over labels != ignore_index. Labels are N*H*W.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const uint8_t> labels, int ignore_index = 255);

}  // namespace ag

/// Plain (non-recorded) elementwise GELU, exposed for tests.
double gelu_scalar(double x);

}  // namespace segnext
