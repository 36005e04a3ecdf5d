#pragma once

// Parameter registry, materialized parameter stores and the two primitive
// layers (convolution, batch norm) every block is built from.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "segnext/autograd.hpp"
#include "segnext/cost.hpp"
#include "segnext/kernels.hpp"

namespace segnext {

enum class InitKind { zeros, constant, trunc_normal, normal };

struct InitSpec {
  InitKind kind = InitKind::zeros;
  double value = 0.0;  // std for the normal kinds, fill for constant

  static InitSpec zeros() { return {InitKind::zeros, 0.0}; }
  static InitSpec constant(double v) { return {InitKind::constant, v}; }
  static InitSpec trunc_normal(double std) { return {InitKind::trunc_normal, std}; }
  static InitSpec normal(double std) { return {InitKind::normal, std}; }
};

struct ParamSpec {
  std::string name;
  Shape shape;
  InitSpec init;
  bool decay = true;  // false for biases, norms and layer scales
};

struct BufferSpec {
  std::string name;
  Shape shape;
  double fill = 0.0;
};

/// Ordered description of every learnable tensor and state buffer of a model.
class Registry {
 public:
  int param(std::string name, Shape shape, InitSpec init, bool decay);
  int buffer(std::string name, Shape shape, double fill);

  const std::vector<ParamSpec>& params() const { return params_; }
  const std::vector<BufferSpec>& buffers() const { return buffers_; }
  /// Total number of learnable scalars.
  int64_t scalar_count() const;

 private:
  std::vector<ParamSpec> params_;
  std::vector<BufferSpec> buffers_;
};

/// Parameter and buffer values aligned with a Registry.
template <class T>
struct ParamStore {
  std::vector<BasicTensor<T>> params;
  std::vector<BasicTensor<T>> buffers;

  /// Deterministic initialization: parameter i draws from a stream seeded by
  /// (seed, i), so values do not depend on T.
  static ParamStore initialize(const Registry& reg, uint64_t seed);

  int64_t scalar_count() const;

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params) out.params.push_back(p.template cast<U>());
    for (const auto& b : buffers) out.buffers.push_back(b.template cast<U>());
    return out;
  }
};

/// Per-forward binding of parameters onto a tape.
template <class T>
struct Context {
  Tape<T>& tape;
  std::vector<Var<T>> params;
  std::vector<BasicTensor<T>> buffers;
  bool training = false;
  std::mt19937_64* rng = nullptr;  // drop-path masks; none when null

  Context(Tape<T>& t, const ParamStore<T>& store, bool train, bool requires_grad);
  const Var<T>& param(int i) const { return params[static_cast<size_t>(i)]; }
};

/// Zeroes whole samples of a residual branch with probability `rate` and
/// rescales the survivors; identity outside training.
template <class T>
Var<T> drop_path(Context<T>& ctx, const Var<T>& branch, double rate);

struct ConvLayer {
  std::string name;
  ConvSpec spec;
  int weight = -1;
  int bias = -1;

  /// Pointwise convs use trunc-normal(0.02); others use fan-out normal.
  static ConvLayer create(Registry& reg, std::string name, const ConvSpec& spec);
  static ConvLayer create(Registry& reg, std::string name, const ConvSpec& spec, InitSpec init);

  template <class T>
  Var<T> forward(Context<T>& ctx, const Var<T>& x) const;
  Shape cost(CostReport& report, const Shape& in) const;
};

struct BatchNormLayer {
  std::string name;
  int64_t channels = 0;
  int gamma = -1;
  int beta = -1;
  int running_mean = -1;
  int running_var = -1;

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  static BatchNormLayer create(Registry& reg, std::string name, int64_t channels);

  template <class T>
  Var<T> forward(Context<T>& ctx, const Var<T>& x) const;
  Shape cost(CostReport& report, const Shape& in) const;
};

}  // namespace segnext
