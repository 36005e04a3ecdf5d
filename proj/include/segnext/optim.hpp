#pragma once

#include <cstdint>
#include <vector>

#include "segnext/nn.hpp"

namespace segnext {

struct LrSchedule {
  double base_lr = 6e-5;
  int64_t max_iter = 2000;
  double power = 1.0;
  int64_t warmup_iters = 0;
  double warmup_ratio = 1e-6;
  bool operator==(const LrSchedule&) const = default;
};

/// base_lr * (1 - i / max_iter)^power, with an optional linear ramp from
/// warmup_ratio * base_lr over the first warmup_iters steps.
double poly_lr(int64_t i, const LrSchedule& sched);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  bool operator==(const AdamWOptions&) const = default;
};

template <class T>
struct OptimState {
  AdamWOptions opts;
  int64_t step = 0;
  std::vector<BasicTensor<T>> m;
  std::vector<BasicTensor<T>> v;

  /// Zero moments shaped like `params`.
  static OptimState create(const std::vector<BasicTensor<T>>& params, AdamWOptions opts = {});
};

/// One decoupled-weight-decay Adam step. Parameters whose spec has
/// decay == false are not decayed. Throws on a non-finite gradient, naming
/// the parameter.
template <class T>
void adamw_step(std::vector<BasicTensor<T>>& params, const std::vector<BasicTensor<T>>& grads,
                const std::vector<ParamSpec>& specs, OptimState<T>& state, double lr);

extern template struct OptimState<float>;
extern template struct OptimState<double>;

}  // namespace segnext
