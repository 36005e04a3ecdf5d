#include "segnext/optim.hpp"

#include <cmath>

namespace segnext {

double poly_lr(int64_t i, const LrSchedule& s) {
  if (s.max_iter < 1) throw Error("poly_lr: max_iter must be >= 1");
  if (i < 0 || i > s.max_iter) {
    throw Error("poly_lr: iteration " + std::to_string(i) + " outside [0, " + std::to_string(s.max_iter) + "]");
  }
  const double decayed =
      s.base_lr * std::pow(1.0 - static_cast<double>(i) / static_cast<double>(s.max_iter), s.power);
  if (s.warmup_iters > 0 && i < s.warmup_iters) {
    const double k = static_cast<double>(i) / static_cast<double>(s.warmup_iters);
    return decayed * (s.warmup_ratio + (1.0 - s.warmup_ratio) * k);
  }
  return decayed;
}

template <class T>
OptimState<T> OptimState<T>::create(const std::vector<BasicTensor<T>>& params, AdamWOptions opts) {
  OptimState st;
  st.opts = opts;
  for (const auto& p : params) {
    st.m.emplace_back(p.shape());
    st.v.emplace_back(p.shape());
  }
  return st;
}

template <class T>
void adamw_step(std::vector<BasicTensor<T>>& params, const std::vector<BasicTensor<T>>& grads,
                const std::vector<ParamSpec>& specs, OptimState<T>& st, double lr) {
  if (params.size() != grads.size() || params.size() != specs.size() || params.size() != st.m.size()) {
    throw Error("adamw_step: parameter, gradient and state counts differ");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw Error("adamw_step: gradient shape " + grads[i].shape().str() + " differs from parameter '" +
                  specs[i].name + "' " + params[i].shape().str());
    }
    for (T g : grads[i].data()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw Error("adamw_step: non-finite gradient in parameter '" + specs[i].name + "'");
      }
    }
  }
  st.step += 1;
  const auto& o = st.opts;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    const double decay = specs[i].decay ? 1.0 - lr * o.weight_decay : 1.0;
    auto p = params[i].mutable_data();
    auto m = st.m[i].mutable_data();
    auto v = st.v[i].mutable_data();
    const auto g = grads[i].data();
    for (size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = o.beta1 * static_cast<double>(m[k]) + (1.0 - o.beta1) * gk;
      const double vk = o.beta2 * static_cast<double>(v[k]) + (1.0 - o.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = (mk / bc1) / (std::sqrt(vk / bc2) + o.eps);
      p[k] = static_cast<T>(static_cast<double>(p[k]) * decay - lr * update);
    }
  }
}

template struct OptimState<float>;
template struct OptimState<double>;
template void adamw_step(std::vector<Tensor>&, const std::vector<Tensor>&, const std::vector<ParamSpec>&,
                         OptimState<float>&, double);
template void adamw_step(std::vector<Tensor64>&, const std::vector<Tensor64>&, const std::vector<ParamSpec>&,
                         OptimState<double>&, double);

}  // namespace segnext
