#include "segnext/nn.hpp"

#include <cmath>
#include <random>

namespace segnext {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<double> draw(const ParamSpec& spec, uint64_t seed, size_t index) {
  std::vector<double> v(static_cast<size_t>(spec.shape.numel()), 0.0);
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(index + 1)));
  std::normal_distribution<double> normal(0.0, 1.0);
  switch (spec.init.kind) {
    case InitKind::zeros:
      break;
    case InitKind::constant:
      std::fill(v.begin(), v.end(), spec.init.value);
      break;
    case InitKind::normal:
      for (auto& x : v) x = spec.init.value * normal(rng);
      break;
    case InitKind::trunc_normal:
      for (auto& x : v) {
        double z = normal(rng);
        while (std::abs(z) > 2.0) z = normal(rng);
        x = spec.init.value * z;
      }
      break;
  }
  return v;
}

}  // namespace

int Registry::param(std::string name, Shape shape, InitSpec init, bool decay) {
  params_.push_back({std::move(name), shape, init, decay});
  return static_cast<int>(params_.size() - 1);
}

int Registry::buffer(std::string name, Shape shape, double fill) {
  buffers_.push_back({std::move(name), shape, fill});
  return static_cast<int>(buffers_.size() - 1);
}

int64_t Registry::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.shape.numel();
  return n;
}

template <class T>
ParamStore<T> ParamStore<T>::initialize(const Registry& reg, uint64_t seed) {
  ParamStore<T> store;
  store.params.reserve(reg.params().size());
  for (size_t i = 0; i < reg.params().size(); ++i) {
    const auto& spec = reg.params()[i];
    const auto values = draw(spec, seed, i);
    store.params.emplace_back(spec.shape, std::vector<T>(values.begin(), values.end()));
  }
  for (const auto& b : reg.buffers()) {
    store.buffers.emplace_back(b.shape, static_cast<T>(b.fill));
  }
  return store;
}

template <class T>
int64_t ParamStore<T>::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

template <class T>
Context<T>::Context(Tape<T>& t, const ParamStore<T>& store, bool train, bool requires_grad)
    : tape(t), buffers(store.buffers), training(train) {
  params.reserve(store.params.size());
  for (const auto& p : store.params) {
    params.push_back(requires_grad ? tape.variable(p) : tape.constant(p));
  }
}

ConvLayer ConvLayer::create(Registry& reg, std::string name, const ConvSpec& spec) {
  spec.validate();
  const bool pointwise = spec.kh == 1 && spec.kw == 1 && spec.groups == 1;
  const double fan_out = static_cast<double>(spec.kh * spec.kw * spec.out_channels / spec.groups);
  const InitSpec init =
      pointwise ? InitSpec::trunc_normal(0.02) : InitSpec::normal(std::sqrt(2.0 / fan_out));
  return create(reg, std::move(name), spec, init);
}

ConvLayer ConvLayer::create(Registry& reg, std::string name, const ConvSpec& spec, InitSpec init) {
  spec.validate();
  ConvLayer layer;
  layer.name = std::move(name);
  layer.spec = spec;
  layer.weight = reg.param(layer.name + ".weight", spec.weight_shape(), init, true);
  if (spec.bias) {
    layer.bias = reg.param(layer.name + ".bias", Shape{1, spec.out_channels, 1, 1},
                           InitSpec::zeros(), false);
  }
  return layer;
}

template <class T>
Var<T> ConvLayer::forward(Context<T>& ctx, const Var<T>& x) const {
  std::optional<Var<T>> b;
  if (bias >= 0) b = ctx.param(bias);
  return ag::conv2d(x, ctx.param(weight), b, spec);
}

Shape ConvLayer::cost(CostReport& report, const Shape& in) const {
  const Shape out = spec.output_shape(in);
  report.add(name, spec.param_count(), spec.weight_count() * out.n * out.plane());
  return out;
}

BatchNormLayer BatchNormLayer::create(Registry& reg, std::string name, int64_t channels) {
  BatchNormLayer bn;
  bn.name = std::move(name);
  bn.channels = channels;
  const Shape s{1, channels, 1, 1};
  bn.gamma = reg.param(bn.name + ".weight", s, InitSpec::constant(1.0), false);
  bn.beta = reg.param(bn.name + ".bias", s, InitSpec::zeros(), false);
  bn.running_mean = reg.buffer(bn.name + ".running_mean", s, 0.0);
  bn.running_var = reg.buffer(bn.name + ".running_var", s, 1.0);
  return bn;
}

template <class T>
Var<T> BatchNormLayer::forward(Context<T>& ctx, const Var<T>& x) const {
  return ag::batch_norm(x, ctx.param(gamma), ctx.param(beta),
                        ctx.buffers[static_cast<size_t>(running_mean)],
                        ctx.buffers[static_cast<size_t>(running_var)],
                        ag::BatchNormOptions{ctx.training, kEps, kMomentum});
}

Shape BatchNormLayer::cost(CostReport& report, const Shape& in) const {
  report.add(name, 2 * channels, in.numel());
  return in;
}

template <class T>
Var<T> drop_path(Context<T>& ctx, const Var<T>& branch, double rate) {
  if (!ctx.training || rate <= 0.0 || ctx.rng == nullptr) return branch;
  const Shape s = branch.shape();
  std::bernoulli_distribution keep(1.0 - rate);
  BasicTensor<T> mask(s);
  auto m = mask.mutable_data();
  const int64_t per = s.numel() / s.n;
  for (int64_t n = 0; n < s.n; ++n) {
    const T v = keep(*ctx.rng) ? static_cast<T>(1.0 / (1.0 - rate)) : T(0);
    std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(n * per), per, v);
  }
  return ag::mul(branch, ctx.tape.constant(mask));
}

template struct ParamStore<float>;
template struct ParamStore<double>;
template struct Context<float>;
template struct Context<double>;
template Var<float> ConvLayer::forward(Context<float>&, const Var<float>&) const;
template Var<double> ConvLayer::forward(Context<double>&, const Var<double>&) const;
template Var<float> BatchNormLayer::forward(Context<float>&, const Var<float>&) const;
template Var<double> BatchNormLayer::forward(Context<double>&, const Var<double>&) const;
template Var<float> drop_path(Context<float>&, const Var<float>&, double);
template Var<double> drop_path(Context<double>&, const Var<double>&, double);

}  // namespace segnext
