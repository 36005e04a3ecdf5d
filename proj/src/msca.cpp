#include "segnext/msca.hpp"

namespace segnext {

MscaLayer MscaLayer::create(Registry& reg, std::string name, int64_t channels, AttentionKind kind) {
  MscaLayer m;
  m.name = std::move(name);
  m.channels = channels;
  m.kind = kind;
  m.local = ConvLayer::create(reg, m.name + ".local",
                              ConvSpec::depthwise(channels, kLocalKernel, kLocalKernel));
  auto add_branch = [&](int64_t k) {
    StripBranch b;
    b.kernel = k;
    const std::string prefix = m.name + ".branch" + std::to_string(k);
    b.horizontal = ConvLayer::create(reg, prefix + ".h", ConvSpec::depthwise(channels, 1, k));
    b.vertical = ConvLayer::create(reg, prefix + ".v", ConvSpec::depthwise(channels, k, 1));
    m.branches.push_back(std::move(b));
  };
  if (kind == AttentionKind::multi_scale) {
    for (int64_t k : kStripKernels) add_branch(k);
  } else {
    add_branch(kStripKernels.back());
  }
  m.channel_mix = ConvLayer::create(reg, m.name + ".mix", ConvSpec::pointwise(channels, channels));
  return m;
}

template <class T>
Var<T> MscaLayer::attention(Context<T>& ctx, const Var<T>& f) const {
  if (f.shape().c != channels) {
    throw Error(name + ": input has " + std::to_string(f.shape().c) + " channels, expected " +
                std::to_string(channels));
  }
  const Var<T> base = local.forward(ctx, f);
  Var<T> acc;
  if (kind == AttentionKind::multi_scale) {
    acc = base;
    for (const auto& b : branches) {
      acc = ag::add(acc, b.vertical.forward(ctx, b.horizontal.forward(ctx, base)));
    }
  } else {
    const auto& b = branches.front();
    acc = b.vertical.forward(ctx, b.horizontal.forward(ctx, base));
  }
  return channel_mix.forward(ctx, acc);
}

template <class T>
Var<T> MscaLayer::forward(Context<T>& ctx, const Var<T>& f) const {
  return ag::mul(attention(ctx, f), f);
}

Shape MscaLayer::cost(CostReport& report, const Shape& in) const {
  const Shape s = local.cost(report, in);
  for (const auto& b : branches) {
    b.vertical.cost(report, b.horizontal.cost(report, s));
  }
  if (kind == AttentionKind::multi_scale) {
    report.add(name + ".sum", 0, static_cast<int64_t>(branches.size()) * s.numel());
  }
  channel_mix.cost(report, s);
  report.add(name + ".gate", 0, s.numel());
  return s;
}

BlockLayer BlockLayer::create(Registry& reg, std::string name, int64_t channels, int64_t expansion,
                              AttentionKind kind) {
  BlockLayer b;
  b.name = std::move(name);
  b.channels = channels;
  b.expansion = expansion;
  const int64_t hidden = channels * expansion;
  const Shape vec{1, channels, 1, 1};
  b.norm1 = BatchNormLayer::create(reg, b.name + ".norm1", channels);
  b.proj_in = ConvLayer::create(reg, b.name + ".attn.proj_in", ConvSpec::pointwise(channels, channels));
  b.msca = MscaLayer::create(reg, b.name + ".attn.msca", channels, kind);
  b.proj_out =
      ConvLayer::create(reg, b.name + ".attn.proj_out", ConvSpec::pointwise(channels, channels));
  b.layer_scale1 = reg.param(b.name + ".layer_scale1", vec, InitSpec::constant(kLayerScaleInit), false);
  b.norm2 = BatchNormLayer::create(reg, b.name + ".norm2", channels);
  b.fc1 = ConvLayer::create(reg, b.name + ".ffn.fc1", ConvSpec::pointwise(channels, hidden));
  b.dw = ConvLayer::create(reg, b.name + ".ffn.dw", ConvSpec::depthwise(hidden, 3, 3));
  b.fc2 = ConvLayer::create(reg, b.name + ".ffn.fc2", ConvSpec::pointwise(hidden, channels));
  b.layer_scale2 = reg.param(b.name + ".layer_scale2", vec, InitSpec::constant(kLayerScaleInit), false);
  return b;
}

template <class T>
Var<T> BlockLayer::forward(Context<T>& ctx, const Var<T>& x) const {
  if (x.shape().c != channels) {
    throw Error(name + ": input has " + std::to_string(x.shape().c) + " channels, expected " +
                std::to_string(channels));
  }
  Var<T> a = norm1.forward(ctx, x);
  a = ag::gelu(proj_in.forward(ctx, a));
  a = proj_out.forward(ctx, msca.forward(ctx, a));
  const Var<T> x1 = ag::add(x, drop_path(ctx, ag::channel_scale(a, ctx.param(layer_scale1)), drop_rate));

  Var<T> h = fc1.forward(ctx, norm2.forward(ctx, x1));
  h = fc2.forward(ctx, ag::gelu(dw.forward(ctx, h)));
  return ag::add(x1, drop_path(ctx, ag::channel_scale(h, ctx.param(layer_scale2)), drop_rate));
}

Shape BlockLayer::cost(CostReport& report, const Shape& in) const {
  Shape s = norm1.cost(report, in);
  s = proj_in.cost(report, s);
  report.add(name + ".attn.act", 0, s.numel());
  s = msca.cost(report, s);
  s = proj_out.cost(report, s);
  report.add(name + ".layer_scale1", channels, 2 * s.numel());
  s = norm2.cost(report, s);
  Shape h = fc1.cost(report, s);
  h = dw.cost(report, h);
  report.add(name + ".ffn.act", 0, h.numel());
  s = fc2.cost(report, h);
  report.add(name + ".layer_scale2", channels, 2 * s.numel());
  return s;
}

template Var<float> MscaLayer::forward(Context<float>&, const Var<float>&) const;
template Var<double> MscaLayer::forward(Context<double>&, const Var<double>&) const;
template Var<float> MscaLayer::attention(Context<float>&, const Var<float>&) const;
template Var<double> MscaLayer::attention(Context<double>&, const Var<double>&) const;
template Var<float> BlockLayer::forward(Context<float>&, const Var<float>&) const;
template Var<double> BlockLayer::forward(Context<double>&, const Var<double>&) const;

}  // namespace segnext
