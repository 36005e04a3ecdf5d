#pragma once

// Plain-loop reference implementations used as test oracles. Nothing here
// calls into the library's kernels or autograd; tensors serve only as
// containers.

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "segnext/model.hpp"

namespace oracle {

using segnext::ConvSpec;
using segnext::Shape;
using segnext::Tensor64;

inline Tensor64 random(Shape s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<size_t>(s.numel()));
  for (auto& x : v) x = u(rng);
  return Tensor64(s, std::move(v));
}

inline double& at(Tensor64& t, int64_t n, int64_t c, int64_t h, int64_t w) {
  const Shape s = t.shape();
  return t.mutable_data()[static_cast<size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

/// Direct six-loop cross-correlation with zero padding.
inline Tensor64 conv(const Tensor64& x, const Tensor64& w, const Tensor64* bias, const ConvSpec& sp) {
  const Shape in = x.shape();
  const int64_t oh = (in.h + 2 * sp.ph - sp.kh) / sp.sh + 1;
  const int64_t ow = (in.w + 2 * sp.pw - sp.kw) / sp.sw + 1;
  Tensor64 out(Shape{in.n, sp.out_channels, oh, ow});
  const int64_t cin_g = sp.in_channels / sp.groups;
  const int64_t cout_g = sp.out_channels / sp.groups;
  for (int64_t n = 0; n < in.n; ++n)
    for (int64_t co = 0; co < sp.out_channels; ++co) {
      const int64_t g = co / cout_g;
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          double s = bias ? (*bias)[co] : 0.0;
          for (int64_t ci = 0; ci < cin_g; ++ci)
            for (int64_t ky = 0; ky < sp.kh; ++ky)
              for (int64_t kx = 0; kx < sp.kw; ++kx) {
                const int64_t iy = y * sp.sh - sp.ph + ky;
                const int64_t ix = xx * sp.sw - sp.pw + kx;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                s += x.at(n, g * cin_g + ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          at(out, n, co, y, xx) = s;
        }
    }
  return out;
}

inline Tensor64 bn_eval(const Tensor64& x, const Tensor64& gamma, const Tensor64& beta, const Tensor64& mean,
                        const Tensor64& var, double eps = 1e-5) {
  const Shape s = x.shape();
  Tensor64 out(s);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t h = 0; h < s.h; ++h)
        for (int64_t w = 0; w < s.w; ++w)
          at(out, n, c, h, w) = (x.at(n, c, h, w) - mean[c]) / std::sqrt(var[c] + eps) * gamma[c] + beta[c];
  return out;
}

struct BnStats {
  std::vector<double> mean, var;  // biased variance
};

inline BnStats channel_stats(const Tensor64& x) {
  const Shape s = x.shape();
  BnStats st{std::vector<double>(static_cast<size_t>(s.c)), std::vector<double>(static_cast<size_t>(s.c))};
  const double m = static_cast<double>(s.n * s.h * s.w);
  for (int64_t c = 0; c < s.c; ++c) {
    double sum = 0;
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t i = 0; i < s.h * s.w; ++i) sum += x.at(n, c, i / s.w, i % s.w);
    const double mu = sum / m;
    double sq = 0;
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t i = 0; i < s.h * s.w; ++i) {
        const double d = x.at(n, c, i / s.w, i % s.w) - mu;
        sq += d * d;
      }
    st.mean[static_cast<size_t>(c)] = mu;
    st.var[static_cast<size_t>(c)] = sq / m;
  }
  return st;
}

inline Tensor64 bn_train(const Tensor64& x, const Tensor64& gamma, const Tensor64& beta, double eps = 1e-5) {
  const auto st = channel_stats(x);
  const Shape cs{1, x.shape().c, 1, 1};
  return bn_eval(x, gamma, beta, Tensor64(cs, st.mean), Tensor64(cs, st.var), eps);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Tensor64 map(const Tensor64& x, const std::function<double(double)>& f) {
  Tensor64 out(x.shape());
  auto o = out.mutable_data();
  for (int64_t i = 0; i < x.numel(); ++i) o[static_cast<size_t>(i)] = f(x[i]);
  return out;
}

inline Tensor64 zip(const Tensor64& a, const Tensor64& b, const std::function<double(double, double)>& f) {
  Tensor64 out(a.shape());
  auto o = out.mutable_data();
  for (int64_t i = 0; i < a.numel(); ++i) o[static_cast<size_t>(i)] = f(a[i], b[i]);
  return out;
}

inline Tensor64 add(const Tensor64& a, const Tensor64& b) { return zip(a, b, std::plus<>()); }
inline Tensor64 mul(const Tensor64& a, const Tensor64& b) { return zip(a, b, std::multiplies<>()); }
inline Tensor64 relu(const Tensor64& x) { return map(x, [](double v) { return v > 0 ? v : 0.0; }); }

inline Tensor64 channel_scale(const Tensor64& x, const Tensor64& s) {
  const Shape sh = x.shape();
  Tensor64 out(sh);
  for (int64_t n = 0; n < sh.n; ++n)
    for (int64_t c = 0; c < sh.c; ++c)
      for (int64_t i = 0; i < sh.h * sh.w; ++i) at(out, n, c, i / sh.w, i % sh.w) = x.at(n, c, i / sh.w, i % sh.w) * s[c];
  return out;
}

/// Bilinear sampling with pixel-centre alignment: output pixel d samples the
/// input at (d + 1/2) * in/out - 1/2, clamped to the valid range.
inline Tensor64 bilinear(const Tensor64& x, int64_t oh, int64_t ow) {
  const Shape s = x.shape();
  Tensor64 out(Shape{s.n, s.c, oh, ow});
  auto coord = [](int64_t d, int64_t in, int64_t outn) {
    double src = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    src = std::max(src, 0.0);
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    i0 = std::min(i0, in - 1);
    const int64_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple<int64_t, int64_t, double>{i0, i1, src - static_cast<double>(i0)};
  };
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t y = 0; y < oh; ++y) {
        const auto [y0, y1, fy] = coord(y, s.h, oh);
        for (int64_t xx = 0; xx < ow; ++xx) {
          const auto [x0, x1, fx] = coord(xx, s.w, ow);
          at(out, n, c, y, xx) = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
                                 fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
        }
      }
  return out;
}

inline Tensor64 concat(const std::vector<Tensor64>& parts) {
  const Shape s0 = parts.front().shape();
  int64_t c = 0;
  for (const auto& p : parts) c += p.shape().c;
  Tensor64 out(Shape{s0.n, c, s0.h, s0.w});
  for (int64_t n = 0; n < s0.n; ++n) {
    int64_t off = 0;
    for (const auto& p : parts) {
      for (int64_t k = 0; k < p.shape().c; ++k)
        for (int64_t i = 0; i < s0.h * s0.w; ++i) at(out, n, off + k, i / s0.w, i % s0.w) = p.at(n, k, i / s0.w, i % s0.w);
      off += p.shape().c;
    }
  }
  return out;
}

/// Dense row-major matrix.
struct Mat {
  int64_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat(int64_t r, int64_t c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}
  double& operator()(int64_t i, int64_t j) { return v[static_cast<size_t>(i * cols + j)]; }
  double operator()(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * cols + j)]; }
};

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.cols);
  for (int64_t i = 0; i < a.rows; ++i)
    for (int64_t j = 0; j < b.cols; ++j) {
      double s = 0;
      for (int64_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (int64_t i = 0; i < a.rows; ++i)
    for (int64_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

/// Lee-Seung multiplicative updates, codes first then bases.
inline Mat nmf(const Mat& x, Mat bases, Mat codes, int64_t iters, double eps) {
  for (int64_t it = 0; it < iters; ++it) {
    const Mat bt = transpose(bases);
    const Mat num_c = matmul(bt, x);
    const Mat den_c = matmul(matmul(bt, bases), codes);
    for (size_t i = 0; i < codes.v.size(); ++i) codes.v[i] *= num_c.v[i] / (den_c.v[i] + eps);
    const Mat ct = transpose(codes);
    const Mat num_b = matmul(x, ct);
    const Mat den_b = matmul(bases, matmul(codes, ct));
    for (size_t i = 0; i < bases.v.size(); ++i) bases.v[i] *= num_b.v[i] / (den_b.v[i] + eps);
  }
  return matmul(bases, codes);
}

/// Parameter and buffer lookup by registry name.
class Weights {
 public:
  Weights(const segnext::Registry& reg, const segnext::ParamStore<double>& store) {
    for (size_t i = 0; i < reg.params().size(); ++i) map_[reg.params()[i].name] = store.params[i];
    for (size_t i = 0; i < reg.buffers().size(); ++i) map_[reg.buffers()[i].name] = store.buffers[i];
  }
  const Tensor64& operator()(const std::string& name) const {
    const auto it = map_.find(name);
    if (it == map_.end()) throw std::runtime_error("oracle: no tensor named " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return map_.count(name) > 0; }

 private:
  std::map<std::string, Tensor64> map_;
};

inline ConvSpec spec_of(const Tensor64& w, int64_t in_channels, int64_t stride = 1) {
  const Shape ws = w.shape();
  ConvSpec s;
  s.in_channels = in_channels;
  s.out_channels = ws.n;
  s.groups = in_channels / ws.c;
  s.kh = ws.h;
  s.kw = ws.w;
  s.sh = s.sw = stride;
  s.ph = ws.h / 2;
  s.pw = ws.w / 2;
  return s;
}

inline Tensor64 conv_named(const Weights& W, const std::string& name, const Tensor64& x, int64_t stride = 1) {
  const Tensor64& w = W(name + ".weight");
  const bool has_bias = W.has(name + ".bias");
  Tensor64 b;
  if (has_bias) b = W(name + ".bias");
  return conv(x, w, has_bias ? &b : nullptr, spec_of(w, x.shape().c, stride));
}

inline Tensor64 bn_named(const Weights& W, const std::string& name, const Tensor64& x) {
  return bn_eval(x, W(name + ".weight"), W(name + ".bias"), W(name + ".running_mean"), W(name + ".running_var"));
}

inline Tensor64 msca(const Weights& W, const std::string& name, const Tensor64& f, bool multi_scale = true) {
  const Tensor64 base = conv_named(W, name + ".local", f);
  Tensor64 acc;
  if (multi_scale) {
    acc = base;
    for (int k : {7, 11, 21}) {
      const std::string b = name + ".branch" + std::to_string(k);
      acc = add(acc, conv_named(W, b + ".v", conv_named(W, b + ".h", base)));
    }
  } else {
    acc = conv_named(W, name + ".branch21.v", conv_named(W, name + ".branch21.h", base));
  }
  return mul(conv_named(W, name + ".mix", acc), f);
}

inline Tensor64 block(const Weights& W, const std::string& name, const Tensor64& x, bool multi_scale = true) {
  Tensor64 a = bn_named(W, name + ".norm1", x);
  a = map(conv_named(W, name + ".attn.proj_in", a), gelu);
  a = conv_named(W, name + ".attn.proj_out", msca(W, name + ".attn.msca", a, multi_scale));
  const Tensor64 x1 = add(x, channel_scale(a, W(name + ".layer_scale1")));
  Tensor64 h = conv_named(W, name + ".ffn.fc1", bn_named(W, name + ".norm2", x1));
  h = conv_named(W, name + ".ffn.fc2", map(conv_named(W, name + ".ffn.dw", h), gelu));
  return add(x1, channel_scale(h, W(name + ".layer_scale2")));
}

inline std::vector<Tensor64> encoder(const Weights& W, const segnext::ModelConfig& cfg, const Tensor64& image) {
  const bool ms = cfg.attention == segnext::AttentionKind::multi_scale;
  Tensor64 x = bn_named(W, "encoder.stem.bn1", conv_named(W, "encoder.stem.conv1", image, 2));
  x = bn_named(W, "encoder.stem.bn2", conv_named(W, "encoder.stem.conv2", x, 2));
  std::vector<Tensor64> feats;
  for (int s = 0; s < 4; ++s) {
    const std::string stage = "encoder.stage" + std::to_string(s + 1);
    if (s > 0) x = bn_named(W, stage + ".down.bn", conv_named(W, stage + ".down.conv", x, 2));
    for (int64_t b = 0; b < cfg.stages[static_cast<size_t>(s)].depth; ++b) {
      x = block(W, stage + ".block" + std::to_string(b), x, ms);
    }
    feats.push_back(x);
  }
  return feats;
}

/// Eval-mode logits for any decoder variant.
inline Tensor64 model(const Weights& W, const segnext::ModelConfig& cfg, const Tensor64& image, uint64_t nmf_seed) {
  const auto f = encoder(W, cfg, image);
  const int64_t H = image.shape().h, Wd = image.shape().w;
  Tensor64 logits;
  if (cfg.decoder == segnext::DecoderVariant::mlp) {
    std::vector<Tensor64> parts;
    for (int i = 0; i < 4; ++i) {
      parts.push_back(bilinear(conv_named(W, "decoder.proj" + std::to_string(i + 1), f[static_cast<size_t>(i)]),
                               f[0].shape().h, f[0].shape().w));
    }
    Tensor64 x = relu(bn_named(W, "decoder.fuse_bn", conv_named(W, "decoder.fuse", concat(parts))));
    logits = conv_named(W, "decoder.classifier", x);
  } else if (cfg.decoder == segnext::DecoderVariant::core) {
    Tensor64 x = map(bn_named(W, "decoder.bn1", conv_named(W, "decoder.conv1", f[3])), gelu);
    x = map(bn_named(W, "decoder.bn2", conv_named(W, "decoder.conv2", x)), gelu);
    logits = conv_named(W, "decoder.classifier", x);
  } else {
    const size_t first = cfg.stage1_in_decoder ? 0 : 1;
    const Shape grid = f[first].shape();
    std::vector<Tensor64> parts;
    for (size_t i = first; i < 4; ++i) parts.push_back(bilinear(f[i], grid.h, grid.w));
    Tensor64 x = relu(bn_named(W, "decoder.pre_bn", conv_named(W, "decoder.pre_proj", concat(parts))));
    const Shape xs = x.shape();
    const int64_t r = cfg.ham_rank, N = xs.h * xs.w;
    // shared seeded init, same stream layout as the library
    auto init = [](int64_t rows, int64_t cols, uint64_t seed) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Mat m(rows, cols);
      for (auto& v : m.v) v = 1.0 - u(rng);
      return m;
    };
    Tensor64 ctxv(xs);
    for (int64_t n = 0; n < xs.n; ++n) {
      Mat X(xs.c, N);
      for (int64_t c = 0; c < xs.c; ++c)
        for (int64_t p = 0; p < N; ++p) X(c, p) = x.at(n, c, p / xs.w, p % xs.w);
      const Mat R = nmf(X, init(xs.c, r, nmf_seed), init(r, N, nmf_seed ^ 0x9e3779b97f4a7c15ULL), cfg.ham_iters, 1e-6);
      for (int64_t c = 0; c < xs.c; ++c)
        for (int64_t p = 0; p < N; ++p) at(ctxv, n, c, p / xs.w, p % xs.w) = R(c, p);
    }
    ctxv = bn_named(W, "decoder.post_bn", conv_named(W, "decoder.post_proj", ctxv));
    Tensor64 z = relu(add(x, ctxv));
    z = relu(bn_named(W, "decoder.align_bn", conv_named(W, "decoder.align", z)));
    logits = conv_named(W, "decoder.classifier", z);
  }
  return bilinear(logits, H, Wd);
}

/// Central finite difference of a scalar function along one coordinate.
inline double central_difference(const std::function<double()>& f, double& coord, double step) {
  const double saved = coord;
  coord = saved + step;
  const double up = f();
  coord = saved - step;
  const double down = f();
  coord = saved;
  return (up - down) / (2.0 * step);
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
