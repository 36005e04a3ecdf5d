#include "segnext/decoder.hpp"

#include <cmath>
#include <random>

namespace segnext {

namespace {

constexpr uint64_t kNmfInitSeed = 0x5e6e3c7dULL;

template <class T>
BasicTensor<T> uniform_positive(int64_t batch, int64_t rows, int64_t cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> one(static_cast<size_t>(rows * cols));
  for (auto& v : one) v = static_cast<T>(1.0 - u(rng));  // (0, 1]
  std::vector<T> all;
  all.reserve(static_cast<size_t>(batch) * one.size());
  for (int64_t b = 0; b < batch; ++b) all.insert(all.end(), one.begin(), one.end());
  return BasicTensor<T>(Shape{batch, 1, rows, cols}, std::move(all));
}

template <class T>
double frobenius_residual(const BasicTensor<T>& x, const BasicTensor<T>& recon) {
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(recon[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

template <class T>
bool all_nonnegative(const BasicTensor<T>& t) {
  for (T v : t.data())
    if (!(v >= T(0))) return false;
  return true;
}

template <class T>
struct NmfTrace {
  Var<T> bases;
  Var<T> codes;
  bool nonnegative = true;
};

template <class T>
Var<T> nmf_impl(const Var<T>& x, const NmfOptions& opts, std::vector<double>* residuals,
                NmfTrace<T>* trace) {
  const Shape s = x.shape();
  if (s.c != 1) throw Error("nmf: expected (B, 1, C, N) input, got " + s.str());
  Tape<T>& tape = *x.tape();
  const T eps = static_cast<T>(opts.eps);
  Var<T> bases = tape.constant(uniform_positive<T>(s.n, s.h, opts.rank, opts.seed));
  Var<T> codes = tape.constant(uniform_positive<T>(s.n, opts.rank, s.w, opts.seed ^ 0x9e3779b97f4a7c15ULL));
  bool nonneg = true;

  auto residual = [&]() {
    if (!residuals) return;
    Tape<T> scratch(false);
    const auto recon = ag::matmul(scratch.constant(bases.value()), scratch.constant(codes.value()));
    residuals->push_back(frobenius_residual(x.value(), recon.value()));
  };
  residual();
  for (int64_t it = 0; it < opts.iters; ++it) {
    // codes <- codes * (B^T X) / (B^T B codes + eps)
    {
      const Var<T> num = ag::matmul(bases, x, true, false);
      const Var<T> btb = ag::matmul(bases, bases, true, false);
      const Var<T> den = ag::add_scalar(ag::matmul(btb, codes), eps);
      codes = ag::mul(codes, ag::div(num, den));
    }
    // bases <- bases * (X codes^T) / (bases codes codes^T + eps)
    {
      const Var<T> num = ag::matmul(x, codes, false, true);
      const Var<T> cct = ag::matmul(codes, codes, false, true);
      const Var<T> den = ag::add_scalar(ag::matmul(bases, cct), eps);
      bases = ag::mul(bases, ag::div(num, den));
    }
    if (trace) nonneg = nonneg && all_nonnegative(codes.value()) && all_nonnegative(bases.value());
    residual();
  }
  if (trace) {
    trace->bases = bases;
    trace->codes = codes;
    trace->nonnegative = nonneg;
  }
  return ag::matmul(bases, codes);
}

}  // namespace

template <class T>
Var<T> nmf(const Var<T>& x, const NmfOptions& opts, std::vector<double>* residuals) {
  return nmf_impl<T>(x, opts, residuals, nullptr);
}

template <class T>
NmfResult<T> nmf_reconstruct(const BasicTensor<T>& x, int64_t rank, int64_t iters, uint64_t seed) {
  const Shape s = x.shape();
  if (s.n != 1 || s.c != 1) throw Error("nmf_reconstruct: expected a (1, 1, C, N) matrix, got " + s.str());
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (!(x[i] >= T(0))) throw Error("nmf_reconstruct: negative input entry at index " + std::to_string(i));
  }
  if (rank < 1 || rank > std::min(s.h, s.w)) {
    throw Error("nmf_reconstruct: rank " + std::to_string(rank) + " exceeds min(C, N) = " +
                std::to_string(std::min(s.h, s.w)));
  }
  if (iters < 1) throw Error("nmf_reconstruct: iters must be >= 1");
  Tape<T> tape(false);
  NmfResult<T> out;
  NmfTrace<T> trace;
  const auto recon = nmf_impl<T>(tape.constant(x), NmfOptions{rank, iters, seed, 1e-12},
                                 &out.residuals, &trace);
  out.reconstruction = recon.value();
  out.bases = trace.bases.value();
  out.codes = trace.codes.value();
  out.nonnegative = trace.nonnegative;
  return out;
}

int64_t nmf_flops(int64_t c, int64_t n, const NmfOptions& o) {
  const int64_t r = o.rank;
  const int64_t codes_step = r * n * c + r * r * c + r * n * r + 3 * r * n;
  const int64_t bases_step = c * r * n + r * r * n + c * r * r + 3 * c * r;
  return o.iters * (codes_step + bases_step) + c * n * r;
}

// ---------------------------------------------------------------------------

HamDecoder HamDecoder::create(Registry& reg, const ModelConfig& cfg) {
  HamDecoder d;
  d.with_stage1 = cfg.stage1_in_decoder;
  int64_t in = cfg.stages[1].channels + cfg.stages[2].channels + cfg.stages[3].channels;
  if (d.with_stage1) in += cfg.stages[0].channels;
  const int64_t D = cfg.decoder_dim;
  d.pre_proj = ConvLayer::create(reg, "decoder.pre_proj", ConvSpec::pointwise(in, D, false));
  d.pre_bn = BatchNormLayer::create(reg, "decoder.pre_bn", D);
  d.nmf = NmfOptions{cfg.ham_rank, cfg.ham_iters, kNmfInitSeed, 1e-6};
  d.post_proj = ConvLayer::create(reg, "decoder.post_proj", ConvSpec::pointwise(D, D, false));
  d.post_bn = BatchNormLayer::create(reg, "decoder.post_bn", D);
  d.align = ConvLayer::create(reg, "decoder.align", ConvSpec::pointwise(D, D, false));
  d.align_bn = BatchNormLayer::create(reg, "decoder.align_bn", D);
  d.classifier = ConvLayer::create(reg, "decoder.classifier", ConvSpec::pointwise(D, cfg.num_classes));
  return d;
}

namespace {
template <class T>
void check_batch(const EncoderFeatures<T>& feats) {
  for (const auto& f : feats.f) {
    if (f.shape().n != feats.f[0].shape().n) {
      throw Error("decoder: feature batch sizes differ (" + f.shape().str() + " vs " +
                  feats.f[0].shape().str() + ")");
    }
  }
}
}  // namespace

template <class T>
Var<T> HamDecoder::forward(Context<T>& ctx, const EncoderFeatures<T>& feats, int64_t out_h,
                           int64_t out_w) const {
  check_batch(feats);
  const size_t first = with_stage1 ? 0 : 1;
  const Shape grid = feats.f[first].shape();
  std::vector<Var<T>> parts;
  for (size_t i = first; i < 4; ++i) parts.push_back(ag::resize_bilinear(feats.f[i], grid.h, grid.w));
  Var<T> x = ag::concat_channels<T>(parts);
  x = ag::relu(pre_bn.forward(ctx, pre_proj.forward(ctx, x)));
  const Shape xs = x.shape();
  Var<T> ctxv = ag::reshape(nmf_impl<T>(ag::reshape(x, Shape{xs.n, 1, xs.c, xs.plane()}), nmf,
                                        nullptr, nullptr),
                            xs);
  ctxv = post_bn.forward(ctx, post_proj.forward(ctx, ctxv));
  Var<T> z = ag::relu(ag::add(x, ctxv));
  z = ag::relu(align_bn.forward(ctx, align.forward(ctx, z)));
  return ag::resize_bilinear(classifier.forward(ctx, z), out_h, out_w);
}

namespace {
void resize_cost(CostReport& r, const std::string& name, const Shape& in, int64_t h, int64_t w) {
  if (in.h == h && in.w == w) return;
  r.add(name, 0, 8 * in.n * in.c * h * w);
}
}  // namespace

void HamDecoder::cost(CostReport& report, const std::array<Shape, 4>& f, int64_t out_h,
                      int64_t out_w) const {
  const size_t first = with_stage1 ? 0 : 1;
  const Shape grid = f[first];
  int64_t channels = 0;
  for (size_t i = first; i < 4; ++i) {
    resize_cost(report, "decoder.resize_f" + std::to_string(i + 1), f[i], grid.h, grid.w);
    channels += f[i].c;
  }
  Shape s{grid.n, channels, grid.h, grid.w};
  s = pre_bn.cost(report, pre_proj.cost(report, s));
  report.add("decoder.rectify", 0, s.numel());
  report.add("decoder.nmf", 0, s.n * nmf_flops(s.c, s.plane(), nmf));
  s = post_bn.cost(report, post_proj.cost(report, s));
  report.add("decoder.residual", 0, 2 * s.numel());
  s = align_bn.cost(report, align.cost(report, s));
  report.add("decoder.align_act", 0, s.numel());
  s = classifier.cost(report, s);
  resize_cost(report, "decoder.upsample", s, out_h, out_w);
}

MlpDecoder MlpDecoder::create(Registry& reg, const ModelConfig& cfg) {
  MlpDecoder d;
  const int64_t D = cfg.decoder_dim;
  for (size_t i = 0; i < 4; ++i) {
    d.proj[i] = ConvLayer::create(reg, "decoder.proj" + std::to_string(i + 1),
                                  ConvSpec::pointwise(cfg.stages[i].channels, D));
  }
  d.fuse = ConvLayer::create(reg, "decoder.fuse", ConvSpec::pointwise(4 * D, D, false));
  d.fuse_bn = BatchNormLayer::create(reg, "decoder.fuse_bn", D);
  d.classifier = ConvLayer::create(reg, "decoder.classifier", ConvSpec::pointwise(D, cfg.num_classes));
  return d;
}

template <class T>
Var<T> MlpDecoder::forward(Context<T>& ctx, const EncoderFeatures<T>& feats, int64_t out_h,
                           int64_t out_w) const {
  check_batch(feats);
  const Shape grid = feats.f[0].shape();
  std::vector<Var<T>> parts;
  for (size_t i = 0; i < 4; ++i) {
    parts.push_back(ag::resize_bilinear(proj[i].forward(ctx, feats.f[i]), grid.h, grid.w));
  }
  Var<T> x = ag::concat_channels<T>(parts);
  x = ag::relu(fuse_bn.forward(ctx, fuse.forward(ctx, x)));
  return ag::resize_bilinear(classifier.forward(ctx, x), out_h, out_w);
}

void MlpDecoder::cost(CostReport& report, const std::array<Shape, 4>& f, int64_t out_h,
                      int64_t out_w) const {
  const Shape grid = f[0];
  int64_t channels = 0;
  for (size_t i = 0; i < 4; ++i) {
    const Shape p = proj[i].cost(report, f[i]);
    resize_cost(report, "decoder.resize_p" + std::to_string(i + 1), p, grid.h, grid.w);
    channels += p.c;
  }
  Shape s{grid.n, channels, grid.h, grid.w};
  s = fuse_bn.cost(report, fuse.cost(report, s));
  report.add("decoder.fuse_act", 0, s.numel());
  s = classifier.cost(report, s);
  resize_cost(report, "decoder.upsample", s, out_h, out_w);
}

CoreDecoder CoreDecoder::create(Registry& reg, const ModelConfig& cfg) {
  CoreDecoder d;
  const int64_t D = cfg.decoder_dim;
  d.conv1 = ConvLayer::create(reg, "decoder.conv1", ConvSpec::make(cfg.stages[3].channels, D, 3, 3, 1, 1, false));
  d.bn1 = BatchNormLayer::create(reg, "decoder.bn1", D);
  d.conv2 = ConvLayer::create(reg, "decoder.conv2", ConvSpec::make(D, D, 3, 3, 1, 1, false));
  d.bn2 = BatchNormLayer::create(reg, "decoder.bn2", D);
  d.classifier = ConvLayer::create(reg, "decoder.classifier", ConvSpec::pointwise(D, cfg.num_classes));
  return d;
}

template <class T>
Var<T> CoreDecoder::forward(Context<T>& ctx, const EncoderFeatures<T>& feats, int64_t out_h,
                            int64_t out_w) const {
  check_batch(feats);
  Var<T> x = ag::gelu(bn1.forward(ctx, conv1.forward(ctx, feats.f[3])));
  x = ag::gelu(bn2.forward(ctx, conv2.forward(ctx, x)));
  return ag::resize_bilinear(classifier.forward(ctx, x), out_h, out_w);
}

void CoreDecoder::cost(CostReport& report, const std::array<Shape, 4>& f, int64_t out_h,
                       int64_t out_w) const {
  Shape s = bn1.cost(report, conv1.cost(report, f[3]));
  report.add("decoder.act1", 0, s.numel());
  s = bn2.cost(report, conv2.cost(report, s));
  report.add("decoder.act2", 0, s.numel());
  s = classifier.cost(report, s);
  resize_cost(report, "decoder.upsample", s, out_h, out_w);
}

Decoder create_decoder(Registry& reg, const ModelConfig& cfg) {
  switch (cfg.decoder) {
    case DecoderVariant::mlp:
      return MlpDecoder::create(reg, cfg);
    case DecoderVariant::core:
      return CoreDecoder::create(reg, cfg);
    case DecoderVariant::ham:
      return HamDecoder::create(reg, cfg);
  }
  throw Error("unknown decoder variant");
}

template <class T>
Var<T> decoder_forward(const Decoder& dec, Context<T>& ctx, const EncoderFeatures<T>& feats,
                       int64_t out_h, int64_t out_w) {
  return std::visit([&](const auto& d) { return d.forward(ctx, feats, out_h, out_w); }, dec);
}

const ConvLayer& decoder_classifier(const Decoder& dec) {
  return std::visit([](const auto& d) -> const ConvLayer& { return d.classifier; }, dec);
}

#define SEGNEXT_INSTANTIATE(T)                                                                   \
  template Var<T> nmf(const Var<T>&, const NmfOptions&, std::vector<double>*);                   \
  template NmfResult<T> nmf_reconstruct(const BasicTensor<T>&, int64_t, int64_t, uint64_t);      \
  template Var<T> HamDecoder::forward(Context<T>&, const EncoderFeatures<T>&, int64_t, int64_t) const; \
  template Var<T> MlpDecoder::forward(Context<T>&, const EncoderFeatures<T>&, int64_t, int64_t) const; \
  template Var<T> CoreDecoder::forward(Context<T>&, const EncoderFeatures<T>&, int64_t, int64_t) const; \
  template Var<T> decoder_forward(const Decoder&, Context<T>&, const EncoderFeatures<T>&, int64_t, int64_t);

SEGNEXT_INSTANTIATE(float)
SEGNEXT_INSTANTIATE(double)
#undef SEGNEXT_INSTANTIATE

}  // namespace segnext
