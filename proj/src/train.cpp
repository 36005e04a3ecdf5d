#include "segnext/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "segnext/io.hpp"
#include "segnext/kernels.hpp"

namespace segnext {

namespace {

template <class T>
BasicTensor<T> flip_w(const BasicTensor<T>& x) {
  const Shape s = x.shape();
  BasicTensor<T> out(s);
  auto o = out.mutable_data();
  const auto in = x.data();
  for (int64_t r = 0; r < s.n * s.c * s.h; ++r) {
    for (int64_t c = 0; c < s.w; ++c) {
      o[static_cast<size_t>(r * s.w + c)] = in[static_cast<size_t>(r * s.w + s.w - 1 - c)];
    }
  }
  return out;
}

}  // namespace

template <class T>
BasicTensor<T> ms_flip_inference(const SegModel<T>& model, const BasicTensor<T>& image,
                                 std::span<const double> scales, bool flip) {
  if (scales.empty()) throw Error("ms_flip_inference: scales must not be empty");
  const Shape s = image.shape();
  BasicTensor<T> acc;
  int count = 0;
  auto accumulate = [&](const BasicTensor<T>& logits) {
    if (acc.empty()) {
      acc = logits;
    } else {
      auto a = acc.mutable_data();
      const auto l = logits.data();
      for (size_t i = 0; i < a.size(); ++i) a[i] += l[i];
    }
    ++count;
  };
  for (double scale : scales) {
    if (!(scale > 0.0)) throw Error("ms_flip_inference: scale must be positive, got " + std::to_string(scale));
    const int64_t h = std::max<int64_t>(1, std::llround(static_cast<double>(s.h) * scale));
    const int64_t w = std::max<int64_t>(1, std::llround(static_cast<double>(s.w) * scale));
    const BasicTensor<T> scaled = resize_image(image, h, w);
    accumulate(resize_image(model.predict(scaled), s.h, s.w));
    if (flip) accumulate(resize_image(flip_w(model.predict(flip_w(scaled))), s.h, s.w));
  }
  if (count > 1) {
    const T inv = T(1) / static_cast<T>(count);
    for (auto& v : acc.mutable_data()) v *= inv;
  }
  return acc;
}

template <class T>
LabelMap argmax_labels(const BasicTensor<T>& logits) {
  const Shape s = logits.shape();
  if (s.n != 1) throw Error("argmax_labels: expected a single image, got " + s.str());
  LabelMap out(s.h, s.w);
  const auto d = logits.data();
  const int64_t plane = s.h * s.w;
  for (int64_t p = 0; p < plane; ++p) {
    int best = 0;
    T bv = d[static_cast<size_t>(p)];
    for (int64_t c = 1; c < s.c; ++c) {
      const T v = d[static_cast<size_t>(c * plane + p)];
      if (v > bv) {
        bv = v;
        best = static_cast<int>(c);
      }
    }
    out.data[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
  }
  return out;
}

template Tensor ms_flip_inference(const SegModel<float>&, const Tensor&, std::span<const double>, bool);
template Tensor64 ms_flip_inference(const SegModel<double>&, const Tensor64&, std::span<const double>, bool);
template LabelMap argmax_labels(const Tensor&);
template LabelMap argmax_labels(const Tensor64&);

MiouResult evaluate(const SegModel<float>& model, const std::vector<SegSample>& samples, const EvalOptions& opts) {
  ConfusionMatrix cm(static_cast<int>(model.config().num_classes));
  for (const auto& s : samples) {
    cm.add(argmax_labels(ms_flip_inference(model, s.image, opts.scales, opts.flip)), s.label);
  }
  return miou_from(cm);
}

void write_metrics_row(std::ostream& os, const MetricsRow& row) {
  std::ostringstream line;
  line << row.iter << '\t' << std::setprecision(9) << row.loss << '\t' << row.lr;
  if (row.miou) line << '\t' << std::setprecision(6) << *row.miou;
  os << line.str() << '\n';
}

std::vector<SegSample> make_train_set(const RunConfig& cfg) {
  return synth_dataset(cfg.seed, static_cast<int>(cfg.data.train_samples), cfg.data.size,
                       static_cast<int>(cfg.model.num_classes));
}

std::vector<SegSample> make_val_set(const RunConfig& cfg) {
  return synth_dataset(cfg.seed ^ 0x76616c6964ull, static_cast<int>(cfg.data.val_samples), cfg.data.size,
                       static_cast<int>(cfg.model.num_classes));
}

TrainResult train(const RunConfig& cfg, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& val_set, std::ostream* log) {
  cfg.validate();
  if (train_set.empty()) throw Error("train: empty training set");
  kernels::set_num_threads(cfg.train.threads);
  const auto& tc = cfg.train;

  TrainResult res{SegModel<float>::build(cfg.model, cfg.seed), {}, {}};
  res.optim = OptimState<float>::create(res.model.store().params, tc.adamw);
  const auto& specs = res.model.registry().params();

  std::ofstream metrics;
  std::string ckpt_path;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    metrics.open(std::filesystem::path(cfg.out_dir) / "metrics.tsv", std::ios::trunc);
    if (!metrics) throw Error("cannot write metrics log in '" + cfg.out_dir + "'");
    ckpt_path = (std::filesystem::path(cfg.out_dir) / "checkpoint.sgnx").string();
  }
  auto emit = [&](const MetricsRow& row) {
    res.log.push_back(row);
    if (metrics.is_open()) {
      write_metrics_row(metrics, row);
      metrics.flush();
    }
    if (log) write_metrics_row(*log, row);
  };

  LrSchedule sched = tc.schedule;
  sched.max_iter = std::max<int64_t>(tc.iters, 1);
  std::mt19937_64 rng(cfg.seed ^ 0x747261696eull);
  std::mt19937_64 drop_rng(cfg.seed ^ 0x64726f70ull);
  std::uniform_int_distribution<size_t> pick(0, train_set.size() - 1);
  const int64_t crop = tc.crop;

  for (int64_t it = 0; it < tc.iters; ++it) {
    Tensor images(Shape{tc.batch, 3, crop, crop});
    std::vector<uint8_t> labels(static_cast<size_t>(tc.batch * crop * crop));
    {
      auto dst = images.mutable_data();
      const size_t img_sz = static_cast<size_t>(3 * crop * crop);
      const size_t lab_sz = static_cast<size_t>(crop * crop);
      for (int64_t b = 0; b < tc.batch; ++b) {
        const SegSample s = augment(train_set[pick(rng)], rng, crop);
        std::copy(s.image.data().begin(), s.image.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(b * img_sz));
        std::copy(s.label.data.begin(), s.label.data.end(), labels.begin() + static_cast<std::ptrdiff_t>(b * lab_sz));
      }
    }
    const double lr = poly_lr(it, sched);
    Tape<float> tape;
    Context<float> ctx(tape, res.model.store(), true, true);
    ctx.rng = &drop_rng;
    const Var<float> logits = res.model.forward(ctx, tape.constant(images));
    const Var<float> loss = ag::cross_entropy(logits, std::span<const uint8_t>(labels), kIgnoreLabel);
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      throw TrainDiverged("training diverged: loss is " + std::to_string(loss_value) + " at iteration " +
                          std::to_string(it) + (ckpt_path.empty() ? "" : "; last good checkpoint kept at " + ckpt_path));
    }
    const Gradients<float> grads = tape.backward(loss);
    std::vector<Tensor> g;
    g.reserve(ctx.params.size());
    for (const auto& p : ctx.params) g.push_back(grads.of(p));
    adamw_step(res.model.store().params, g, specs, res.optim, lr);
    res.model.commit_buffers(ctx);

    MetricsRow row{it, loss_value, lr, std::nullopt};
    const bool last = it + 1 == tc.iters;
    if (!val_set.empty() && ((tc.eval_interval > 0 && (it + 1) % tc.eval_interval == 0) || last)) {
      row.miou = evaluate(res.model, val_set, cfg.eval).mean;
    }
    emit(row);
    if (!ckpt_path.empty() && ((tc.checkpoint_interval > 0 && (it + 1) % tc.checkpoint_interval == 0) || last)) {
      save_checkpoint(ckpt_path, cfg, res.model, &res.optim);
    }
  }
  if (tc.iters == 0 && !ckpt_path.empty()) save_checkpoint(ckpt_path, cfg, res.model, &res.optim);
  return res;
}

}  // namespace segnext
