// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "conv_sweep.hpp"
#include "oracles.hpp"
#include "segnext/analysis.hpp"
#include "segnext/decoder.hpp"
#include "segnext/io.hpp"
#include "segnext/train.hpp"

using namespace segnext;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within(double got, double want, double rel) { return std::abs(got - want) <= rel * want; }

const char* const kSizes[] = {"segnext-t", "segnext-s", "segnext-b", "segnext-l"};

Outcome params_table() {
  const double want[] = {4.3, 13.9, 27.6, 48.9};
  Outcome o{true, ""};
  for (size_t i = 0; i < 4; ++i) {
    const auto cfg = ModelConfig::preset(kSizes[i]);
    const double got = static_cast<double>(count_params(Architecture::build(cfg)->registry)) / 1e6;
    o.pass &= cfg.num_classes == 150 && within(got, want[i], 0.05);
    o.detail += fmt("%s%.3fM/%.1f", i ? " " : "", got, want[i]);
  }
  return o;
}

Outcome encoder_table() {
  const double want[] = {4.2, 14.0, 26.8, 45.2};
  Outcome o{true, ""};
  for (size_t i = 0; i < 4; ++i) {
    const double got = static_cast<double>(count_params(build_encoder<float>(ModelConfig::preset(kSizes[i]), 1, 1000))) / 1e6;
    o.pass &= within(got, want[i], 0.05);
    o.detail += fmt("%s%.3fM/%.1f", i ? " " : "", got, want[i]);
  }
  return o;
}

Outcome flops_table() {
  const double want[] = {6.6, 15.9, 34.9, 70.0};
  Outcome o{true, ""};
  for (size_t i = 0; i < 4; ++i) {
    const double got = static_cast<double>(count_flops(*Architecture::build(ModelConfig::preset(kSizes[i])), 512, 512)) / 1e9;
    o.pass &= within(got, want[i], 0.10);
    o.detail += fmt("%s%.2fG/%.1f", i ? " " : "", got, want[i]);
  }
  auto cfg = ModelConfig::preset("segnext-t");
  const double c = static_cast<double>(count_flops(*Architecture::build(cfg), 512, 512)) / 1e9;
  cfg.decoder = DecoderVariant::mlp;
  const double a = static_cast<double>(count_flops(*Architecture::build(cfg), 512, 512)) / 1e9;
  cfg.decoder = DecoderVariant::ham;
  cfg.stage1_in_decoder = true;
  const double c1 = static_cast<double>(count_flops(*Architecture::build(cfg), 512, 512)) / 1e9;
  o.pass &= c < a && a < c1;
  o.detail += fmt("; decoders c %.2f < a %.2f < c+s1 %.2f", c, a, c1);
  return o;
}

Outcome conv_cases() {
  const auto r = conv_sweep::run(240, 4);
  const bool coverage = r.dense && r.grouped && r.depthwise && r.strided && r.strips;
  return {r.cases >= 200 && coverage && r.max_rel <= 1e-12,
          fmt("%d cases (dense %d, grouped %d, depthwise %d, stride-2 %d, strips %d), max rel %.2e", r.cases, r.dense,
              r.grouped, r.depthwise, r.strided, r.strips, r.max_rel)};
}

Tensor64 conv64(const Tensor64& x, const Tensor64& w, const ConvSpec& sp) {
  Tape<double> tape(false);
  return ag::conv2d(tape.constant(x), tape.constant(w), sp).value();
}

Outcome separable() {
  Outcome o{true, ""};
  for (int64_t k : {7, 11, 21}) {
    const int64_t C = 4;
    const auto u = oracle::random(Shape{C, 1, k, 1}, 100 + static_cast<uint64_t>(k));
    const auto v = oracle::random(Shape{C, 1, 1, k}, 200 + static_cast<uint64_t>(k));
    Tensor64 full(Shape{C, 1, k, k});
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < k; ++j) oracle::at(full, c, 0, i, j) = u.at(c, 0, i, 0) * v.at(c, 0, 0, j);
    const auto x = oracle::random(Shape{2, C, 31, 29}, 300 + static_cast<uint64_t>(k));
    const auto pair = conv64(conv64(x, v, ConvSpec::depthwise(C, 1, k, false)), u, ConvSpec::depthwise(C, k, 1, false));
    const double err = max_rel_error(pair, conv64(x, full, ConvSpec::depthwise(C, k, k, false)));
    o.pass &= err <= 1e-10;
    o.detail += fmt("%sk=%lld %.1e", o.detail.empty() ? "" : ", ", static_cast<long long>(k), err);
  }
  return o;
}

Outcome gradient_suite() {
  doctest::Context ctx;
  ctx.addFilter("test-case", "gradients of*,gradient of the full micro model");
  ctx.setOption("minimal", true);
  const int failed = ctx.run();
  return {failed == 0, failed == 0 ? "per-op (linear < 1e-5, others < 1e-4) and full micro model, 50 probes each"
                                   : "gradient suite reported failures above"};
}

Outcome nmf_properties() {
  int increases = 0, negative = 0;
  double worst_first = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = oracle::random({1, 1, 16, 64}, 500 + seed, 0.0, 1.0);
    const auto r = nmf_reconstruct(x, 4, 100, seed);
    if (r.residuals.size() != 101) return {false, "residual trace has the wrong length"};
    for (size_t i = 1; i < r.residuals.size(); ++i) increases += r.residuals[i] > r.residuals[i - 1];
    negative += !r.nonnegative;
    for (double v : r.bases.data()) negative += v < 0.0;
    for (double v : r.codes.data()) negative += v < 0.0;
    worst_first = std::max(worst_first, r.residuals.front());
  }
  Tensor64 x(Shape{1, 1, 16, 64});
  const auto u = oracle::random({1, 1, 1, 16}, 1, 0.1, 1.0), v = oracle::random({1, 1, 1, 64}, 2, 0.1, 1.0);
  for (int64_t i = 0; i < 16; ++i)
    for (int64_t j = 0; j < 64; ++j) oracle::at(x, 0, 0, i, j) = u[i] * v[j];
  const auto r = nmf_reconstruct(x, 1, 100, 3);
  double num = 0, den = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    num += std::pow(x[i] - r.reconstruction[i], 2);
    den += x[i] * x[i];
  }
  const double rank1 = std::sqrt(num / den);
  return {increases == 0 && negative == 0 && rank1 < 1e-3,
          fmt("20 seeds x 100 iters: %d increases, %d negative entries; rank-1 residual %.1e", increases, negative, rank1)};
}

int thread_count() { return static_cast<int>(std::clamp(std::thread::hardware_concurrency(), 1u, 8u)); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome training_smoke() {
  RunConfig cfg;
  cfg.train.threads = thread_count();
  const bool recipe = cfg.model == ModelConfig::preset("segnext-micro") && cfg.model.decoder == DecoderVariant::ham &&
                      cfg.model.num_classes == 3 && cfg.train.crop == 128 && cfg.train.batch == 8 &&
                      cfg.train.iters == 2000 && cfg.train.schedule.base_lr == 6e-5 && cfg.train.schedule.max_iter == 2000;
  const auto r = train(cfg, make_train_set(cfg), make_val_set(cfg));
  const double miou = evaluate(r.model, make_val_set(cfg), EvalOptions{}).mean;
  std::vector<double> early, late;
  for (const auto& row : r.log) {
    if (row.iter < 100) early.push_back(row.loss);
    if (row.iter >= 1900) late.push_back(row.loss);
  }
  const double me = median(early), ml = median(late);
  return {recipe && miou >= 0.90 && ml < me,
          fmt("val mIoU %.4f (need >= 0.90), loss median %.3f -> %.3f, %d thread(s)", miou, me, ml, cfg.train.threads)};
}

Outcome miou_oracle() {
  std::mt19937_64 rng(77);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const int k = 2 + static_cast<int>(rng() % 6);
    const int64_t h = 1 + static_cast<int64_t>(rng() % 24), w = 1 + static_cast<int64_t>(rng() % 24);
    std::vector<LabelMap> preds, gts;
    for (int img = 0; img < 3; ++img) {
      LabelMap p(h, w), g(h, w);
      for (auto& v : p.data) v = static_cast<uint8_t>(rng() % 9 == 0 ? 255 : rng() % static_cast<uint64_t>(k));
      for (auto& v : g.data) v = static_cast<uint8_t>(rng() % 6 == 0 ? 255 : rng() % static_cast<uint64_t>(k));
      preds.push_back(p);
      gts.push_back(g);
    }
    std::vector<std::vector<int64_t>> confusion(static_cast<size_t>(k), std::vector<int64_t>(static_cast<size_t>(k) + 1));
    for (size_t img = 0; img < preds.size(); ++img)
      for (size_t i = 0; i < preds[img].data.size(); ++i) {
        const int g = gts[img].data[i], p = preds[img].data[i];
        if (g != 255) ++confusion[static_cast<size_t>(g)][static_cast<size_t>(p == 255 ? k : p)];
      }
    const auto r = miou(preds, gts, k);
    for (int c = 0; c < k; ++c) {
      const auto cs = static_cast<size_t>(c);
      int64_t fn = 0, fp = 0;
      for (int j = 0; j <= k; ++j)
        if (j != c) fn += confusion[cs][static_cast<size_t>(j)];
      for (int g = 0; g < k; ++g)
        if (g != c) fp += confusion[static_cast<size_t>(g)][cs];
      mismatches += r.tp[cs] != confusion[cs][cs] || r.fp[cs] != fp || r.fn[cs] != fn;
    }
  }
  return {mismatches == 0, fmt("100 randomized pairs with ignored pixels, %d count mismatches", mismatches)};
}

Outcome ms_flip() {
  const auto model = SegModel<float>::build(ModelConfig::preset("segnext-micro"), 0);
  Tensor image = synth_dataset(21, 1, 128, 3)[0].image;
  auto px = image.mutable_data();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 128; ++y)
      for (int64_t x = 64; x < 128; ++x)
        px[static_cast<size_t>((c * 128 + y) * 128 + x)] = px[static_cast<size_t>((c * 128 + y) * 128 + 127 - x)];
  const std::vector<double> one{1.0};
  const auto plain = model.predict(image);
  const bool bitwise = ms_flip_inference(model, image, one, false).bitwise_equal(plain);
  const auto a = argmax_labels(plain), b = argmax_labels(ms_flip_inference(model, image, one, true));
  int64_t changed = 0;
  for (size_t i = 0; i < a.data.size(); ++i) changed += a.data[i] != b.data[i];
  const double frac = static_cast<double>(changed) / static_cast<double>(a.data.size());
  return {bitwise && frac < 0.05,
          fmt("plain forward %s; flip changes %.2f%% of argmax pixels", bitwise ? "reproduced bitwise" : "differs", 100 * frac)};
}

RunConfig small_run() {
  RunConfig cfg;
  cfg.data = {16, 4, 64};
  cfg.train.iters = 30;
  cfg.train.batch = 4;
  cfg.train.crop = 64;
  cfg.train.schedule.max_iter = 30;
  cfg.train.eval_interval = 10;
  cfg.train.threads = 1;
  cfg.seed = 11;
  return cfg;
}

Outcome determinism() {
  const auto cfg = small_run();
  const auto tr = make_train_set(cfg), va = make_val_set(cfg);
  std::ostringstream la, lb;
  const auto a = train(cfg, tr, va, &la);
  const auto b = train(cfg, tr, va, &lb);
  const bool logs = la.str() == lb.str() && !la.str().empty();
  const bool ckpt = encode_checkpoint(cfg, a.model, &a.optim) == encode_checkpoint(cfg, b.model, &b.optim);
  return {logs && ckpt, fmt("two single-threaded runs: logs %s, checkpoints %s", logs ? "identical" : "differ",
                            ckpt ? "identical" : "differ")};
}

Outcome checkpoint_round_trip() {
  auto cfg = small_run();
  cfg.train.iters = cfg.train.schedule.max_iter = 3;
  const auto run = train(cfg, make_train_set(cfg), make_val_set(cfg));
  const std::string a = (std::filesystem::temp_directory_path() / "segnext_accept_a.sgnx").string();
  const std::string b = (std::filesystem::temp_directory_path() / "segnext_accept_b.sgnx").string();
  save_checkpoint(a, cfg, run.model, &run.optim);
  const auto loaded = load_checkpoint(a);
  save_checkpoint(b, loaded.config, loaded.model, &*loaded.optim);
  const std::string bytes = read_file(a);
  const bool same = bytes == read_file(b);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
  std::mt19937_64 rng(13);
  int missed = 0, trials = 0;
  std::set<size_t> positions{0, 4, bytes.size() / 2, bytes.size() - 1};
  while (positions.size() < 500) positions.insert(rng() % bytes.size());
  for (size_t pos : positions) {
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ (1 + rng() % 255));
    ++trials;
    try {
      decode_checkpoint(bad);
      ++missed;
    } catch (const Error&) {
    }
  }
  return {same && missed == 0, fmt("save/load/save %s (%zu bytes); %d/%d single-byte corruptions undetected",
                                   same ? "byte-identical" : "differs", bytes.size(), missed, trials)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criterion numbers")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "parameter table", 5, params_table},
      {2, "encoder parameters", 5, encoder_table},
      {3, "FLOP table and decoder ordering", 10, flops_table},
      {4, "conv2d vs direct-loop oracle", 60, conv_cases},
      {5, "separable strip pair", 0, separable},
      {6, "gradient suite", 300, gradient_suite},
      {7, "NMF properties", 0, nmf_properties},
      {8, "end-to-end training smoke", 600, training_smoke},
      {9, "mIoU vs brute-force confusion", 0, miou_oracle},
      {10, "MS-flip consistency", 0, ms_flip},
      {11, "determinism", 0, determinism},
      {12, "checkpoint round trip", 0, checkpoint_round_trip},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s budget]", c.budget_s);
    }
    failed += !o.pass;
    std::printf("%-4s criterion %2d  %-32s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
