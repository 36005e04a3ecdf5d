#include <doctest.h>

#include <cmath>
#include <sstream>

#include "segnext/analysis.hpp"
#include "segnext/optim.hpp"

using namespace segnext;

namespace {

const char* const kSizes[] = {"segnext-t", "segnext-s", "segnext-b", "segnext-l"};

}  // namespace

TEST_CASE("count_params: single 3x3 conv") {
  Registry reg;
  const auto conv = ConvLayer::create(reg, "c", ConvSpec::make(3, 8, 3, 3));
  CHECK(count_params(reg) == 224);
  CostReport r;
  conv.cost(r, Shape{1, 3, 16, 16});
  CHECK(r.total_params() == 224);
}

TEST_CASE("count_flops: single 1x1 conv") {
  Registry reg;
  const auto conv = ConvLayer::create(reg, "c", ConvSpec::pointwise(4, 8));
  CostReport r;
  CHECK(conv.cost(r, Shape{1, 4, 16, 16}) == Shape{1, 8, 16, 16});
  CHECK(r.total_flops() == 8192);
}

TEST_CASE("batch-norm running statistics are not parameters") {
  Registry reg;
  BatchNormLayer::create(reg, "bn", 6);
  CHECK(count_params(reg) == 12);
  CHECK(reg.buffers().size() == 2);
}

TEST_CASE("parameter and FLOP tables for the four sizes") {
  const double params_m[] = {4.3, 13.9, 27.6, 48.9};
  const double encoder_m[] = {4.2, 14.0, 26.8, 45.2};
  const double gflops[] = {6.6, 15.9, 34.9, 70.0};
  for (size_t i = 0; i < 4; ++i) {
    CAPTURE(kSizes[i]);
    const auto arch = Architecture::build(ModelConfig::preset(kSizes[i]));
    const double p = static_cast<double>(count_params(arch->registry)) / 1e6;
    CHECK(std::abs(p - params_m[i]) <= 0.05 * params_m[i]);
    const auto enc = build_encoder<float>(ModelConfig::preset(kSizes[i]), 1, 1000);
    const double e = static_cast<double>(count_params(enc)) / 1e6;
    CHECK(std::abs(e - encoder_m[i]) <= 0.05 * encoder_m[i]);
    const double g = static_cast<double>(count_flops(*arch, 512, 512)) / 1e9;
    CHECK(std::abs(g - gflops[i]) <= 0.10 * gflops[i]);
  }
}

TEST_CASE("decoder FLOP ordering for SegNeXt-T") {
  auto cfg = ModelConfig::preset("segnext-t");
  const int64_t c = count_flops(*Architecture::build(cfg), 512, 512);
  cfg.decoder = DecoderVariant::mlp;
  const int64_t a = count_flops(*Architecture::build(cfg), 512, 512);
  cfg.decoder = DecoderVariant::ham;
  cfg.stage1_in_decoder = true;
  const int64_t c1 = count_flops(*Architecture::build(cfg), 512, 512);
  CHECK(c < a);
  CHECK(a < c1);
}

TEST_CASE("cost report totals are additive") {
  const auto arch = Architecture::build(ModelConfig::preset("segnext-s"));
  const auto r = arch->cost(256, 320);
  int64_t enc_f = 0, dec_f = 0, enc_p = 0, dec_p = 0;
  for (const auto& l : r.layers) {
    const bool dec = l.name.starts_with("decoder.");
    (dec ? dec_f : enc_f) += l.flops;
    (dec ? dec_p : enc_p) += l.params;
  }
  CHECK(enc_f + dec_f == r.total_flops());
  CHECK(enc_f > 0);
  CHECK(dec_f > 0);
  CHECK(enc_p + dec_p == count_params(arch->registry));
  CHECK(r.total_flops() == count_flops(*arch, 256, 320));
}

TEST_CASE("parameter count is input-size independent and FLOPs grow with area") {
  const auto arch = Architecture::build(ModelConfig::preset("segnext-t"));
  CHECK(arch->cost(64, 64).total_params() == arch->cost(512, 384).total_params());
  CHECK(count_flops(*arch, 512, 512) > count_flops(*arch, 256, 512));
  CHECK(count_flops(*arch, 256, 512) > count_flops(*arch, 256, 256));
}

TEST_CASE("presets are monotone in parameters and FLOPs") {
  int64_t last_p = 0, last_f = 0;
  for (const char* name : kSizes) {
    const auto arch = Architecture::build(ModelConfig::preset(name));
    const int64_t p = count_params(arch->registry), f = count_flops(*arch, 512, 512);
    CHECK(p > last_p);
    CHECK(f > last_f);
    last_p = p;
    last_f = f;
  }
}

TEST_CASE("parameter count equals the optimizer's flattened length") {
  const auto m = SegModel<float>::build(ModelConfig::preset("segnext-t"), 1);
  const auto state = OptimState<float>::create(m.store().params, AdamWOptions{});
  int64_t flat = 0;
  for (const auto& t : state.m) flat += t.numel();
  CHECK(flat == count_params(m));
}

TEST_CASE("tape FLOP counter agrees with the analytic count") {
  for (auto variant : {DecoderVariant::ham, DecoderVariant::mlp, DecoderVariant::core}) {
    auto cfg = ModelConfig::preset("segnext-micro");
    cfg.decoder = variant;
    const auto m = SegModel<float>::build(cfg, 1);
    for (int64_t s : {64, 65, 97}) {
      CAPTURE(to_string(variant));
      CAPTURE(s);
      int64_t measured = 0;
      m.predict(Tensor(Shape{1, 3, s, s}, 0.5f), &measured);
      CHECK(measured == count_flops(m, s, s));
    }
  }
}

TEST_CASE("cost report output formats") {
  const auto arch = Architecture::build(ModelConfig::preset("segnext-micro"));
  const auto r = arch->cost(64, 64);
  std::ostringstream lines;
  write_cost_lines(lines, r);
  std::istringstream in(lines.str());
  std::string line;
  int64_t n = 0, p = 0, f = 0;
  while (std::getline(in, line)) {
    const auto t1 = line.find('\t'), t2 = line.find('\t', t1 + 1);
    REQUIRE(t2 != std::string::npos);
    p += std::stoll(line.substr(t1 + 1, t2 - t1 - 1));
    f += std::stoll(line.substr(t2 + 1));
    ++n;
  }
  CHECK(n == static_cast<int64_t>(r.layers.size()));
  CHECK(p == r.total_params());
  CHECK(f == r.total_flops());
  std::ostringstream table;
  write_cost_table(table, r);
  CHECK(table.str().find("decoder.classifier") != std::string::npos);
}

TEST_CASE("bench_latency") {
  const auto m = SegModel<float>::build(ModelConfig::preset("segnext-micro"), 1);
  const auto one = bench_latency(m, 64, 64, 0, 1);
  CHECK(one.reps == 1);
  CHECK(std::isfinite(one.median_ms));
  CHECK(one.median_ms > 0.0);
  CHECK(one.median_ms == one.p90_ms);
  const auto many = bench_latency(m, 64, 64, 1, 7);
  CHECK(many.median_ms <= many.p90_ms);
  CHECK(many.threads >= 1);
  CHECK_FALSE(many.build_flags.empty());
  CHECK_THROWS_AS(bench_latency(m, 64, 64, 0, 0), Error);
}
