#include <doctest.h>

#include "gradcheck.hpp"
#include "segnext/decoder.hpp"
#include "segnext/model.hpp"

using namespace segnext;
using gradcheck::op;
using V = std::vector<Var<double>>;

namespace {

Tensor64 away_from_zero(Shape s, uint64_t seed) {
  auto t = oracle::random(s, seed, 0.1, 1.0);
  std::mt19937_64 rng(seed + 1);
  for (auto& v : t.mutable_data())
    if (rng() & 1) v = -v;
  return t;
}

// Fan-in scaled weights and unit-order affine/layer-scale values, so every
// parameter carries a gradient well above finite-difference noise.
void condition(SegModel<double>& model, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto& params = model.store().params;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& spec = model.registry().params()[i];
    const Shape s = spec.shape;
    const bool weight = spec.name.ends_with(".weight");
    const bool per_channel = s.n * s.h * s.w == 1;
    for (auto& v : params[i].mutable_data()) {
      if (weight && !per_channel)
        v = normal(rng) / std::sqrt(static_cast<double>(s.c * s.h * s.w));
      else if (weight || spec.name.find("layer_scale") != std::string::npos)
        v = 1.0 + 0.5 * unit(rng);
      else
        v = 0.2 * unit(rng);
    }
  }
}

}  // namespace

TEST_CASE("gradients of linear and bilinear ops") {
  const double tol = 1e-5;
  SUBCASE("conv2d dense with bias") {
    const auto sp = ConvSpec::make(2, 3, 3, 3);
    const auto r = op([&](const V& v) { return ag::conv2d(v[0], v[1], std::optional<Var<double>>(v[2]), sp); },
                      {oracle::random({1, 2, 5, 5}, 1), oracle::random(sp.weight_shape(), 2), oracle::random({1, 3, 1, 1}, 3)},
                      30, 4);
    CHECK(r.max_rel < tol);
  }
  SUBCASE("conv2d grouped strided strip") {
    const auto sp = ConvSpec::make(4, 6, 1, 7, 2, 2, true);
    const auto r = op([&](const V& v) { return ag::conv2d(v[0], v[1], std::optional<Var<double>>(v[2]), sp); },
                      {oracle::random({2, 4, 6, 9}, 5), oracle::random(sp.weight_shape(), 6), oracle::random({1, 6, 1, 1}, 7)},
                      30, 8);
    CHECK(r.max_rel < tol);
  }
  SUBCASE("add, mul, scalar ops") {
    const Shape s{2, 3, 4, 4};
    CHECK(op([](const V& v) { return ag::add(v[0], v[1]); }, {oracle::random(s, 9), oracle::random(s, 10)}, 50, 11).max_rel < tol);
    CHECK(op([](const V& v) { return ag::mul(v[0], v[1]); }, {oracle::random(s, 12), oracle::random(s, 13)}, 50, 14).max_rel < tol);
    CHECK(op([](const V& v) { return ag::add_scalar(ag::mul_scalar(v[0], 1.7), -0.3); }, {oracle::random(s, 15)}, 50, 16)
              .max_rel < tol);
    CHECK(op([](const V& v) { return ag::channel_scale(v[0], v[1]); }, {oracle::random(s, 17), oracle::random({1, 3, 1, 1}, 18)}, 50, 19)
              .max_rel < tol);
  }
  SUBCASE("resize, concat, reshape, flip, sum") {
    CHECK(op([](const V& v) { return ag::resize_bilinear(v[0], 7, 3); }, {oracle::random({2, 2, 4, 5}, 20)}, 50, 21).max_rel < tol);
    CHECK(op([](const V& v) { return ag::resize_bilinear(v[0], 2, 2); }, {oracle::random({1, 2, 5, 6}, 22)}, 50, 23).max_rel < tol);
    CHECK(op([](const V& v) { return ag::concat_channels<double>(v); },
             {oracle::random({2, 1, 3, 3}, 24), oracle::random({2, 3, 3, 3}, 25)}, 50, 26)
              .max_rel < tol);
    CHECK(op([](const V& v) { return ag::reshape(v[0], Shape{1, 2, 6, 2}); }, {oracle::random({2, 2, 3, 2}, 27)}, 50, 28).max_rel < tol);
    CHECK(op([](const V& v) { return ag::flip_horizontal(v[0]); }, {oracle::random({1, 2, 3, 5}, 29)}, 50, 30).max_rel < tol);
    CHECK(op([](const V& v) { return ag::sum(v[0]); }, {oracle::random({1, 2, 3, 5}, 31)}, 50, 32).max_rel < tol);
  }
  SUBCASE("matmul in every transpose combination") {
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        const Shape a = ta ? Shape{2, 1, 4, 3} : Shape{2, 1, 3, 4};
        const Shape b = tb ? Shape{2, 1, 5, 4} : Shape{2, 1, 4, 5};
        const auto r = op([&](const V& v) { return ag::matmul(v[0], v[1], ta == 1, tb == 1); },
                          {oracle::random(a, 33 + static_cast<uint64_t>(ta)), oracle::random(b, 35 + static_cast<uint64_t>(tb))}, 50, 37);
        CHECK(r.max_rel < tol);
      }
  }
}

TEST_CASE("gradients of nonlinear ops") {
  const double tol = 1e-4;
  const Shape s{2, 3, 4, 4};
  CHECK(op([](const V& v) { return ag::gelu(v[0]); }, {oracle::random(s, 40, -3, 3)}, 50, 41).max_rel < tol);
  CHECK(op([](const V& v) { return ag::relu(v[0]); }, {away_from_zero(s, 42)}, 50, 43).max_rel < tol);
  CHECK(op([](const V& v) { return ag::div(v[0], v[1]); }, {oracle::random(s, 44), oracle::random(s, 45, 0.5, 2.0)}, 50, 46).max_rel < tol);

  SUBCASE("batch norm, training mode") {
    const auto r = op(
        [](const V& v) {
          Tensor64 rm(Shape{1, 3, 1, 1}), rv(Shape{1, 3, 1, 1}, 1.0);
          return ag::batch_norm(v[0], v[1], v[2], rm, rv, {true, 1e-5, 0.1});
        },
        {oracle::random(s, 47), oracle::random({1, 3, 1, 1}, 48, 0.5, 1.5), oracle::random({1, 3, 1, 1}, 49)}, 50, 50);
    CHECK(r.max_rel < tol);
  }
  SUBCASE("batch norm, eval mode") {
    const auto r = op(
        [](const V& v) {
          Tensor64 rm = oracle::random({1, 3, 1, 1}, 51), rv = oracle::random({1, 3, 1, 1}, 52, 0.5, 2.0);
          return ag::batch_norm(v[0], v[1], v[2], rm, rv, {false, 1e-5, 0.1});
        },
        {oracle::random(s, 53), oracle::random({1, 3, 1, 1}, 54, 0.5, 1.5), oracle::random({1, 3, 1, 1}, 55)}, 50, 56);
    CHECK(r.max_rel < tol);
  }
  SUBCASE("cross entropy with ignored pixels") {
    std::vector<uint8_t> labels(2 * 4 * 4);
    std::mt19937_64 rng(57);
    for (auto& l : labels) l = static_cast<uint8_t>(rng() % 4 == 0 ? 255 : rng() % 3);
    const auto r = op([&](const V& v) { return ag::cross_entropy(v[0], std::span<const uint8_t>(labels)); },
                      {oracle::random({2, 3, 4, 4}, 58, -3, 3)}, 50, 59);
    CHECK(r.max_rel < tol);
  }
  SUBCASE("unrolled NMF") {
    const auto r = op([](const V& v) { return nmf(v[0], NmfOptions{2, 3, 9, 1e-6}); },
                      {oracle::random({2, 1, 5, 7}, 60, 0.1, 1.0)}, 50, 61);
    CHECK(r.max_rel < tol);
  }
}

TEST_CASE("gradient of the full micro model") {
  for (auto variant : {DecoderVariant::ham, DecoderVariant::mlp, DecoderVariant::core}) {
    CAPTURE(to_string(variant));
    auto cfg = ModelConfig::preset("segnext-micro");
    cfg.decoder = variant;
    auto model = SegModel<double>::build(cfg, 3);
    condition(model, 5);
    const auto image = oracle::random({2, 3, 64, 64}, 70, 0.0, 1.0);
    std::vector<uint8_t> labels(2 * 64 * 64);
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<uint8_t>((i / 7) % 3);
    auto loss_of = [&](Tape<double>& tape, std::vector<Var<double>>* params) {
      Context<double> ctx(tape, model.store(), true, params != nullptr);
      const auto out = model.forward(ctx, tape.constant(image));
      if (params) *params = ctx.params;
      return ag::cross_entropy(out, std::span<const uint8_t>(labels));
    };
    std::vector<Tensor64> analytic;
    {
      Tape<double> tape;
      std::vector<Var<double>> params;
      const auto loss = loss_of(tape, &params);
      const auto g = tape.backward(loss);
      for (const auto& p : params) analytic.push_back(g.of(p));
    }
    auto numeric = [&]() {
      Tape<double> tape(false);
      return loss_of(tape, nullptr).value()[0];
    };
    const auto r = gradcheck::directional(model.store().params, analytic, numeric, 50, 71);
    CHECK(r.probes >= 50);
    CHECK(r.max_rel < 1e-4);
  }
}
