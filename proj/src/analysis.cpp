#include "segnext/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "segnext/kernels.hpp"

namespace segnext {

int64_t count_params(const Registry& reg) { return reg.scalar_count(); }

CostReport cost_report(const Architecture& arch, int64_t h, int64_t w) { return arch.cost(h, w); }

int64_t count_flops(const Architecture& arch, int64_t h, int64_t w) {
  return arch.cost(h, w).total_flops();
}

namespace {
std::string build_flags() {
  std::ostringstream os;
#ifdef NDEBUG
  os << "release";
#else
  os << "debug";
#endif
#ifdef __OPTIMIZE__
  os << ",optimized";
#endif
#ifdef __AVX2__
  os << ",avx2";
#endif
#ifdef __AVX512F__
  os << ",avx512f";
#endif
  return os.str();
}

// Nearest-rank percentile of a sorted sample.
double percentile(const std::vector<double>& sorted, double q) {
  const auto n = sorted.size();
  auto rank = static_cast<size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<size_t>(rank, 1, n);
  return sorted[rank - 1];
}
}  // namespace

LatencyStats bench_latency(const SegModel<float>& model, int64_t h, int64_t w, int warmup, int reps) {
  if (reps < 1) throw Error("bench_latency: reps must be >= 1, got " + std::to_string(reps));
  if (warmup < 0) throw Error("bench_latency: warmup must be >= 0");
  Tensor image(Shape{1, 3, h, w});
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& v : image.mutable_data()) v = u(rng);

  for (int i = 0; i < warmup; ++i) model.predict(image);
  std::vector<double> ms;
  ms.reserve(static_cast<size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.predict(image);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  LatencyStats s;
  s.median_ms = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  s.p90_ms = std::max(s.median_ms, percentile(ms, 0.9));
  s.threads = kernels::max_threads();
  s.reps = reps;
  s.build_flags = build_flags();
  return s;
}

void write_cost_table(std::ostream& os, const CostReport& report) {
  size_t width = 5;
  for (const auto& l : report.layers) width = std::max(width, l.name.size());
  os << "input " << report.input_h << "x" << report.input_w << "  convention " << CostReport::kConvention
     << "\n";
  os << std::left << std::setw(static_cast<int>(width)) << "layer" << std::right << std::setw(14) << "params"
     << std::setw(18) << "flops" << "\n";
  for (const auto& l : report.layers) {
    os << std::left << std::setw(static_cast<int>(width)) << l.name << std::right << std::setw(14) << l.params
       << std::setw(18) << l.flops << "\n";
  }
  os << std::left << std::setw(static_cast<int>(width)) << "total" << std::right << std::setw(14)
     << report.total_params() << std::setw(18) << report.total_flops() << "\n";
  os << std::fixed << std::setprecision(3) << "params " << report.total_params() / 1e6 << " M, flops "
     << report.total_flops() / 1e9 << " G\n";
  os.unsetf(std::ios::floatfield);
}

void write_cost_lines(std::ostream& os, const CostReport& report) {
  for (const auto& l : report.layers) os << l.name << '\t' << l.params << '\t' << l.flops << '\n';
}

}  // namespace segnext
