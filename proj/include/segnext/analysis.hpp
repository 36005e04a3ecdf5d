#pragma once

#include <iosfwd>
#include <string>

#include "segnext/model.hpp"

namespace segnext {

/// Learnable scalars; running statistics are excluded.
int64_t count_params(const Registry& reg);

template <class T>
int64_t count_params(const SegModel<T>& model) {
  return model.store().scalar_count();
}

template <class T>
int64_t count_params(const EncoderModel<T>& model) {
  return model.store.scalar_count();
}

/// Analytic single-image cost at h x w.
CostReport cost_report(const Architecture& arch, int64_t h, int64_t w);
int64_t count_flops(const Architecture& arch, int64_t h, int64_t w);

template <class T>
int64_t count_flops(const SegModel<T>& model, int64_t h, int64_t w) {
  return count_flops(model.arch(), h, w);
}

struct LatencyStats {
  double median_ms = 0.0;
  double p90_ms = 0.0;
  int threads = 1;
  int reps = 0;
  std::string build_flags;
};

/// Wall-clock eval-mode forward latency for a 1 x 3 x h x w input.
LatencyStats bench_latency(const SegModel<float>& model, int64_t h, int64_t w, int warmup, int reps);

/// Aligned table followed by one `layer<TAB>params<TAB>flops` line per layer.
void write_cost_table(std::ostream& os, const CostReport& report);
void write_cost_lines(std::ostream& os, const CostReport& report);

}  // namespace segnext
