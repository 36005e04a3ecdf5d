#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace segnext {

/// Per-layer parameter and FLOP accounting at one input size.
///
/// Convention: one multiply-accumulate is one unit; batch norm and every
/// elementwise op cost one unit per output element; bilinear resize costs
/// eight units per output element. Matrix products inside the NMF unit are
/// counted per iteration.
struct CostReport {
  struct Layer {
    std::string name;
    int64_t params = 0;
    int64_t flops = 0;
  };

  static constexpr const char* kConvention = "mac=1,bn=1/elem,eltwise=1/elem,resize=8/elem";

  std::vector<Layer> layers;
  int64_t input_h = 0;
  int64_t input_w = 0;

  void add(std::string name, int64_t params, int64_t flops) {
    layers.push_back({std::move(name), params, flops});
  }
  int64_t total_params() const {
    int64_t s = 0;
    for (const auto& l : layers) s += l.params;
    return s;
  }
  int64_t total_flops() const {
    int64_t s = 0;
    for (const auto& l : layers) s += l.flops;
    return s;
  }
};

}  // namespace segnext
