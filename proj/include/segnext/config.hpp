#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "segnext/encoder.hpp"
#include "segnext/optim.hpp"

namespace segnext {

struct TrainOptions {
  int64_t iters = 2000;
  int64_t batch = 8;
  int64_t crop = 128;
  LrSchedule schedule{};
  AdamWOptions adamw{};
  int64_t eval_interval = 0;        // 0: evaluate only after the last step
  int64_t checkpoint_interval = 0;  // 0: checkpoint only after the last step
  int threads = 1;
  bool operator==(const TrainOptions&) const = default;
};

struct DataOptions {
  int64_t train_samples = 256;
  int64_t val_samples = 128;
  int64_t size = 128;
  bool operator==(const DataOptions&) const = default;
};

struct EvalOptions {
  std::vector<double> scales{1.0};
  bool flip = false;
  bool operator==(const EvalOptions&) const = default;
};

/// Everything one command needs. All randomness derives from `seed`.
struct RunConfig {
  ModelConfig model = ModelConfig::preset("segnext-micro");
  TrainOptions train{};
  DataOptions data{};
  EvalOptions eval{};
  uint64_t seed = 0;
  std::string out_dir;
  bool operator==(const RunConfig&) const = default;

  void validate() const;
};

/// Line-oriented `key = value` text with `[model]`, `[train]`, `[data]` and
/// `[eval]` sections; `#` and `;` start comments. A top-level
/// `model = <preset>` seeds the model section, later keys override it.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

/// Canonical text; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);

}  // namespace segnext
