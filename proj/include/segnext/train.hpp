#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "segnext/config.hpp"
#include "segnext/data.hpp"
#include "segnext/metrics.hpp"
#include "segnext/model.hpp"
#include "segnext/optim.hpp"

namespace segnext {

/// Logits averaged over every scale (and the mirrored input when `flip`),
/// each resized back to the input size.
template <class T>
BasicTensor<T> ms_flip_inference(const SegModel<T>& model, const BasicTensor<T>& image,
                                 std::span<const double> scales, bool flip);

/// Per-pixel argmax of a 1 x K x H x W logit map; ties go to the lower class.
template <class T>
LabelMap argmax_labels(const BasicTensor<T>& logits);

MiouResult evaluate(const SegModel<float>& model, const std::vector<SegSample>& samples,
                    const EvalOptions& opts);

struct MetricsRow {
  int64_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> miou;
};

void write_metrics_row(std::ostream& os, const MetricsRow& row);

struct TrainResult {
  SegModel<float> model;
  OptimState<float> optim;
  std::vector<MetricsRow> log;
};

/// Thrown when the loss stops being finite; the last checkpoint on disk is
/// left untouched.
struct TrainDiverged : Error {
  using Error::Error;
};

/// Runs cfg.train.iters AdamW steps on augmented batches drawn from
/// `train_set`. When cfg.out_dir is set, metrics.tsv and checkpoint.sgnx are
/// written there. `log` receives every metrics row as it is produced.
TrainResult train(const RunConfig& cfg, const std::vector<SegSample>& train_set,
                  const std::vector<SegSample>& val_set, std::ostream* log = nullptr);

/// Train/validation sets for a config; validation uses a derived seed.
std::vector<SegSample> make_train_set(const RunConfig& cfg);
std::vector<SegSample> make_val_set(const RunConfig& cfg);

}  // namespace segnext
