#pragma once

#include <cstdint>
#include <vector>

#include "segnext/data.hpp"

namespace segnext {

/// K x K pixel counts, row = ground truth, column = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes, int ignore_index = kIgnoreLabel);

  /// Pixels whose ground truth is ignore_index are skipped. A prediction of
  /// ignore_index on a labelled pixel counts as a miss for that class.
  void add(const LabelMap& pred, const LabelMap& gt);

  int num_classes() const { return k_; }
  int64_t at(int gt, int pred) const { return counts_[static_cast<size_t>(gt * k_ + pred)]; }
  int64_t missed(int gt) const { return missed_[static_cast<size_t>(gt)]; }

 private:
  int k_;
  int ignore_;
  std::vector<int64_t> counts_;
  std::vector<int64_t> missed_;
};

struct MiouResult {
  std::vector<double> iou;  // NaN for classes absent from both sides
  std::vector<int64_t> tp, fp, fn;
  double mean = 0.0;
};

MiouResult miou_from(const ConfusionMatrix& cm);
MiouResult miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes,
                int ignore_index = kIgnoreLabel);

}  // namespace segnext
