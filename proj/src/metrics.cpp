#include "segnext/metrics.hpp"

#include <cmath>
#include <limits>

namespace segnext {

ConfusionMatrix::ConfusionMatrix(int num_classes, int ignore_index)
    : k_(num_classes), ignore_(ignore_index) {
  if (num_classes < 1) throw Error("miou: num_classes must be positive");
  counts_.assign(static_cast<size_t>(k_ * k_), 0);
  missed_.assign(static_cast<size_t>(k_), 0);
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw Error("miou: prediction " + std::to_string(pred.h) + "x" + std::to_string(pred.w) +
                " does not match ground truth " + std::to_string(gt.h) + "x" + std::to_string(gt.w));
  }
  for (size_t i = 0; i < gt.data.size(); ++i) {
    const int g = gt.data[i];
    const int p = pred.data[i];
    if (g == ignore_) continue;
    if (g >= k_) throw Error("miou: ground-truth label " + std::to_string(g) + " out of range");
    if (p == ignore_) {
      ++missed_[static_cast<size_t>(g)];
      continue;
    }
    if (p >= k_) throw Error("miou: predicted label " + std::to_string(p) + " out of range");
    ++counts_[static_cast<size_t>(g * k_ + p)];
  }
}

MiouResult miou_from(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  MiouResult r;
  r.iou.assign(static_cast<size_t>(k), std::numeric_limits<double>::quiet_NaN());
  r.tp.assign(static_cast<size_t>(k), 0);
  r.fp.assign(static_cast<size_t>(k), 0);
  r.fn.assign(static_cast<size_t>(k), 0);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    int64_t fp = 0, fn = cm.missed(c);
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const int64_t tp = cm.at(c, c);
    r.tp[static_cast<size_t>(c)] = tp;
    r.fp[static_cast<size_t>(c)] = fp;
    r.fn[static_cast<size_t>(c)] = fn;
    const int64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += r.iou[static_cast<size_t>(c)];
    ++present;
  }
  r.mean = present > 0 ? sum / present : 0.0;
  return r;
}

MiouResult miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes,
                int ignore_index) {
  if (preds.size() != gts.size()) throw Error("miou: prediction and ground-truth counts differ");
  ConfusionMatrix cm(num_classes, ignore_index);
  for (size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], gts[i]);
  return miou_from(cm);
}

}  // namespace segnext
