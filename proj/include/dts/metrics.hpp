#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dts/error.hpp"
#include "dts/label_map.hpp"

namespace dts {

/// counts(i, j) = pixels with ground truth i predicted as j. Ignore pixels are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0)
      : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
    if (num_classes < 0) throw ConfigError("confusion matrix needs a non-negative class count");
  }

  int num_classes() const noexcept { return classes_; }
  std::uint64_t operator()(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * classes_ + pred];
  }
  std::uint64_t& operator()(int gt, int pred) { return counts_[static_cast<std::size_t>(gt) * classes_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts_) t += c;
    return t;
  }
  std::uint64_t row_sum(int c) const {
    std::uint64_t s = 0;
    for (int j = 0; j < classes_; ++j) s += (*this)(c, j);
    return s;
  }
  std::uint64_t col_sum(int c) const {
    std::uint64_t s = 0;
    for (int i = 0; i < classes_; ++i) s += (*this)(i, c);
    return s;
  }
  bool is_diagonal() const {
    for (int i = 0; i < classes_; ++i)
      for (int j = 0; j < classes_; ++j)
        if (i != j && (*this)(i, j) != 0) return false;
    return true;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

inline void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  if (!pred.same_size(gt)) throw DimensionError("accumulate: prediction and ground truth sizes differ");
  const int C = cm.num_classes();
  for (std::size_t p = 0; p < gt.ids.size(); ++p) {
    const std::uint8_t y = pred.ids[p];
    if (y == kIgnoreLabel) throw ConfigError("accumulate: predictions must not contain the ignore label");
    if (y >= C) throw ConfigError("accumulate: predicted class " + std::to_string(y) + " out of range");
  }
  for (std::size_t p = 0; p < gt.ids.size(); ++p) {
    const std::uint8_t g = gt.ids[p];
    if (g == kIgnoreLabel) continue;
    if (g >= C) throw ConfigError("accumulate: ground-truth class " + std::to_string(g) + " out of range");
    cm(g, pred.ids[p]) += 1;
  }
}

struct IouResult {
  std::vector<double> per_class;  // NaN for classes excluded from the mean
  std::vector<bool> counted;
  double miou = 0.0;
};

/// IoU_c = tp / (gt_c + pred_c - tp). Classes absent from both ground truth and
/// predictions are excluded from the mean; absent-but-predicted classes score 0.
inline IouResult miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ConfigError("miou: confusion matrix is empty");
  const int C = cm.num_classes();
  IouResult r;
  r.per_class.assign(static_cast<std::size_t>(C), 0.0);
  r.counted.assign(static_cast<std::size_t>(C), false);
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < C; ++c) {
    const double tp = static_cast<double>(cm(c, c));
    const double uni = static_cast<double>(cm.row_sum(c) + cm.col_sum(c)) - tp;
    if (uni == 0.0) {
      r.per_class[static_cast<std::size_t>(c)] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const double iou = tp / uni;
    r.per_class[static_cast<std::size_t>(c)] = iou;
    r.counted[static_cast<std::size_t>(c)] = true;
    sum += iou;
    ++n;
  }
  r.miou = n > 0 ? sum / n : 0.0;
  return r;
}

}  // namespace dts
