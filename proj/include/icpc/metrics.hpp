#pragma once

// Segmentation metrics: pooled confusion matrix over a split, per-class IoU,
// and mIoU over the classes present in ground truth.

#include <vector>

#include "icpc/check.hpp"
#include "icpc/data.hpp"

namespace icpc {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes) : k_(num_classes) {
    check(num_classes >= 1, "confusion: at least one class required");
    counts_.assign(static_cast<size_t>(k_) * k_, 0);
  }

  // gt rows ignore-labeled pixels; predictions must be valid class ids.
  void update(const std::vector<int>& pred, const std::vector<int>& gt) {
    check(pred.size() == gt.size(), "confusion: prediction/label size mismatch");
    for (size_t i = 0; i < pred.size(); ++i) {
      if (gt[i] == kIgnoreLabel) continue;
      check(0 <= gt[i] && gt[i] < k_, "confusion: label out of range");
      check(0 <= pred[i] && pred[i] < k_, "confusion: prediction out of range");
      ++counts_[static_cast<size_t>(gt[i]) * k_ + pred[i]];
    }
  }

  long long true_positive(int k) const { return counts_[static_cast<size_t>(k) * k_ + k]; }

  long long gt_count(int k) const {
    long long n = 0;
    for (int j = 0; j < k_; ++j) n += counts_[static_cast<size_t>(k) * k_ + j];
    return n;
  }

  long long pred_count(int k) const {
    long long n = 0;
    for (int j = 0; j < k_; ++j) n += counts_[static_cast<size_t>(j) * k_ + k];
    return n;
  }

  // IoU_k = TP / (TP + FP + FN); classes with no GT pixels report -1.
  std::vector<double> iou_per_class() const {
    std::vector<double> out(static_cast<size_t>(k_), -1.0);
    for (int k = 0; k < k_; ++k) {
      long long tp = true_positive(k);
      long long uni = gt_count(k) + pred_count(k) - tp;
      if (gt_count(k) == 0) continue;  // absent from GT: excluded from the mean
      out[static_cast<size_t>(k)] = uni > 0 ? static_cast<double>(tp) / uni : 0.0;
    }
    return out;
  }

  // Mean over classes present in ground truth.
  double miou() const {
    double sum = 0.0;
    int n = 0;
    for (double v : iou_per_class())
      if (v >= 0.0) {
        sum += v;
        ++n;
      }
    check(n > 0, "confusion: no ground-truth pixels seen");
    return sum / n;
  }

  int num_classes() const { return k_; }

 private:
  int k_;
  std::vector<long long> counts_;
};

}  // namespace icpc
