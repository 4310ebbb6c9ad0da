#pragma once

#include <cstdint>
#include <optional>

#include "common.hpp"

namespace kseg {

// Per-pixel class-id map.
struct SegMask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> ids;

  SegMask() = default;
  SegMask(std::size_t h_, std::size_t w_, std::uint8_t fill = 0)
      : h(h_), w(w_), ids(h_ * w_, fill) {}

  std::size_t size() const { return ids.size(); }
};

// counts(i, j): pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {}

  void add(const SegMask& pred, const SegMask& truth);
  void merge(const ConfusionMatrix& other);

  std::uint64_t at(std::size_t true_c, std::size_t pred_c) const {
    return counts_[true_c * num_classes_ + pred_c];
  }
  std::uint64_t total() const;
  std::size_t num_classes() const { return num_classes_; }

  std::uint64_t tp(std::size_t c) const { return at(c, c); }
  std::uint64_t fp(std::size_t c) const;
  std::uint64_t fn(std::size_t c) const;

 private:
  std::size_t num_classes_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion_matrix(const SegMask& pred, const SegMask& truth,
                                 std::size_t num_classes);

double pixel_accuracy(const ConfusionMatrix& cm);

// IoU of a class absent from both masks is 1.0 (vacuous agreement).
double iou_class(const ConfusionMatrix& cm, std::size_t c);

// Unweighted mean over classes present in the matrix (truth or prediction);
// classes absent from the entire evaluation are excluded.
double mean_iou(const ConfusionMatrix& cm);

struct MonitorConfig {
  std::size_t window = 60;
  std::uint8_t slag_class = 1;
  std::size_t h = 0, w = 0;
};

double slag_fraction(const SegMask& pred, const MonitorConfig& cfg);

// Population variance over each full window of k values ending at t;
// output length = input length - k + 1.
std::vector<double> running_variance(const std::vector<double>& series, std::size_t k);

// Streaming counterpart used by the pipeline monitor.
class RunningVarianceMonitor {
 public:
  explicit RunningVarianceMonitor(std::size_t k);
  std::optional<double> push(double value);

 private:
  std::size_t k_;
  std::vector<double> window_;  // ring buffer
  std::size_t head_ = 0, count_ = 0;
};

// precision is absent when there are no predicted positives.
std::pair<std::optional<double>, double> precision_recall(const std::vector<bool>& predicted,
                                                          const std::vector<bool>& truth);

}  // namespace kseg
