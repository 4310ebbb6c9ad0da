#include "metrics.hpp"

namespace kseg {

void ConfusionMatrix::add(const SegMask& pred, const SegMask& truth) {
  require(pred.h == truth.h && pred.w == truth.w, ErrorClass::Shape,
          "confusion_matrix: mask shape mismatch");
  for (std::size_t i = 0; i < truth.ids.size(); ++i) {
    require(truth.ids[i] < num_classes_ && pred.ids[i] < num_classes_, ErrorClass::Shape,
            "confusion_matrix: class id out of range");
    ++counts_[truth.ids[i] * num_classes_ + pred.ids[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  require(other.num_classes_ == num_classes_, ErrorClass::Shape,
          "confusion matrix merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::fp(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < num_classes_; ++i)
    if (i != c) s += at(i, c);
  return s;
}

std::uint64_t ConfusionMatrix::fn(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < num_classes_; ++j)
    if (j != c) s += at(c, j);
  return s;
}

ConfusionMatrix confusion_matrix(const SegMask& pred, const SegMask& truth,
                                 std::size_t num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, truth);
  return cm;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  require(total > 0, ErrorClass::State, "pixel_accuracy: empty confusion matrix");
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) correct += cm.tp(c);
  return static_cast<double>(correct) / static_cast<double>(total);
}

double iou_class(const ConfusionMatrix& cm, std::size_t c) {
  require(c < cm.num_classes(), ErrorClass::Shape, "iou_class: class out of range");
  const std::uint64_t tp = cm.tp(c), fp = cm.fp(c), fn = cm.fn(c);
  const std::uint64_t uni = tp + fp + fn;
  if (uni == 0) return 1.0;  // class absent from both masks
  return static_cast<double>(tp) / static_cast<double>(uni);
}

double mean_iou(const ConfusionMatrix& cm) {
  require(cm.total() > 0, ErrorClass::State, "mean_iou: empty confusion matrix");
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    if (cm.tp(c) + cm.fp(c) + cm.fn(c) == 0) continue;  // absent from the evaluation
    sum += iou_class(cm, c);
    ++counted;
  }
  if (counted == 0) return 1.0;
  return sum / static_cast<double>(counted);
}

double slag_fraction(const SegMask& pred, const MonitorConfig& cfg) {
  require(pred.h == cfg.h && pred.w == cfg.w, ErrorClass::Shape,
          "slag_fraction: mask dimensions do not match monitor config");
  std::size_t n = 0;
  for (auto id : pred.ids)
    if (id == cfg.slag_class) ++n;
  return static_cast<double>(n) / static_cast<double>(pred.h * pred.w);
}

namespace {

double window_variance(const double* vals, std::size_t k) {
  double mean = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean += vals[i];
  mean /= static_cast<double>(k);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = vals[i] - mean;
    acc += d * d;
  }
  return acc / static_cast<double>(k);
}

}  // namespace

std::vector<double> running_variance(const std::vector<double>& series, std::size_t k) {
  require(k >= 2, ErrorClass::Config, "running_variance: window must be >= 2");
  if (series.size() < k) return {};
  std::vector<double> out;
  out.reserve(series.size() - k + 1);
  for (std::size_t t = k - 1; t < series.size(); ++t)
    out.push_back(window_variance(series.data() + t - k + 1, k));
  return out;
}

RunningVarianceMonitor::RunningVarianceMonitor(std::size_t k) : k_(k), window_(k) {
  require(k >= 2, ErrorClass::Config, "running variance window must be >= 2");
}

std::optional<double> RunningVarianceMonitor::push(double value) {
  window_[head_] = value;
  head_ = (head_ + 1) % k_;
  if (count_ < k_) ++count_;
  if (count_ < k_) return std::nullopt;
  return window_variance(window_.data(), k_);
}

std::pair<std::optional<double>, double> precision_recall(const std::vector<bool>& predicted,
                                                          const std::vector<bool>& truth) {
  require(predicted.size() == truth.size(), ErrorClass::Shape,
          "precision_recall: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++tp;
    else if (predicted[i] && !truth[i]) ++fp;
    else if (!predicted[i] && truth[i]) ++fn;
  }
  require(tp + fn > 0, ErrorClass::State, "precision_recall: no positives in truth");
  std::optional<double> precision;
  if (tp + fp > 0) precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return {precision, recall};
}

}  // namespace kseg
