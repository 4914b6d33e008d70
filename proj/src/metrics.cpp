#include "mit/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "mit/errors.hpp"

namespace mit {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("confusion: " + std::to_string(pred.size()) + " predictions for " + std::to_string(gt.size()) +
                     " labels");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || gt[i] < 0) continue;
    const auto p = static_cast<std::size_t>(pred[i]), g = static_cast<std::size_t>(gt[i]);
    if (p >= classes_ || g >= classes_) throw InputError("confusion: label out of range");
    ++counts_[g * classes_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

MiouReport miou_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t c = cm.classes();
  MiouReport r;
  r.iou.resize(c);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t tp = cm.at(k, k), fn = 0, fp = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      fn += cm.at(k, j);
      fp += cm.at(j, k);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.iou[k] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += *r.iou[k];
    ++used;
  }
  r.mean = used ? sum / static_cast<double>(used) : 0.0;
  return r;
}

MiouReport compute_miou(std::span<const int> pred, std::span<const int> gt, std::size_t classes) {
  ConfusionMatrix cm(classes);
  cm.add(pred, gt);
  return miou_from_confusion(cm);
}

double average_precision(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw ShapeError("average_precision: score and label counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t positives = 0, seen = 0, seen_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    // items tied on score enter the ranking together
    std::size_t j = i, tied_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (positive[order[j]]) ++tied_pos;
      ++j;
    }
    seen += j - i;
    seen_pos += tied_pos;
    sum += static_cast<double>(tied_pos) * static_cast<double>(seen_pos) / static_cast<double>(seen);
    positives += tied_pos;
    i = j;
  }
  if (positives == 0) throw EvaluationError("average_precision: no positive example");
  return sum / static_cast<double>(positives);
}

MapReport compute_map(const Tensor& scores, const Tensor& truth) {
  if (scores.shape() != truth.shape()) {
    throw ShapeError("compute_map: scores " + shape_string(scores.shape()) + " vs truth " + shape_string(truth.shape()));
  }
  const std::size_t n = scores.rows(), c = scores.cols();
  MapReport r;
  r.ap.resize(c);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> s(n);
    std::vector<int> p(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores.at(i, k);
      p[i] = truth.at(i, k) > 0.5 ? 1 : 0;
      any = any || p[i];
    }
    if (!any) continue;
    r.ap[k] = average_precision(s, p);
    sum += *r.ap[k];
    ++used;
  }
  r.mean = used ? sum / static_cast<double>(used) : 0.0;
  return r;
}

}  // namespace mit
