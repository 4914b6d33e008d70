#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mit/tensor.hpp"

namespace mit {

/// C × C counts, rows = ground truth, columns = prediction. Pairs where
/// either side is negative (ignored) are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  void add(std::span<const int> pred, std::span<const int> gt);
  void merge(const ConfusionMatrix& other);
  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  std::uint64_t total() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct MiouReport {
  /// Empty for classes absent from both prediction and ground truth.
  std::vector<std::optional<double>> iou;
  double mean = 0.0;
};

MiouReport miou_from_confusion(const ConfusionMatrix& cm);
MiouReport compute_miou(std::span<const int> pred, std::span<const int> gt, std::size_t classes);

struct MapReport {
  /// Empty for classes without a positive example.
  std::vector<std::optional<double>> ap;
  double mean = 0.0;
};

/// Average precision of one ranking: mean over positives of the precision
/// among items scoring at least as high.
double average_precision(std::span<const double> scores, std::span<const int> positive);

/// scores and truth are n × C; truth entries are 0/1.
MapReport compute_map(const Tensor& scores, const Tensor& truth);

}  // namespace mit
