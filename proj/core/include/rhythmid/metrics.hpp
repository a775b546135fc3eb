// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rhythmid {

/// Counts indexed by (true class, predicted class).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0);

  std::size_t classes() const { return classes_; }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const;
  std::uint64_t total() const;
  /// Number of samples whose true class is `c`.
  std::uint64_t support(std::size_t c) const;
  /// Elementwise sum; sizes must agree.
  void merge(const ConfusionMatrix& other);

  /// Rows are true classes, columns predictions.
  void write_csv(std::ostream& out) const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct BalancedAccuracy {
  double value = 0.0;
  std::size_t classes_scored = 0;
  /// Classes with no true samples, left out of the mean.
  std::size_t classes_excluded = 0;
};

/// Mean per-class recall over classes with at least one true sample.
/// Throws std::invalid_argument when no class has support.
BalancedAccuracy balanced_accuracy(const ConfusionMatrix& cm);

double accuracy(const ConfusionMatrix& cm);

double chance_level(std::size_t classes);
/// Fixed 4-decimal rendering, e.g. 0.0009 for 1166 classes.
std::string format_4dp(double value);

struct MetricsReport {
  double balanced_accuracy = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_recall;  ///< NaN for zero-support classes
  double chance_level = 0.0;
  std::size_t n_classes_scored = 0;
  std::size_t n_excluded_classes = 0;
  std::uint64_t n_samples = 0;

  /// {balanced_accuracy, accuracy, chance_level, n_classes_scored,
  ///  n_excluded_classes, n_samples}
  std::string to_json() const;
};

MetricsReport make_report(const ConfusionMatrix& cm);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const float> values);
std::size_t argmax(std::span<const double> values);

/// Trailing mean over `window` points; the first window-1 outputs average
/// the available prefix.
std::vector<double> moving_average(std::span<const double> series, std::size_t window = 10);

}  // namespace rhythmid
