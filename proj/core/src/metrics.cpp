// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace rhythmid {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * classes, 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t count) {
  if (truth >= classes_ || predicted >= classes_) {
    throw std::out_of_range("confusion entry (" + std::to_string(truth) + ", " +
                            std::to_string(predicted) + ") outside " + std::to_string(classes_) +
                            " classes");
  }
  counts_[truth * classes_ + predicted] += count;
}

std::uint64_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  return counts_.at(truth * classes_ + predicted);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::support(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t p = 0; p < classes_; ++p) n += counts_[c * classes_ + p];
  return n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) {
    throw std::invalid_argument("cannot merge confusion matrices of " + std::to_string(classes_) +
                                " and " + std::to_string(other.classes_) + " classes");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

void ConfusionMatrix::write_csv(std::ostream& out) const {
  out << "true\\pred";
  for (std::size_t p = 0; p < classes_; ++p) out << ',' << p;
  out << '\n';
  for (std::size_t t = 0; t < classes_; ++t) {
    out << t;
    for (std::size_t p = 0; p < classes_; ++p) out << ',' << counts_[t * classes_ + p];
    out << '\n';
  }
}

BalancedAccuracy balanced_accuracy(const ConfusionMatrix& cm) {
  BalancedAccuracy result;
  double recall_sum = 0.0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto n = cm.support(c);
    if (n == 0) {
      ++result.classes_excluded;
      continue;
    }
    recall_sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
    ++result.classes_scored;
  }
  if (result.classes_scored == 0) {
    throw std::invalid_argument("balanced accuracy of an empty confusion matrix");
  }
  result.value = recall_sum / static_cast<double>(result.classes_scored);
  return result;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw std::invalid_argument("accuracy of an empty confusion matrix");
  std::uint64_t correct = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) correct += cm.at(c, c);
  return static_cast<double>(correct) / static_cast<double>(n);
}

double chance_level(std::size_t classes) {
  if (classes == 0) throw std::invalid_argument("chance level needs at least one class");
  return 1.0 / static_cast<double>(classes);
}

std::string format_4dp(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", value);
  return buf;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j = {{"balanced_accuracy", balanced_accuracy},
                              {"accuracy", accuracy},
                              {"chance_level", chance_level},
                              {"n_classes_scored", n_classes_scored},
                              {"n_excluded_classes", n_excluded_classes},
                              {"n_samples", n_samples}};
  return j.dump();
}

MetricsReport make_report(const ConfusionMatrix& cm) {
  MetricsReport r;
  const auto ba = rhythmid::balanced_accuracy(cm);
  r.balanced_accuracy = ba.value;
  r.n_classes_scored = ba.classes_scored;
  r.n_excluded_classes = ba.classes_excluded;
  r.accuracy = rhythmid::accuracy(cm);
  r.chance_level = rhythmid::chance_level(cm.classes());
  r.n_samples = cm.total();
  r.per_class_recall.resize(cm.classes());
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto n = cm.support(c);
    r.per_class_recall[c] = n == 0 ? std::numeric_limits<double>::quiet_NaN()
                                   : static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
  }
  return r;
}

namespace {
template <typename T>
std::size_t argmax_impl(std::span<const T> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}
}  // namespace

std::size_t argmax(std::span<const float> values) { return argmax_impl(values); }
std::size_t argmax(std::span<const double> values) { return argmax_impl(values); }

std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  if (window == 0) throw std::invalid_argument("moving_average window must be at least 1");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t first = i + 1 >= window ? i + 1 - window : 0;
    double total = 0.0;
    for (std::size_t j = first; j <= i; ++j) total += series[j];
    out[i] = total / static_cast<double>(i + 1 - first);
  }
  return out;
}

}  // namespace rhythmid
