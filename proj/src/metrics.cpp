// SPDX-License-Identifier: Apache-2.0
#include "tlora/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tlora {

double mcc(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn) {
  if (tp < 0 || tn < 0 || fp < 0 || fn < 0) {
    throw std::invalid_argument("mcc: counts must be nonnegative");
  }
  if (tp + tn + fp + fn < 1) throw std::invalid_argument("mcc: empty confusion matrix");
  const double denom = static_cast<double>(tp + fp) * static_cast<double>(tp + fn) *
                       static_cast<double>(tn + fp) * static_cast<double>(tn + fn);
  if (denom == 0.0) return 0.0;
  const double num = static_cast<double>(tp) * static_cast<double>(tn) -
                     static_cast<double>(fp) * static_cast<double>(fn);
  return num / std::sqrt(denom);
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
  if (num_classes < 2) throw std::invalid_argument("confusion matrix needs >= 2 classes");
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_) {
    throw std::out_of_range("confusion matrix: class index out of range (" +
                            std::to_string(truth) + ", " + std::to_string(predicted) + ")");
  }
  ++counts_[static_cast<std::size_t>(truth * classes_ + predicted)];
  ++total_;
}

std::int64_t ConfusionMatrix::count(int truth, int predicted) const {
  return counts_.at(static_cast<std::size_t>(truth * classes_ + predicted));
}

double ConfusionMatrix::accuracy() const {
  if (total_ == 0) return 0.0;
  std::int64_t correct = 0;
  for (int k = 0; k < classes_; ++k) correct += count(k, k);
  return static_cast<double>(correct) / static_cast<double>(total_);
}

double ConfusionMatrix::mcc() const {
  if (total_ == 0) throw std::invalid_argument("mcc: empty confusion matrix");
  auto one_vs_rest = [&](int k) {
    std::int64_t tp = count(k, k);
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    for (int j = 0; j < classes_; ++j) {
      if (j == k) continue;
      fp += count(j, k);
      fn += count(k, j);
    }
    return tlora::mcc(tp, total_ - tp - fp - fn, fp, fn);
  };
  if (classes_ == 2) return one_vs_rest(1);
  double sum = 0.0;
  for (int k = 0; k < classes_; ++k) sum += one_vs_rest(k);
  return sum / static_cast<double>(classes_);
}

}  // namespace tlora
