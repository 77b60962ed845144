// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace tlora {

/// Binary Matthews correlation coefficient. A zero factor in the
/// denominator yields 0.
double mcc(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn);

/// Counts indexed by (truth, prediction).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(int truth, int predicted);

  int num_classes() const noexcept { return classes_; }
  std::int64_t count(int truth, int predicted) const;
  std::int64_t total() const noexcept { return total_; }

  double accuracy() const;

  /// Binary MCC for two classes (class 1 positive); macro-averaged
  /// one-vs-rest MCC otherwise.
  double mcc() const;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

}  // namespace tlora
