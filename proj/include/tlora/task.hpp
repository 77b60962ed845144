// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "tlora/model.hpp"

namespace tlora {

/// SynthCls: labels come from an independent random teacher network.
/// SynthLowRank: the teacher is the student's own frozen base with a planted
/// rank-`planted_rank` perturbation added to every linear layer.
enum class TaskKind { SynthCls, SynthLowRank };

std::string_view to_string(TaskKind kind) noexcept;
TaskKind parse_task_kind(std::string_view s);

struct TaskSpec {
  TaskKind kind = TaskKind::SynthLowRank;
  std::int64_t input_dim = 32;
  std::int64_t num_classes = 2;
  std::int64_t train_size = 4000;
  std::int64_t val_size = 500;
  /// Standard deviation of Gaussian noise added to teacher logits.
  double noise_level = 0.0;
  std::int64_t planted_rank = 4;
  /// Planted update norm relative to the base: entries of delta W x are
  /// O(planted_scale) for O(1) inputs.
  double planted_scale = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  MatrixXd inputs;  // input_dim x size, one example per column
  std::vector<int> labels;

  std::int64_t size() const noexcept { return static_cast<std::int64_t>(labels.size()); }
  Dataset subset(std::span<const std::int64_t> columns) const;
};

struct TaskData {
  Dataset train;
  Dataset val;
  /// Positions of each split's examples in the generated pool.
  std::vector<std::int64_t> train_index;
  std::vector<std::int64_t> val_index;
};

/// Builds the teacher network for `spec` (`base` is the student's frozen
/// backbone, used by SynthLowRank).
ToyModel make_teacher(const TaskSpec& spec, const ToyModel& base);

/// Samples inputs ~ N(0, I), labels them with the teacher under a per-class
/// quota (a median split of the margin for two classes), and splits the pool.
TaskData make_task(const TaskSpec& spec, const ToyModel& base);

}  // namespace tlora
