// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tlora/metrics.hpp"
#include "tlora/model.hpp"
#include "tlora/optimizer.hpp"
#include "tlora/task.hpp"

namespace tlora {

struct TrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 16;
  std::uint64_t shuffle_seed = 0;
  /// Head learning rate; the optimizer's base_lr when unset.
  std::optional<double> head_lr;
};

/// Metrics after one epoch. Accuracy and MCC are full-split evaluations at
/// the end of the epoch; wall_seconds covers the epoch's update pass only.
struct RunRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double val_mcc = 0.0;
  double wall_seconds = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double acc = 0.0;
  double mcc = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t epoch, std::int64_t step, const std::string& what);
  std::int64_t epoch() const noexcept { return epoch_; }
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t epoch_;
  std::int64_t step_;
};

/// Predicted class per column (first maximum on ties).
std::vector<int> predict(const MatrixXd& logits);

EvalResult evaluate(const ToyModel& model, const Dataset& data);

/// AdamW over every adapter factor and the head. Each tri-matrix layer uses
/// lr_ratios() of its own shape; LoRA factors and the head use a single
/// rate. Weight decay touches adapter factors only.
class ModelOptimizer {
 public:
  ModelOptimizer(const ToyModel& model, OptimizerConfig cfg, double head_lr);

  /// Applies one update scaled by `multiplier` (the schedule value).
  void step(ToyModel& model, const ModelGrads& grads, double multiplier);

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::int64_t steps_taken() const noexcept { return step_; }

 private:
  struct LayerState {
    AdamState<double> tri;
    std::optional<Moments<double>> lora_a;
    std::optional<Moments<double>> lora_b;
    LrTriple lrs;
  };

  OptimizerConfig cfg_;
  OptimizerConfig head_cfg_;
  double head_lr_;
  std::vector<LayerState> layers_;
  Moments<double> head_w_;
  Moments<double> head_b_;
  std::int64_t step_ = 0;
};

/// Trains adapters and head in place. opt.total_steps is overwritten with
/// epochs * ceil(train_size / batch_size). Returns one record per epoch.
std::vector<RunRecord> train(ToyModel& model, const TaskData& data, OptimizerConfig opt,
                             const TrainConfig& cfg);

/// First epoch whose val_acc reaches `threshold`, or nullopt.
std::optional<std::int64_t> epochs_to_threshold(const std::vector<RunRecord>& records,
                                                double threshold);

}  // namespace tlora
