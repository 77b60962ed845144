// SPDX-License-Identifier: Apache-2.0
#include "tlora/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace tlora {

TrainingDiverged::TrainingDiverged(std::int64_t epoch, std::int64_t step, const std::string& what)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step) + ": " + what),
      epoch_(epoch),
      step_(step) {}

std::vector<int> predict(const MatrixXd& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    Eigen::Index best = 0;
    logits.col(j).maxCoeff(&best);
    out[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return out;
}

EvalResult evaluate(const ToyModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  constexpr Eigen::Index kChunk = 512;
  ConfusionMatrix confusion(static_cast<int>(model.num_classes()));
  double loss_sum = 0.0;
  for (Eigen::Index start = 0; start < data.inputs.cols(); start += kChunk) {
    const auto len = std::min(kChunk, data.inputs.cols() - start);
    const MatrixXd logits = forward(model, data.inputs.middleCols(start, len));
    std::span<const int> labels(data.labels.data() + start, static_cast<std::size_t>(len));
    loss_sum += cross_entropy(logits, labels) * static_cast<double>(len);
    const auto pred = predict(logits);
    for (std::size_t j = 0; j < pred.size(); ++j) confusion.add(labels[j], pred[j]);
  }
  return {loss_sum / static_cast<double>(data.size()), confusion.accuracy(), confusion.mcc()};
}

ModelOptimizer::ModelOptimizer(const ToyModel& model, OptimizerConfig cfg, double head_lr)
    : cfg_(cfg), head_cfg_(cfg), head_lr_(head_lr) {
  cfg_.validate();
  head_cfg_.weight_decay = 0.0;
  for (const auto& slot : model.layers()) {
    LayerState st;
    if (const auto* tri = std::get_if<TriAdapter<double>>(&slot.adapter)) {
      st.tri = AdamState<double>::for_adapter(*tri);
      st.lrs = lr_ratios(cfg_, slot.base.m(), slot.base.n());
    } else if (const auto* lora = std::get_if<LoraAdapter<double>>(&slot.adapter)) {
      st.lora_a = Moments<double>::zeros_like(lora->a);
      st.lora_b = Moments<double>::zeros_like(lora->b);
      st.lrs = {cfg_.base_lr, cfg_.base_lr, cfg_.base_lr};
    }
    layers_.push_back(std::move(st));
  }
  head_w_ = Moments<double>::zeros_like(model.head_weight());
  head_b_ = Moments<double>::zeros_like(MatrixXd(model.head_bias()));
}

void ModelOptimizer::step(ToyModel& model, const ModelGrads& grads, double multiplier) {
  ++step_;
  auto& layers = model.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    auto& st = layers_[k];
    const LrTriple lrs = st.lrs.scaled(multiplier);
    if (auto* tri = std::get_if<TriAdapter<double>>(&layers[k].adapter)) {
      adamw_step(*tri, std::get<GradTriple<double>>(grads.layers[k]), st.tri, cfg_, lrs);
    } else if (auto* lora = std::get_if<LoraAdapter<double>>(&layers[k].adapter)) {
      const auto& g = std::get<LoraGrads<double>>(grads.layers[k]);
      adamw_update(lora->a, g.a, *st.lora_a, cfg_, lrs.a, step_, layers[k].name + ".A");
      adamw_update(lora->b, g.b, *st.lora_b, cfg_, lrs.b, step_, layers[k].name + ".B");
    }
  }
  const double head_lr = head_lr_ * multiplier;
  adamw_update(model.head_weight(), grads.head_weight, head_w_, head_cfg_, head_lr, step_,
               "head.weight");
  MatrixXd bias = model.head_bias();
  adamw_update(bias, MatrixXd(grads.head_bias), head_b_, head_cfg_, head_lr, step_, "head.bias");
  model.head_bias() = bias;
}

std::vector<RunRecord> train(ToyModel& model, const TaskData& data, OptimizerConfig opt,
                             const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  const auto n_train = data.train.size();
  if (n_train == 0) throw std::invalid_argument("train: empty training split");
  const std::int64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  opt.total_steps = std::max<std::int64_t>(1, cfg.epochs * steps_per_epoch);
  ModelOptimizer optimizer(model, opt, cfg.head_lr.value_or(opt.base_lr));

  SeededRng shuffler(cfg.shuffle_seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
  std::vector<RunRecord> records;
  std::int64_t global_step = 0;
  MatrixXd batch_x;
  std::vector<int> batch_y;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    shuffler.shuffle(std::span<std::int64_t>(order));
    const auto t0 = std::chrono::steady_clock::now();
    for (std::int64_t start = 0; start < n_train; start += cfg.batch_size) {
      const auto len = std::min(cfg.batch_size, n_train - start);
      batch_x.resize(data.train.inputs.rows(), len);
      batch_y.resize(static_cast<std::size_t>(len));
      for (std::int64_t j = 0; j < len; ++j) {
        const auto idx = order[static_cast<std::size_t>(start + j)];
        batch_x.col(j) = data.train.inputs.col(idx);
        batch_y[static_cast<std::size_t>(j)] = data.train.labels[static_cast<std::size_t>(idx)];
      }
      ModelGrads grads;
      try {
        grads = backward(model, batch_x, batch_y);
        optimizer.step(model, grads, lr_schedule(optimizer.config(), global_step));
      } catch (const NonFiniteLoss& e) {
        throw TrainingDiverged(epoch, global_step, e.what());
      } catch (const NonFiniteGradient& e) {
        throw TrainingDiverged(epoch, global_step, e.what());
      }
      ++global_step;
    }
    const auto t1 = std::chrono::steady_clock::now();

    const EvalResult tr = evaluate(model, data.train);
    const EvalResult va = evaluate(model, data.val);
    if (!std::isfinite(tr.loss) || !std::isfinite(va.loss)) {
      throw TrainingDiverged(epoch, global_step, "non-finite evaluation loss");
    }
    RunRecord rec;
    rec.epoch = epoch;
    rec.train_loss = tr.loss;
    rec.train_acc = tr.acc;
    rec.val_loss = va.loss;
    rec.val_acc = va.acc;
    rec.val_mcc = va.mcc;
    rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    records.push_back(rec);
  }
  return records;
}

std::optional<std::int64_t> epochs_to_threshold(const std::vector<RunRecord>& records,
                                                double threshold) {
  for (const auto& r : records) {
    if (r.val_acc >= threshold) return r.epoch;
  }
  return std::nullopt;
}

}  // namespace tlora
