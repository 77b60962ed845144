// SPDX-License-Identifier: Apache-2.0
#include "tlora/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tlora {

std::string_view to_string(TaskKind kind) noexcept {
  return kind == TaskKind::SynthCls ? "synth_cls" : "synth_lowrank";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "synth_cls") return TaskKind::SynthCls;
  if (s == "synth_lowrank") return TaskKind::SynthLowRank;
  throw std::invalid_argument("unknown task kind '" + std::string(s) + "'");
}

void TaskSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("task: input_dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("task: num_classes must be >= 2");
  if (train_size < 1 || val_size < 1) throw std::invalid_argument("task: splits must be nonempty");
  if (!(noise_level >= 0.0)) throw std::invalid_argument("task: noise_level must be >= 0");
  if (kind == TaskKind::SynthLowRank && (planted_rank < 1 || planted_rank > input_dim)) {
    throw std::invalid_argument("task: planted_rank must lie in [1, input_dim]");
  }
}

Dataset Dataset::subset(std::span<const std::int64_t> columns) const {
  Dataset out;
  out.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(columns.size()));
  out.labels.reserve(columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    out.inputs.col(static_cast<Eigen::Index>(j)) = inputs.col(columns[j]);
    out.labels.push_back(labels[static_cast<std::size_t>(columns[j])]);
  }
  return out;
}

ToyModel make_teacher(const TaskSpec& spec, const ToyModel& base) {
  spec.validate();
  if (spec.input_dim != base.input_dim() || spec.num_classes != base.num_classes()) {
    throw std::invalid_argument("task: input_dim/num_classes do not match the model");
  }
  SeededRng rng(derive_seed(spec.seed, "teacher"));
  if (spec.kind == TaskKind::SynthCls) {
    ToyModelSpec ts = base.spec();
    ts.seed = derive_seed(spec.seed, "teacher-network");
    ts.head_init = HeadInit::Lecun;
    return build_model(ts);
  }

  std::vector<LayerSlot> layers;
  const auto r = spec.planted_rank;
  for (const auto& slot : base.layers()) {
    const auto m = slot.base.m();
    const auto n = slot.base.n();
    const auto left = gaussian_matrix(m, r, 1.0, rng);
    const auto right = gaussian_matrix(r, n, 1.0 / double(n), rng);
    MatrixXd w = slot.base.weight() + (spec.planted_scale / std::sqrt(double(r))) * (left * right);
    layers.push_back({slot.name, FrozenLinear<double>(std::move(w)), {}});
  }
  MatrixXd head = gaussian_matrix(base.num_classes(), base.input_dim(),
                                  1.0 / double(base.input_dim()), rng);
  return ToyModel(base.spec(), std::move(layers), std::move(head),
                  VectorXd::Zero(base.num_classes()));
}

namespace {

std::vector<int> balanced_argmax(MatrixXd scores) {
  const auto k = scores.rows();
  const auto count = scores.cols();
  std::vector<int> labels(static_cast<std::size_t>(count));
  if (k == 2) {
    // Median split of the logit margin gives an exact 50/50 balance.
    std::vector<double> margin(static_cast<std::size_t>(count));
    for (Eigen::Index j = 0; j < count; ++j) margin[j] = scores(1, j) - scores(0, j);
    std::vector<std::int64_t> order(margin.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return margin[a] < margin[b]; });
    for (std::size_t i = 0; i < order.size(); ++i) {
      labels[static_cast<std::size_t>(order[i])] = i < order.size() / 2 ? 0 : 1;
    }
    return labels;
  }
  // Greedy capacity-limited assignment: (example, class) pairs are taken in
  // decreasing score order, each class accepting at most ceil(count / k).
  const auto capacity = (count + k - 1) / k;
  std::vector<std::int64_t> pairs(static_cast<std::size_t>(count * k));
  std::iota(pairs.begin(), pairs.end(), 0);
  auto score = [&](std::int64_t p) { return scores(p % k, p / k); };
  std::stable_sort(pairs.begin(), pairs.end(),
                   [&](auto a, auto b) { return score(a) > score(b); });
  std::vector<std::int64_t> filled(static_cast<std::size_t>(k), 0);
  std::vector<bool> assigned(static_cast<std::size_t>(count), false);
  for (auto p : pairs) {
    const auto c = p % k;
    const auto j = p / k;
    if (assigned[static_cast<std::size_t>(j)] || filled[static_cast<std::size_t>(c)] >= capacity) {
      continue;
    }
    assigned[static_cast<std::size_t>(j)] = true;
    ++filled[static_cast<std::size_t>(c)];
    labels[static_cast<std::size_t>(j)] = static_cast<int>(c);
  }
  return labels;
}

}  // namespace

TaskData make_task(const TaskSpec& spec, const ToyModel& base) {
  const ToyModel teacher = make_teacher(spec, base);
  SeededRng rng(derive_seed(spec.seed, "data"));
  const auto pool = spec.train_size + spec.val_size;

  Dataset all;
  all.inputs = gaussian_matrix(spec.input_dim, pool, 1.0, rng);
  MatrixXd scores = forward(teacher, all.inputs);
  if (spec.noise_level > 0.0) {
    scores += gaussian_matrix(scores.rows(), scores.cols(), spec.noise_level * spec.noise_level,
                              rng);
  }
  all.labels = balanced_argmax(std::move(scores));

  std::vector<std::int64_t> order(static_cast<std::size_t>(pool));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::int64_t>(order));

  TaskData out;
  out.train_index.assign(order.begin(), order.begin() + spec.train_size);
  out.val_index.assign(order.begin() + spec.train_size, order.end());
  out.train = all.subset(out.train_index);
  out.val = all.subset(out.val_index);
  return out;
}

}  // namespace tlora
