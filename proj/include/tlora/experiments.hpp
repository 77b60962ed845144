// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tlora/config.hpp"
#include "tlora/train.hpp"

namespace tlora {

/// Calls fn(i) for i in [0, count) on up to `workers` threads. Results come
/// back in index order. fn must not share mutable state across indices.
template <typename Result, typename Fn>
std::vector<Result> parallel_map(std::size_t count, std::int64_t workers, Fn&& fn) {
  std::vector<Result> results(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        results[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max<std::int64_t>(1, workers));
  if (threads == 1 || count <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, count); ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

// ---------------------------------------------------------------- gradcheck

using GradFn = std::function<GradTriple<double>(const TriAdapter<double>&, const MatrixXd& x,
                                                const MatrixXd& upstream)>;

/// The analytic gradients under test (adapter_grads by default).
GradTriple<double> analytic_grads(const TriAdapter<double>& ad, const MatrixXd& x,
                                  const MatrixXd& upstream);

struct GradCheckCase {
  TrainMode mode = TrainMode::ABC;
  std::int64_t index = 0;
  std::int64_t m = 0, n = 0, r1 = 0, r2 = 0, batch = 0;
  double error_a = 0.0, error_b = 0.0, error_c = 0.0;

  double worst() const noexcept { return std::max({error_a, error_b, error_c}); }
  /// Names of the factors whose error exceeds `tol`, e.g. "G_B".
  std::vector<std::string> failing(double tol) const;
  std::string describe() const;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double tolerance = 0.0;
  double worst_error = 0.0;
  std::size_t worst_index = 0;

  bool passed() const noexcept { return worst_error <= tolerance; }
  std::vector<const GradCheckCase*> failures() const;
  std::string summary() const;
};

/// Random cases for every TrainMode with L = <U, C B A X>. Case 0 of each
/// mode is the smallest shape (b = 1, r1 = r2 = 1). All three factors are
/// probed in every mode.
GradCheckReport run_gradcheck(const GradCheckSettings& settings, const GradFn& grads = analytic_grads);

struct ModelGradCheck {
  std::int64_t entries = 0;
  double worst_error = 0.0;
  std::string worst_name;
};

/// Compares backward() with central differences of the cross-entropy on
/// `entries` trainable entries sampled without replacement.
ModelGradCheck check_model_grads(ToyModel model, const MatrixXd& x, std::span<const int> labels,
                                 std::int64_t entries, double step, double floor,
                                 std::uint64_t seed);

// ------------------------------------------------------------------ params

struct ParamsRow {
  std::int64_t width = 0;
  std::int64_t depth = 0;
  std::int64_t rank = 0;
  std::string method;
  std::int64_t trainable = 0;
  std::int64_t base = 0;
  double percent = 0.0;
};

/// Trainable counts taken from injected adapters, for lora, tri_b_only and
/// tri_abc at r1 = r2 = rank.
std::vector<ParamsRow> params_table(const ToyModelSpec& model, std::span<const std::int64_t> widths,
                                    std::span<const std::int64_t> ranks);
std::string params_csv(const std::vector<ParamsRow>& rows);

// ----------------------------------------------------------------- scaling

struct ScalingRow {
  std::int64_t width = 0;
  std::int64_t seed = 0;
  double norm_a = 0.0, norm_b = 0.0, norm_c = 0.0;
  double spread_uniform = 0.0, spread_eq8 = 0.0, spread_eq7 = 0.0;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  /// Least-squares slope of the seed-averaged log norm against log width.
  double slope_a = 0.0, slope_b = 0.0, slope_c = 0.0;
  double intercept_a = 0.0, intercept_b = 0.0, intercept_c = 0.0;

  /// Median spread over seeds at one width.
  double median_spread(std::int64_t width, RatioMode mode) const;
};

/// max |dL_X| / min |dL_X| over the three sign-update components.
double component_spread(const GradTriple<double>& grads, const LrTriple& lrs);

ScalingResult run_scaling(const ScalingSettings& settings, std::uint64_t seed);

/// Slope and intercept of the least-squares line through (x, y).
std::pair<double, double> fit_line(std::span<const double> x, std::span<const double> y);

// ------------------------------------------------------------ training runs

struct RunSpec {
  Method method;
  std::int64_t r1 = 8;
  std::int64_t r2 = 8;
  double ratio_base = 1.0;
  std::uint64_t seed = 0;
};

struct RunOutcome {
  RunSpec spec;
  bool completed = false;
  bool diverged = false;
  std::string error;
  std::vector<RunRecord> records;
  std::int64_t trainable_params = 0;
  std::optional<std::int64_t> epochs_to_threshold;

  double final_val_acc() const;
  double best_val_acc() const;
  std::int64_t best_epoch() const;
  /// Median over epochs of the per-epoch wall time.
  double median_epoch_wall_seconds() const;
};

/// Builds base model, task and adapters from seeds derived from spec.seed,
/// then trains. Divergence and other run errors are recorded rather than
/// thrown. The per-epoch CSV goes to `csv_path` when set; `on_trained` sees
/// the final model of a completed run.
RunOutcome execute_run(const RunConfig& cfg, const RunSpec& spec,
                       const std::optional<std::filesystem::path>& csv_path,
                       const std::function<void(const ToyModel&)>& on_trained = {});

/// Non-converged runs count as epochs + 1.
double censored_epochs(const RunOutcome& run, std::int64_t epochs);

double median(std::vector<double> v);
/// Q3 - Q1 with linear interpolation between order statistics.
double iqr(std::vector<double> v);

// ---------------------------------------------------------------- commands

struct CommandResult {
  int exit_code = 0;
  std::string message;
};

CommandResult cmd_train(const RunConfig& cfg, bool dry_run);
CommandResult cmd_gradcheck(const RunConfig& cfg);
CommandResult cmd_params(const RunConfig& cfg);
CommandResult cmd_scaling(const RunConfig& cfg);
CommandResult cmd_ratio_sweep(const RunConfig& cfg);
CommandResult cmd_compare(const RunConfig& cfg);

}  // namespace tlora
