// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlora/model.hpp"
#include "tlora/optimizer.hpp"
#include "tlora/task.hpp"

namespace tlora {

/// Configuration problems: malformed JSON, unknown or missing keys, bad
/// values. The CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command { Train, GradCheck, Params, Scaling, RatioSweep, Compare };

std::string_view to_string(Command cmd) noexcept;

/// One method in a comparison: "lora", "tri_b_only", "tri_ab", "tri_cb" or
/// "tri_abc". Tri-matrix methods use the configured optimizer ratio mode;
/// LoRA uses a single rate.
struct Method {
  AdapterKind kind = AdapterKind::Tri;
  TrainMode mode = TrainMode::ABC;

  std::string name() const;
  static Method parse(std::string_view s);
};

struct GradCheckSettings {
  std::int64_t cases_per_mode = 100;
  std::int64_t max_dim = 32;
  std::int64_t max_rank = 8;
  std::int64_t max_batch = 8;
  double step = 1e-3;
  double tolerance = 1e-6;
  /// Denominator floor of the relative error.
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

struct ScalingSettings {
  std::vector<std::int64_t> widths{64, 128, 256, 512};
  std::int64_t rank = 8;
  std::int64_t batch = 16;
  std::int64_t num_seeds = 5;
};

struct ParamsSettings {
  std::vector<std::int64_t> widths{768};
  std::vector<std::int64_t> ranks{8, 16, 32, 64};
};

struct SweepSettings {
  std::vector<double> ratio_bases{1.0, 2.0, 4.0, 5.0, 8.0, 10.0};
  std::vector<std::int64_t> ranks{8, 16, 32, 64};
  std::vector<Method> methods{Method{AdapterKind::Lora, TrainMode::ABC},
                              Method{AdapterKind::Tri, TrainMode::BOnly},
                              Method{AdapterKind::Tri, TrainMode::ABC}};
};

/// Fully resolved run configuration. Per-run seeds feed derive_seed() with
/// the tags "model", "task", "adapter" and "shuffle".
struct RunConfig {
  TaskSpec task;
  ToyModelSpec model;
  AdapterTemplate adapter;
  OptimizerConfig optimizer;
  std::optional<double> head_lr;
  std::int64_t epochs = 30;
  std::int64_t batch_size = 16;
  std::vector<std::uint64_t> seeds{0};
  std::string output_path = "out";
  /// Validation accuracy that counts as converged.
  double threshold = 0.9;
  std::int64_t workers = 1;
  SweepSettings sweep;
  GradCheckSettings gradcheck;
  ScalingSettings scaling;
  ParamsSettings params;
};

/// Parses and validates a config document. Unknown keys anywhere are errors;
/// optimizer.base_lr is required for commands that train.
RunConfig parse_config(const nlohmann::json& doc, Command cmd);
/// Reads a JSON file; syntax errors report line and column.
RunConfig load_config(const std::filesystem::path& path, Command cmd);
nlohmann::json config_to_json(const RunConfig& cfg);

}  // namespace tlora
