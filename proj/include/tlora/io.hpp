// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlora/adapter.hpp"
#include "tlora/train.hpp"

namespace tlora {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kRunCsvHeader =
    "epoch,train_loss,train_acc,val_loss,val_acc,val_mcc,wall_seconds";

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

std::string records_to_csv(const std::vector<RunRecord>& records);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Adapter checkpoint:
///   {"format_version": 1, "layout": "row-major",
///    "spec": {"m", "n", "r1", "r2", "mode", "init", "seed", "scale"},
///    "A"|"B"|"C": {"rows", "cols", "data": [row-major values]}}
nlohmann::json adapter_to_json(const TriAdapter<double>& ad);
TriAdapter<double> adapter_from_json(const nlohmann::json& j);
void save_adapter(const std::filesystem::path& path, const TriAdapter<double>& ad);
TriAdapter<double> load_adapter(const std::filesystem::path& path);

nlohmann::json matrix_to_json(const MatrixXd& m);
MatrixXd matrix_from_json(const nlohmann::json& j, const char* name);

/// Drops CSV columns whose header contains "wall".
std::string strip_wall_columns(const std::string& csv);
/// Recursively drops object keys containing "wall".
nlohmann::json strip_wall_keys(nlohmann::json j);

}  // namespace tlora
