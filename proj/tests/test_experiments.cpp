// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "tlora/experiments.hpp"
#include "tlora/io.hpp"

using namespace tlora;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tlora_experiment_tests" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

RunConfig tiny_config(const std::string& out) {
  RunConfig cfg;
  cfg.model.width = 8;
  cfg.task.input_dim = 8;
  cfg.task.train_size = 64;
  cfg.task.val_size = 32;
  cfg.adapter.r1 = cfg.adapter.r2 = 2;
  cfg.optimizer.base_lr = 1e-3;
  cfg.optimizer.ratio_mode = RatioMode::RatioBase;
  cfg.epochs = 2;
  cfg.output_path = scratch(out).string();
  return cfg;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::size_t count_prefix(const std::vector<std::string>& rows, const std::string& prefix) {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const std::string& r) {
    return r.rfind(prefix, 0) == 0;
  }));
}

}  // namespace

TEST_CASE("parallel_map keeps index order") {
  for (std::int64_t workers : {1, 3, 8}) {
    const auto out = parallel_map<int>(50, workers, [](std::size_t i) { return static_cast<int>(i * i); });
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i * i));
  }
  CHECK_THROWS_AS(parallel_map<int>(5, 2, [](std::size_t i) -> int {
                    if (i == 3) throw std::runtime_error("boom");
                    return 0;
                  }),
                  std::runtime_error);
}

TEST_CASE("statistics helpers") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(std::isnan(median({})));
  CHECK(iqr({1.0, 2.0, 3.0, 4.0, 5.0}) == 2.0);
  CHECK(iqr({7.0}) == 0.0);
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> y{3.0, 5.0, 7.0, 9.0};
  const auto [slope, intercept] = fit_line(x, y);
  CHECK(slope == doctest::Approx(2.0));
  CHECK(intercept == doctest::Approx(1.0));
  CHECK_THROWS(fit_line(std::vector<double>{1.0}, std::vector<double>{1.0}));
}

TEST_CASE("params table") {
  ToyModelSpec spec;
  const std::vector<std::int64_t> widths{32, 64};
  const std::vector<std::int64_t> ranks{8, 16, 32};
  const auto rows = params_table(spec, widths, ranks);
  CHECK(rows.size() == 2 * 3 * 3);
  auto find = [&](std::int64_t w, std::int64_t r, const std::string& m) {
    for (const auto& row : rows) {
      if (row.width == w && row.rank == r && row.method == m) return row;
    }
    FAIL("missing row");
    return ParamsRow{};
  };
  for (auto w : widths) {
    double prev[3] = {0, 0, 0};
    for (auto r : ranks) {
      const auto lora = find(w, r, "lora");
      const auto b_only = find(w, r, "tri_b_only");
      const auto abc = find(w, r, "tri_abc");
      CHECK(abc.trainable - lora.trainable == 3 * r * r);
      CHECK(b_only.trainable == 3 * r * r);
      CHECK(lora.percent > prev[0]);
      CHECK(b_only.percent > prev[1]);
      CHECK(abc.percent > prev[2]);
      prev[0] = lora.percent;
      prev[1] = b_only.percent;
      prev[2] = abc.percent;
    }
  }
  CHECK(find(32, 8, "tri_b_only").trainable == find(64, 8, "tri_b_only").trainable);
  const auto csv = params_csv(rows);
  CHECK(csv.rfind("width,depth,rank,method,trainable_params,base_params,percent\n", 0) == 0);
}

TEST_CASE("scaling study") {
  ScalingSettings s;
  s.widths = {16, 32, 64};
  s.num_seeds = 3;
  const auto result = run_scaling(s, 0);
  CHECK(result.rows.size() == 9);
  for (const auto& row : result.rows) {
    CHECK(row.norm_a > 0.0);
    CHECK(row.norm_b > 0.0);
    CHECK(row.norm_c > 0.0);
    CHECK(row.spread_uniform >= 1.0);
  }
  CHECK(result.slope_a > result.slope_c);
  CHECK(result.slope_c > result.slope_b);
  s.widths = {16, 32};
  CHECK_THROWS_AS(run_scaling(s, 0), std::invalid_argument);
}

TEST_CASE("ratio sweep bookkeeping") {
  RunConfig cfg = tiny_config("sweep");
  cfg.sweep.ratio_bases = {1.0, 2.0, 4.0, 8.0};
  cfg.seeds = {0, 1, 2, 3, 4};
  cfg.workers = 2;
  const auto res = cmd_ratio_sweep(cfg);
  CHECK(res.exit_code == 0);
  const auto rows = lines(read_text(std::filesystem::path(cfg.output_path) / "ratio_sweep.csv"));
  CHECK(rows.size() == 1 + 20 + 4);
  CHECK(count_prefix(rows, "run,") == 20);
  CHECK(count_prefix(rows, "aggregate,") == 4);
  CHECK(std::filesystem::exists(std::filesystem::path(cfg.output_path) / "runs" / "ratio4_seed3.csv"));
  const auto summary = nlohmann::json::parse(read_text(std::filesystem::path(cfg.output_path) / "summary.json"));
  CHECK(summary.at("runs").size() == 20);
  CHECK(summary.at("config").at("optimizer").at("ratio_mode") == "eq8");
}

TEST_CASE("compare bookkeeping") {
  RunConfig cfg = tiny_config("compare");
  cfg.model.width = 64;
  cfg.task.input_dim = 64;
  cfg.task.train_size = 16;
  cfg.task.val_size = 16;
  cfg.epochs = 1;
  cfg.sweep.ranks = {8, 16, 32, 64};
  cfg.seeds = {0, 1, 2};
  const auto res = cmd_compare(cfg);
  CHECK(res.exit_code == 0);
  const auto rows = lines(read_text(std::filesystem::path(cfg.output_path) / "compare.csv"));
  CHECK(count_prefix(rows, "run,") == 36);
  CHECK(count_prefix(rows, "aggregate,") == 12);
}

TEST_CASE("a failed run does not disturb its siblings") {
  RunConfig cfg = tiny_config("failing");
  cfg.sweep.ranks = {2, 100};
  cfg.sweep.methods = {Method{AdapterKind::Tri, TrainMode::ABC}};
  const auto res = cmd_compare(cfg);
  CHECK(res.exit_code == 1);
  CHECK(res.message.find("tri_abc_r100_seed0") != std::string::npos);
  const auto dir = std::filesystem::path(cfg.output_path);
  CHECK(std::filesystem::exists(dir / "runs" / "tri_abc_r2_seed0.csv"));
  CHECK_FALSE(std::filesystem::exists(dir / "runs" / "tri_abc_r100_seed0.csv"));
  const auto rows = lines(read_text(dir / "compare.csv"));
  CHECK(count_prefix(rows, "run,tri_abc,100,1,0,failed") == 1);
}

TEST_CASE("commands are deterministic apart from wall time") {
  RunConfig cfg = tiny_config("determinism");
  cfg.seeds = {3};
  const auto dir = std::filesystem::path(cfg.output_path);
  REQUIRE(cmd_train(cfg, false).exit_code == 0);
  const auto csv1 = read_text(dir / "run_seed3.csv");
  const auto json1 = nlohmann::json::parse(read_text(dir / "summary.json"));
  const auto ckpt1 = read_text(dir / "adapters" / "seed3" / "block0.up.json");
  REQUIRE(cmd_train(cfg, false).exit_code == 0);
  CHECK(strip_wall_columns(read_text(dir / "run_seed3.csv")) == strip_wall_columns(csv1));
  CHECK(strip_wall_keys(nlohmann::json::parse(read_text(dir / "summary.json"))) == strip_wall_keys(json1));
  CHECK(read_text(dir / "adapters" / "seed3" / "block0.up.json") == ckpt1);
}

TEST_CASE("dry run trains nothing") {
  RunConfig cfg = tiny_config("dry");
  const auto res = cmd_train(cfg, true);
  CHECK(res.exit_code == 0);
  CHECK(res.message.find("0 epochs") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(std::filesystem::path(cfg.output_path) / "summary.json"));
}
