// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "tlora/config.hpp"
#include "tlora/io.hpp"

using namespace tlora;
using nlohmann::json;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tlora_io_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

json minimal_train() { return json{{"optimizer", {{"base_lr", 1e-3}}}}; }

std::string config_error(const json& doc, Command cmd) {
  try {
    (void)parse_config(doc, cmd);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5, 12345678.9}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("run CSV has the fixed header") {
  std::vector<RunRecord> recs{{1, 0.5, 0.75, 0.6, 0.7, 0.4, 0.01}, {2, 0.4, 0.8, 0.5, 0.8, 0.6, 0.02}};
  const auto csv = records_to_csv(recs);
  CHECK(csv.rfind(std::string(kRunCsvHeader) + "\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const auto stripped = strip_wall_columns(csv);
  CHECK(stripped.find("wall") == std::string::npos);
  CHECK(stripped.rfind("epoch,train_loss,train_acc,val_loss,val_acc,val_mcc\n", 0) == 0);
  CHECK(stripped.find("0.01") == std::string::npos);
}

TEST_CASE("strip_wall_keys is recursive") {
  json j = {{"a", 1}, {"wall_seconds", 2}, {"runs", {{{"median_epoch_wall_seconds", 3}, {"b", 4}}}}};
  const auto s = strip_wall_keys(j);
  CHECK(s.dump() == R"({"a":1,"runs":[{"b":4}]})");
}

TEST_CASE("adapter checkpoint round-trip") {
  auto ad = init_adapter(AdapterSpec{5, 4, 2, 3, TrainMode::CB, InitScheme::LecunAll, 8, 0.5});
  const auto j = adapter_to_json(ad);
  CHECK(j.at("format_version") == kCheckpointVersion);
  CHECK(j.at("layout") == "row-major");
  const auto back = adapter_from_json(j);
  CHECK(back.a() == ad.a());
  CHECK(back.b() == ad.b());
  CHECK(back.c() == ad.c());
  CHECK(back.spec().mode == TrainMode::CB);
  CHECK(back.spec().scale == 0.5);

  const auto path = scratch("sub/adapter.json");
  save_adapter(path, ad);
  CHECK(load_adapter(path).c() == ad.c());

  json bad = j;
  bad["format_version"] = 99;
  CHECK_THROWS_AS(adapter_from_json(bad), std::invalid_argument);
  bad = j;
  bad["A"]["rows"] = 7;
  CHECK_THROWS_AS(adapter_from_json(bad), std::invalid_argument);
  bad = j;
  bad.erase("B");
  CHECK_THROWS_AS(adapter_from_json(bad), std::invalid_argument);
}

TEST_CASE("config defaults and overrides") {
  const auto cfg = parse_config(minimal_train(), Command::Train);
  CHECK(cfg.optimizer.base_lr == 1e-3);
  CHECK(cfg.epochs == 30);
  CHECK(cfg.batch_size == 16);
  CHECK(cfg.task.input_dim == cfg.model.width);

  json doc = minimal_train();
  doc["model"] = {{"width", 16}, {"activation", "identity"}};
  doc["task"] = {{"num_classes", 3}};
  doc["adapter"] = {{"rank", 4}, {"mode", "b_only"}, {"kind", "lora"}};
  doc["optimizer"]["betas"] = {0.8, 0.9};
  doc["optimizer"]["ratio_mode"] = "eq7";
  doc["optimizer"]["head_lr"] = 0.01;
  doc["sweep"] = {{"methods", {"lora", "tri_ab"}}};
  const auto c = parse_config(doc, Command::Train);
  CHECK(c.model.width == 16);
  CHECK(c.task.input_dim == 16);
  CHECK(c.model.num_classes == 3);
  CHECK(c.model.activation == Activation::Identity);
  CHECK(c.adapter.r1 == 4);
  CHECK(c.adapter.r2 == 4);
  CHECK(c.adapter.kind == AdapterKind::Lora);
  CHECK(c.optimizer.beta1 == 0.8);
  CHECK(c.optimizer.ratio_mode == RatioMode::PerLayer);
  CHECK(c.head_lr == 0.01);
  REQUIRE(c.sweep.methods.size() == 2);
  CHECK(c.sweep.methods[1].name() == "tri_ab");

  const auto round = parse_config(json::parse(R"({"optimizer": {"base_lr": 0.5}})"), Command::Train);
  CHECK(config_to_json(round).at("optimizer").at("base_lr") == 0.5);
}

TEST_CASE("config errors name the key") {
  CHECK(config_error(json::object(), Command::Train).find("optimizer.base_lr") != std::string::npos);
  CHECK(config_error(json{{"optimizer", {{"ratio_mode", "eq8"}}}}, Command::Train).find("missing required key 'optimizer.base_lr'") !=
        std::string::npos);
  CHECK(config_error(json::object(), Command::GradCheck).empty());

  json doc = minimal_train();
  doc["model"] = {{"widht", 8}};
  CHECK(config_error(doc, Command::Train).find("unknown key 'model.widht'") != std::string::npos);

  doc = minimal_train();
  doc["extra"] = 1;
  CHECK(config_error(doc, Command::Train).find("unknown key 'extra'") != std::string::npos);

  doc = minimal_train();
  doc["epochs"] = "thirty";
  CHECK(config_error(doc, Command::Train).find("'epochs'") != std::string::npos);

  doc = minimal_train();
  doc["adapter"] = {{"rank", 64}};
  CHECK(config_error(doc, Command::Train).find("adapter.r1") != std::string::npos);

  doc = minimal_train();
  doc["adapter"] = {{"mode", "xyz"}};
  CHECK(config_error(doc, Command::Train).find("adapter.mode") != std::string::npos);

  doc = minimal_train();
  doc["optimizer"]["betas"] = {0.9};
  CHECK_FALSE(config_error(doc, Command::Train).empty());

  doc = minimal_train();
  doc["seeds"] = json::array();
  CHECK_FALSE(config_error(doc, Command::Train).empty());

  CHECK(config_error(json{{"scaling", {{"widths", {64, 128}}}}}, Command::Scaling).find("at least 3") !=
        std::string::npos);
}

TEST_CASE("load_config reports syntax errors with a position") {
  const auto path = scratch("broken.json");
  write_text(path, "{\n  \"epochs\": 3,\n  \"bogus\": }\n");
  try {
    (void)load_config(path, Command::Train);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("line 3") != std::string::npos);
    CHECK(what.find("column") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config(scratch("missing.json"), Command::Train), ConfigError);
}
