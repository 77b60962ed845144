// SPDX-License-Identifier: Apache-2.0
// Command-line entry point: tlora <command> --config <file> [options].
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tlora/config.hpp"
#include "tlora/experiments.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> workers;
  bool dry_run = false;
};

int run(tlora::Command cmd, const Options& opts) {
  using namespace tlora;
  RunConfig cfg;
  try {
    cfg = load_config(opts.config, cmd);
    if (opts.out) cfg.output_path = *opts.out;
    if (opts.seed) {
      cfg.seeds = {*opts.seed};
      cfg.gradcheck.seed = *opts.seed;
    }
    if (opts.workers) {
      if (*opts.workers < 1) throw ConfigError("--workers must be >= 1");
      cfg.workers = *opts.workers;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  try {
    CommandResult result;
    switch (cmd) {
      case Command::Train: result = cmd_train(cfg, opts.dry_run); break;
      case Command::GradCheck: result = cmd_gradcheck(cfg); break;
      case Command::Params: result = cmd_params(cfg); break;
      case Command::Scaling: result = cmd_scaling(cfg); break;
      case Command::RatioSweep: result = cmd_ratio_sweep(cfg); break;
      case Command::Compare: result = cmd_compare(cfg); break;
    }
    (result.exit_code == 0 ? std::cout : std::cerr) << result.message << '\n';
    return result.exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tri-matrix low-rank adapters: training and measurement commands"};
  app.require_subcommand(1);

  Options opts;
  std::optional<tlora::Command> chosen;

  auto add = [&](const char* name, const char* help, tlora::Command cmd) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory (overrides output_path)");
    sub->add_option("--seed", opts.seed, "Run with this single seed");
    sub->add_option("--workers", opts.workers, "Parallel runs");
    if (cmd == tlora::Command::Train) {
      sub->add_flag("--dry-run", opts.dry_run, "Validate config and build the model, then exit");
    }
    sub->callback([&chosen, cmd] { chosen = cmd; });
  };
  add("train", "Train one model per seed", tlora::Command::Train);
  add("gradcheck", "Check adapter gradients against finite differences", tlora::Command::GradCheck);
  add("params", "Trainable parameter counts per rank and method", tlora::Command::Params);
  add("scaling", "Gradient norm scaling with width", tlora::Command::Scaling);
  add("ratio-sweep", "Train across learning-rate ratio bases", tlora::Command::RatioSweep);
  add("compare", "Train LoRA and tri-matrix variants across ranks", tlora::Command::Compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return run(*chosen, opts);
}
