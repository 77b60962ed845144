// SPDX-License-Identifier: Apache-2.0
#include "tlora/config.hpp"

#include <set>

#include "tlora/io.hpp"

namespace tlora {

using nlohmann::json;

std::string_view to_string(Command cmd) noexcept {
  switch (cmd) {
    case Command::Train: return "train";
    case Command::GradCheck: return "gradcheck";
    case Command::Params: return "params";
    case Command::Scaling: return "scaling";
    case Command::RatioSweep: return "ratio-sweep";
    case Command::Compare: return "compare";
  }
  return "?";
}

std::string Method::name() const {
  if (kind == AdapterKind::Lora) return "lora";
  return "tri_" + std::string(to_string(mode));
}

Method Method::parse(std::string_view s) {
  if (s == "lora") return {AdapterKind::Lora, TrainMode::ABC};
  if (s.starts_with("tri_")) return {AdapterKind::Tri, parse_train_mode(s.substr(4))};
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

namespace {

// Reads one JSON object, tracking which keys were consumed so leftovers can
// be reported as unknown.
class Section {
 public:
  Section(const json* node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_->is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return node_ && node_->contains(key);
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!has(key)) return;
    out = convert<T>(node_->at(key), key);
  }

  template <typename T>
  T required(const char* key) {
    if (!has(key)) throw ConfigError("missing required key '" + qualified(key) + "'");
    return convert<T>(node_->at(key), key);
  }

  const json* child(const char* key) {
    if (!has(key)) return nullptr;
    return &node_->at(key);
  }

  std::string qualified(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    if (!node_) return;
    for (auto it = node_->begin(); it != node_->end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + qualified(it.key().c_str()) + "'");
    }
  }

 private:
  template <typename T>
  T convert(const json& v, const char* key) const {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("key '" + qualified(key) + "' must be a number");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) {
          throw ConfigError("key '" + qualified(key) + "' must be an integer");
        }
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned()) {
            throw ConfigError("key '" + qualified(key) + "' must be nonnegative");
          }
        }
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("key '" + qualified(key) + "': " + e.what());
    }
  }

  const json* node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void with_context(const std::string& where, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

bool trains(Command cmd) {
  return cmd == Command::Train || cmd == Command::RatioSweep || cmd == Command::Compare;
}

}  // namespace

RunConfig parse_config(const json& doc, Command cmd) {
  RunConfig cfg;
  Section top(&doc, "");

  {
    Section s(top.child("model"), "model");
    s.read("width", cfg.model.width);
    s.read("depth", cfg.model.depth);
    s.read("mlp_factor", cfg.model.mlp_factor);
    with_context("model.activation", [&] {
      if (s.has("activation")) cfg.model.activation = parse_activation(s.required<std::string>("activation"));
    });
    with_context("model.head_init", [&] {
      if (s.has("head_init")) cfg.model.head_init = parse_head_init(s.required<std::string>("head_init"));
    });
    s.finish();
  }
  {
    Section s(top.child("task"), "task");
    with_context("task.kind", [&] {
      if (s.has("kind")) cfg.task.kind = parse_task_kind(s.required<std::string>("kind"));
    });
    cfg.task.input_dim = cfg.model.width;
    if (s.has("input_dim") && s.required<std::int64_t>("input_dim") != cfg.model.width) {
      throw ConfigError("task.input_dim must equal model.width");
    }
    s.read("num_classes", cfg.task.num_classes);
    s.read("train_size", cfg.task.train_size);
    s.read("val_size", cfg.task.val_size);
    s.read("noise_level", cfg.task.noise_level);
    s.read("planted_rank", cfg.task.planted_rank);
    s.read("planted_scale", cfg.task.planted_scale);
    s.finish();
    cfg.model.num_classes = cfg.task.num_classes;
  }
  {
    Section s(top.child("adapter"), "adapter");
    with_context("adapter.kind", [&] {
      if (s.has("kind")) cfg.adapter.kind = parse_adapter_kind(s.required<std::string>("kind"));
    });
    if (s.has("rank")) cfg.adapter.r1 = cfg.adapter.r2 = s.required<std::int64_t>("rank");
    s.read("r1", cfg.adapter.r1);
    s.read("r2", cfg.adapter.r2);
    with_context("adapter.mode", [&] {
      if (s.has("mode")) cfg.adapter.mode = parse_train_mode(s.required<std::string>("mode"));
    });
    with_context("adapter.init", [&] {
      if (s.has("init")) cfg.adapter.init = parse_init_scheme(s.required<std::string>("init"));
    });
    s.read("scale", cfg.adapter.scale);
    s.finish();
  }
  {
    const json* node = top.child("optimizer");
    if (!node && trains(cmd)) throw ConfigError("missing required key 'optimizer.base_lr'");
    Section s(node, "optimizer");
    if (trains(cmd)) {
      cfg.optimizer.base_lr = s.required<double>("base_lr");
    } else {
      s.read("base_lr", cfg.optimizer.base_lr);
    }
    with_context("optimizer.ratio_mode", [&] {
      if (s.has("ratio_mode")) {
        cfg.optimizer.ratio_mode = parse_ratio_mode(s.required<std::string>("ratio_mode"));
      }
    });
    s.read("ratio_base", cfg.optimizer.ratio_base);
    if (s.has("betas")) {
      const auto betas = s.required<std::vector<double>>("betas");
      if (betas.size() != 2) throw ConfigError("'optimizer.betas' must hold two numbers");
      cfg.optimizer.beta1 = betas[0];
      cfg.optimizer.beta2 = betas[1];
    }
    s.read("eps", cfg.optimizer.eps);
    s.read("weight_decay", cfg.optimizer.weight_decay);
    s.read("warmup_ratio", cfg.optimizer.warmup_ratio);
    if (s.has("head_lr")) cfg.head_lr = s.required<double>("head_lr");
    s.finish();
  }

  top.read("epochs", cfg.epochs);
  top.read("batch_size", cfg.batch_size);
  top.read("seeds", cfg.seeds);
  top.read("output_path", cfg.output_path);
  top.read("threshold", cfg.threshold);
  top.read("workers", cfg.workers);

  {
    Section s(top.child("sweep"), "sweep");
    s.read("ratio_bases", cfg.sweep.ratio_bases);
    s.read("ranks", cfg.sweep.ranks);
    if (s.has("methods")) {
      cfg.sweep.methods.clear();
      with_context("sweep.methods", [&] {
        for (const auto& name : s.required<std::vector<std::string>>("methods")) {
          cfg.sweep.methods.push_back(Method::parse(name));
        }
      });
    }
    s.finish();
  }
  {
    Section s(top.child("gradcheck"), "gradcheck");
    auto& g = cfg.gradcheck;
    s.read("cases_per_mode", g.cases_per_mode);
    s.read("max_dim", g.max_dim);
    s.read("max_rank", g.max_rank);
    s.read("max_batch", g.max_batch);
    s.read("step", g.step);
    s.read("tolerance", g.tolerance);
    s.read("floor", g.floor);
    s.read("seed", g.seed);
    s.finish();
  }
  {
    Section s(top.child("scaling"), "scaling");
    s.read("widths", cfg.scaling.widths);
    s.read("rank", cfg.scaling.rank);
    s.read("batch", cfg.scaling.batch);
    s.read("num_seeds", cfg.scaling.num_seeds);
    s.finish();
  }
  {
    Section s(top.child("params"), "params");
    s.read("widths", cfg.params.widths);
    s.read("ranks", cfg.params.ranks);
    s.finish();
  }
  top.finish();

  // Semantic validation.
  with_context("model", [&] { cfg.model.validate(); });
  with_context("task", [&] { cfg.task.validate(); });
  with_context("optimizer", [&] { cfg.optimizer.validate(); });
  if (cfg.epochs < 0) throw ConfigError("'epochs' must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("'batch_size' must be >= 1");
  if (cfg.seeds.empty()) throw ConfigError("'seeds' must not be empty");
  if (cfg.workers < 1) throw ConfigError("'workers' must be >= 1");
  if (!(cfg.threshold >= 0.0 && cfg.threshold <= 1.0)) throw ConfigError("'threshold' must lie in [0, 1]");
  if (trains(cmd)) {
    const auto max_rank = std::min(cfg.model.width, cfg.model.width * cfg.model.mlp_factor);
    auto check_rank = [&](std::int64_t r, const std::string& what) {
      if (r < 1 || r > max_rank) {
        throw ConfigError(what + " = " + std::to_string(r) + " must lie in [1, " +
                          std::to_string(max_rank) + "] for model width " +
                          std::to_string(cfg.model.width));
      }
    };
    if (cmd == Command::Compare) {
      for (auto r : cfg.sweep.ranks) check_rank(r, "sweep.ranks entry");
      if (cfg.sweep.methods.empty()) throw ConfigError("'sweep.methods' must not be empty");
    } else {
      check_rank(cfg.adapter.r1, "adapter.r1");
      check_rank(cfg.adapter.r2, "adapter.r2");
    }
    if (cmd == Command::RatioSweep) {
      if (cfg.sweep.ratio_bases.empty()) throw ConfigError("'sweep.ratio_bases' must not be empty");
      for (double l : cfg.sweep.ratio_bases) {
        if (!(l > 0.0)) throw ConfigError("'sweep.ratio_bases' entries must be positive");
      }
    }
  }
  if (cmd == Command::Scaling) {
    if (cfg.scaling.widths.size() < 3) {
      throw ConfigError("'scaling.widths' needs at least 3 widths to fit a slope");
    }
    for (auto w : cfg.scaling.widths) {
      if (w < cfg.scaling.rank) throw ConfigError("'scaling.widths' entries must be >= scaling.rank");
    }
    if (cfg.scaling.rank < 1 || cfg.scaling.batch < 1 || cfg.scaling.num_seeds < 1) {
      throw ConfigError("'scaling' rank, batch and num_seeds must be >= 1");
    }
  }
  if (cmd == Command::Params) {
    for (auto w : cfg.params.widths) {
      for (auto r : cfg.params.ranks) {
        if (r < 1 || r > w) {
          throw ConfigError("params: rank " + std::to_string(r) + " invalid for width " +
                            std::to_string(w));
        }
      }
    }
  }
  if (cmd == Command::GradCheck) {
    const auto& g = cfg.gradcheck;
    if (g.cases_per_mode < 1 || g.max_dim < 1 || g.max_rank < 1 || g.max_batch < 1) {
      throw ConfigError("'gradcheck' sizes must be >= 1");
    }
    if (!(g.step > 0.0) || !(g.tolerance > 0.0) || !(g.floor > 0.0)) {
      throw ConfigError("'gradcheck' step, tolerance and floor must be positive");
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, Command cmd) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // The parser message carries line and column.
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return parse_config(doc, cmd);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["task"] = {{"kind", std::string(to_string(cfg.task.kind))},
               {"num_classes", cfg.task.num_classes},
               {"train_size", cfg.task.train_size},
               {"val_size", cfg.task.val_size},
               {"noise_level", cfg.task.noise_level},
               {"planted_rank", cfg.task.planted_rank},
               {"planted_scale", cfg.task.planted_scale}};
  j["model"] = {{"width", cfg.model.width},
                {"depth", cfg.model.depth},
                {"mlp_factor", cfg.model.mlp_factor},
                {"activation", std::string(to_string(cfg.model.activation))},
                {"head_init", std::string(to_string(cfg.model.head_init))}};
  j["adapter"] = {{"kind", std::string(to_string(cfg.adapter.kind))},
                  {"r1", cfg.adapter.r1},
                  {"r2", cfg.adapter.r2},
                  {"mode", std::string(to_string(cfg.adapter.mode))},
                  {"init", std::string(to_string(cfg.adapter.init))},
                  {"scale", cfg.adapter.scale}};
  j["optimizer"] = {{"base_lr", cfg.optimizer.base_lr},
                    {"ratio_mode", std::string(to_string(cfg.optimizer.ratio_mode))},
                    {"ratio_base", cfg.optimizer.ratio_base},
                    {"betas", {cfg.optimizer.beta1, cfg.optimizer.beta2}},
                    {"eps", cfg.optimizer.eps},
                    {"weight_decay", cfg.optimizer.weight_decay},
                    {"warmup_ratio", cfg.optimizer.warmup_ratio},
                    {"schedule", "linear_warmup_linear_decay"}};
  if (cfg.head_lr) j["optimizer"]["head_lr"] = *cfg.head_lr;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seeds"] = cfg.seeds;
  j["seed_derivation"] = "derive_seed(seed, tag) for tags model, task, adapter, shuffle";
  j["output_path"] = cfg.output_path;
  j["threshold"] = cfg.threshold;
  j["workers"] = cfg.workers;
  std::vector<std::string> methods;
  for (const auto& m : cfg.sweep.methods) methods.push_back(m.name());
  j["sweep"] = {{"ratio_bases", cfg.sweep.ratio_bases},
                {"ranks", cfg.sweep.ranks},
                {"methods", methods}};
  const auto& g = cfg.gradcheck;
  j["gradcheck"] = {{"cases_per_mode", g.cases_per_mode}, {"max_dim", g.max_dim},
                    {"max_rank", g.max_rank},             {"max_batch", g.max_batch},
                    {"step", g.step},                     {"tolerance", g.tolerance},
                    {"floor", g.floor},                   {"seed", g.seed}};
  j["scaling"] = {{"widths", cfg.scaling.widths},
                  {"rank", cfg.scaling.rank},
                  {"batch", cfg.scaling.batch},
                  {"num_seeds", cfg.scaling.num_seeds}};
  j["params"] = {{"widths", cfg.params.widths}, {"ranks", cfg.params.ranks}};
  return j;
}

}  // namespace tlora
