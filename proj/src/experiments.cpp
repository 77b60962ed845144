// SPDX-License-Identifier: Apache-2.0
#include "tlora/experiments.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "tlora/io.hpp"

namespace tlora {

using nlohmann::json;

namespace {

constexpr std::array<TrainMode, 4> kModes{TrainMode::BOnly, TrainMode::AB, TrainMode::CB,
                                          TrainMode::ABC};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string csv_num(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

json json_num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json record_to_json(const RunRecord& r) {
  return {{"epoch", r.epoch},         {"train_loss", r.train_loss}, {"train_acc", r.train_acc},
          {"val_loss", r.val_loss},   {"val_acc", r.val_acc},       {"val_mcc", r.val_mcc},
          {"wall_seconds", r.wall_seconds}};
}

std::filesystem::path out_dir(const RunConfig& cfg) { return cfg.output_path; }

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace

// ---------------------------------------------------------------- gradcheck

GradTriple<double> analytic_grads(const TriAdapter<double>& ad, const MatrixXd& x,
                                  const MatrixXd& upstream) {
  return adapter_grads(ad, x, upstream);
}

std::vector<std::string> GradCheckCase::failing(double tol) const {
  std::vector<std::string> out;
  if (error_a > tol) out.emplace_back("G_A");
  if (error_b > tol) out.emplace_back("G_B");
  if (error_c > tol) out.emplace_back("G_C");
  return out;
}

std::string GradCheckCase::describe() const {
  std::ostringstream os;
  os << "mode=" << to_string(mode) << " case=" << index << " m=" << m << " n=" << n
     << " r1=" << r1 << " r2=" << r2 << " b=" << batch << " err(G_A)=" << format_double(error_a)
     << " err(G_B)=" << format_double(error_b) << " err(G_C)=" << format_double(error_c);
  return os.str();
}

std::vector<const GradCheckCase*> GradCheckReport::failures() const {
  std::vector<const GradCheckCase*> out;
  for (const auto& c : cases) {
    if (c.worst() > tolerance) out.push_back(&c);
  }
  return out;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  if (passed()) {
    os << "PASS, max rel err " << format_double(worst_error) << " <= " << format_double(tolerance)
       << ", " << cases.size() << " cases";
    return os.str();
  }
  const auto bad = failures();
  std::set<std::string> names;
  for (const auto* c : bad) {
    for (auto& f : c->failing(tolerance)) names.insert(f);
  }
  os << "FAIL in";
  for (const auto& n : names) os << ' ' << n;
  os << ": " << bad.size() << " of " << cases.size() << " cases exceed "
     << format_double(tolerance) << ", max rel err " << format_double(worst_error);
  return os.str();
}

GradCheckReport run_gradcheck(const GradCheckSettings& settings, const GradFn& grads) {
  GradCheckReport report;
  report.tolerance = settings.tolerance;
  for (TrainMode mode : kModes) {
    SeededRng rng(derive_seed(settings.seed, "gradcheck", static_cast<std::uint64_t>(mode)));
    auto draw = [&](std::int64_t hi) {
      return 1 + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(hi)));
    };
    for (std::int64_t i = 0; i < settings.cases_per_mode; ++i) {
      GradCheckCase c;
      c.mode = mode;
      c.index = i;
      c.m = draw(settings.max_dim);
      c.n = draw(settings.max_dim);
      if (i == 0) {
        c.r1 = c.r2 = c.batch = 1;
      } else {
        c.r1 = draw(std::min(c.m, settings.max_rank));
        c.r2 = draw(std::min(c.n, settings.max_rank));
        c.batch = draw(settings.max_batch);
      }
      const AdapterSpec spec{c.m, c.n, c.r1, c.r2, mode, InitScheme::LecunAll, rng.next_u64()};
      const auto ad = init_adapter(spec);
      const MatrixXd x = gaussian_matrix(c.n, c.batch, 1.0, rng);
      const MatrixXd u = gaussian_matrix(c.m, c.batch, 1.0, rng);
      auto loss = [&](const TriAdapter<double>& probe) {
        return frobenius_inner(u, adapter_output(probe, x));
      };
      const auto fd = finite_diff_grads(loss, ad, settings.step, true);
      const auto g = grads(ad, x, u);
      c.error_a = max_relative_error(g.a, fd.a, settings.floor);
      c.error_b = max_relative_error(g.b, fd.b, settings.floor);
      c.error_c = max_relative_error(g.c, fd.c, settings.floor);
      if (c.worst() > report.worst_error || report.cases.empty()) {
        report.worst_error = std::max(report.worst_error, c.worst());
        report.worst_index = report.cases.size();
      }
      report.cases.push_back(c);
    }
  }
  return report;
}

ModelGradCheck check_model_grads(ToyModel model, const MatrixXd& x, std::span<const int> labels,
                                 std::int64_t entries, double step, double floor,
                                 std::uint64_t seed) {
  const ModelGrads grads = backward(model, x, labels);
  const auto gviews = trainable_grads(model, grads);
  auto pviews = trainable_params(model);

  std::vector<std::pair<std::size_t, Eigen::Index>> slots;
  for (std::size_t p = 0; p < pviews.size(); ++p) {
    for (Eigen::Index i = 0; i < pviews[p].size; ++i) slots.emplace_back(p, i);
  }
  if (entries > static_cast<std::int64_t>(slots.size())) {
    throw std::invalid_argument("check_model_grads: only " + std::to_string(slots.size()) +
                                " trainable entries");
  }
  SeededRng rng(seed);
  rng.shuffle(std::span(slots));

  ModelGradCheck out;
  for (std::int64_t k = 0; k < entries; ++k) {
    const auto [p, i] = slots[static_cast<std::size_t>(k)];
    double* value = pviews[p].data + i;
    const double orig = *value;
    *value = orig + step;
    const double up = cross_entropy(forward(model, x), labels);
    *value = orig - step;
    const double down = cross_entropy(forward(model, x), labels);
    *value = orig;
    const double fd = (up - down) / (2.0 * step);
    const double an = gviews[p].data[i];
    const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
    if (err > out.worst_error || k == 0) {
      out.worst_error = std::max(out.worst_error, err);
      out.worst_name = pviews[p].name + "[" + std::to_string(i) + "]";
    }
    ++out.entries;
  }
  return out;
}

// ------------------------------------------------------------------ params

std::vector<ParamsRow> params_table(const ToyModelSpec& model, std::span<const std::int64_t> widths,
                                    std::span<const std::int64_t> ranks) {
  const std::array<Method, 3> methods{Method{AdapterKind::Lora, TrainMode::ABC},
                                      Method{AdapterKind::Tri, TrainMode::BOnly},
                                      Method{AdapterKind::Tri, TrainMode::ABC}};
  std::vector<ParamsRow> rows;
  for (auto width : widths) {
    ToyModelSpec spec = model;
    spec.width = width;
    const ToyModel base = build_model(spec);
    for (auto rank : ranks) {
      for (const auto& method : methods) {
        AdapterTemplate tmpl;
        tmpl.kind = method.kind;
        tmpl.mode = method.mode;
        tmpl.r1 = tmpl.r2 = rank;
        const ToyModel injected = inject_adapters(base, tmpl);
        ParamsRow row;
        row.width = width;
        row.depth = spec.depth;
        row.rank = rank;
        row.method = method.name();
        row.trainable = injected.adapter_trainable_count();
        row.base = injected.base_param_count();
        row.percent = 100.0 * static_cast<double>(row.trainable) / static_cast<double>(row.base);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string params_csv(const std::vector<ParamsRow>& rows) {
  std::string out = "width,depth,rank,method,trainable_params,base_params,percent\n";
  for (const auto& r : rows) {
    out += std::to_string(r.width) + "," + std::to_string(r.depth) + "," + std::to_string(r.rank) +
           "," + r.method + "," + std::to_string(r.trainable) + "," + std::to_string(r.base) + "," +
           format_double(r.percent) + "\n";
  }
  return out;
}

// ----------------------------------------------------------------- scaling

double component_spread(const GradTriple<double>& grads, const LrTriple& lrs) {
  const auto parts = loss_delta_components(grads, lrs);
  double lo = std::abs(parts[0]);
  double hi = lo;
  for (double p : parts) {
    lo = std::min(lo, std::abs(p));
    hi = std::max(hi, std::abs(p));
  }
  if (!(lo > 0.0)) throw std::domain_error("component_spread: zero loss component");
  return hi / lo;
}

std::pair<double, double> fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("fit_line: need at least two paired points");
  }
  const double k = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / k;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / k;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_line: x values must not all be equal");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

double ScalingResult::median_spread(std::int64_t width, RatioMode mode) const {
  std::vector<double> v;
  for (const auto& r : rows) {
    if (r.width != width) continue;
    v.push_back(mode == RatioMode::Uniform     ? r.spread_uniform
                : mode == RatioMode::RatioBase ? r.spread_eq8
                                               : r.spread_eq7);
  }
  if (v.empty()) throw std::invalid_argument("median_spread: width not measured");
  return median(std::move(v));
}

ScalingResult run_scaling(const ScalingSettings& settings, std::uint64_t seed) {
  if (settings.widths.size() < 3) {
    throw std::invalid_argument("run_scaling: at least 3 widths are needed to fit a slope");
  }
  ScalingResult result;
  std::vector<double> log_w, mean_a, mean_b, mean_c;
  for (auto n : settings.widths) {
    double sa = 0.0, sb = 0.0, sc = 0.0;
    for (std::int64_t s = 0; s < settings.num_seeds; ++s) {
      const auto run_seed = derive_seed(derive_seed(seed, "scaling", static_cast<std::uint64_t>(n)),
                                        "seed", static_cast<std::uint64_t>(s));
      const AdapterSpec spec{n, n, settings.rank, settings.rank, TrainMode::ABC,
                             InitScheme::LecunAll, derive_seed(run_seed, "adapter")};
      const auto ad = init_adapter(spec);
      SeededRng rng(derive_seed(run_seed, "data"));
      const MatrixXd x = gaussian_matrix(n, settings.batch, 1.0, rng);
      const MatrixXd u = gaussian_matrix(n, settings.batch, 1.0, rng);
      const auto g = adapter_grads(ad, x, u);

      ScalingRow row;
      row.width = n;
      row.seed = s;
      row.norm_a = l1_norm(g.a);
      row.norm_b = l1_norm(g.b);
      row.norm_c = l1_norm(g.c);
      OptimizerConfig oc;
      oc.base_lr = 1.0;
      row.spread_uniform = component_spread(g, lr_ratios(oc, n, n));
      oc.ratio_mode = RatioMode::RatioBase;
      oc.ratio_base = static_cast<double>(n);
      row.spread_eq8 = component_spread(g, lr_ratios(oc, n, n));
      oc.ratio_mode = RatioMode::PerLayer;
      row.spread_eq7 = component_spread(g, lr_ratios(oc, n, n));
      result.rows.push_back(row);
      sa += std::log(row.norm_a);
      sb += std::log(row.norm_b);
      sc += std::log(row.norm_c);
    }
    const auto k = static_cast<double>(settings.num_seeds);
    log_w.push_back(std::log(static_cast<double>(n)));
    mean_a.push_back(sa / k);
    mean_b.push_back(sb / k);
    mean_c.push_back(sc / k);
  }
  std::tie(result.slope_a, result.intercept_a) = fit_line(log_w, mean_a);
  std::tie(result.slope_b, result.intercept_b) = fit_line(log_w, mean_b);
  std::tie(result.slope_c, result.intercept_c) = fit_line(log_w, mean_c);
  return result;
}

// ------------------------------------------------------------ training runs

double RunOutcome::final_val_acc() const { return records.empty() ? kNaN : records.back().val_acc; }

double RunOutcome::best_val_acc() const {
  double best = kNaN;
  for (const auto& r : records) {
    if (!(r.val_acc <= best)) best = r.val_acc;
  }
  return best;
}

std::int64_t RunOutcome::best_epoch() const {
  std::int64_t epoch = 0;
  double best = -1.0;
  for (const auto& r : records) {
    if (r.val_acc > best) {
      best = r.val_acc;
      epoch = r.epoch;
    }
  }
  return epoch;
}

double RunOutcome::median_epoch_wall_seconds() const {
  std::vector<double> v;
  for (const auto& r : records) v.push_back(r.wall_seconds);
  return v.empty() ? kNaN : median(std::move(v));
}

RunOutcome execute_run(const RunConfig& cfg, const RunSpec& spec,
                       const std::optional<std::filesystem::path>& csv_path,
                       const std::function<void(const ToyModel&)>& on_trained) {
  RunOutcome out;
  out.spec = spec;
  try {
    ToyModelSpec ms = cfg.model;
    ms.seed = derive_seed(spec.seed, "model");
    const ToyModel base = build_model(ms);

    TaskSpec ts = cfg.task;
    ts.seed = derive_seed(spec.seed, "task");
    ts.input_dim = ms.width;
    ts.num_classes = ms.num_classes;
    const TaskData data = make_task(ts, base);

    AdapterTemplate tmpl = cfg.adapter;
    tmpl.kind = spec.method.kind;
    tmpl.mode = spec.method.mode;
    tmpl.r1 = spec.r1;
    tmpl.r2 = spec.r2;
    tmpl.seed = derive_seed(spec.seed, "adapter");
    ToyModel model = inject_adapters(base, tmpl);
    out.trainable_params = model.adapter_trainable_count();

    OptimizerConfig oc = cfg.optimizer;
    oc.ratio_base = spec.ratio_base;
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.shuffle_seed = derive_seed(spec.seed, "shuffle");
    tc.head_lr = cfg.head_lr;

    out.records = train(model, data, oc, tc);
    out.completed = true;
    out.epochs_to_threshold = epochs_to_threshold(out.records, cfg.threshold);
    if (csv_path) write_text(*csv_path, records_to_csv(out.records));
    if (on_trained) on_trained(model);
  } catch (const TrainingDiverged& e) {
    out.diverged = true;
    out.error = e.what();
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

double censored_epochs(const RunOutcome& run, std::int64_t epochs) {
  if (run.epochs_to_threshold) return static_cast<double>(*run.epochs_to_threshold);
  return static_cast<double>(epochs + 1);
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const auto k = v.size();
  return k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double iqr(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
}

// ---------------------------------------------------------------- commands

namespace {

std::string status_of(const RunOutcome& r) {
  if (r.completed) return r.epochs_to_threshold ? "converged" : "not_converged";
  return r.diverged ? "diverged" : "failed";
}

json outcome_to_json(const RunOutcome& r) {
  json j = {{"method", r.spec.method.name()},
            {"r1", r.spec.r1},
            {"r2", r.spec.r2},
            {"ratio_base", r.spec.ratio_base},
            {"seed", r.spec.seed},
            {"status", status_of(r)},
            {"trainable_params", r.trainable_params}};
  j["epochs_to_threshold"] =
      r.epochs_to_threshold ? json(*r.epochs_to_threshold) : json(nullptr);
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.records.empty()) {
    j["final"] = record_to_json(r.records.back());
    const auto best = r.best_epoch();
    j["best"] = record_to_json(r.records[static_cast<std::size_t>(best - 1)]);
    j["median_epoch_wall_seconds"] = r.median_epoch_wall_seconds();
  }
  return j;
}

int exit_code_for(const std::vector<RunOutcome>& runs) {
  for (const auto& r : runs) {
    if (!r.completed && !r.diverged) return 1;
  }
  return 0;
}

/// Summary and aggregate rows share one schema. Aggregate rows leave seed
/// and status empty and carry medians with IQRs over the group.
constexpr const char* kSweepColumns =
    "row_type,method,rank,ratio_base,seed,status,trainable_params,epochs_to_threshold,"
    "epochs_to_threshold_iqr,final_val_acc,final_val_acc_iqr,best_val_acc,final_val_mcc,"
    "final_val_loss,converged_runs,median_epoch_wall_seconds";

std::string run_row(const RunOutcome& r) {
  const bool has = !r.records.empty();
  const auto& last = has ? r.records.back() : RunRecord{};
  std::ostringstream os;
  os << "run," << r.spec.method.name() << ',' << r.spec.r1 << ',' << format_double(r.spec.ratio_base)
     << ',' << r.spec.seed << ',' << status_of(r) << ',' << r.trainable_params << ','
     << (r.epochs_to_threshold ? std::to_string(*r.epochs_to_threshold) : "") << ",,"
     << (has ? csv_num(last.val_acc) : "") << ",," << (has ? csv_num(r.best_val_acc()) : "")
     << ',' << (has ? csv_num(last.val_mcc) : "") << ',' << (has ? csv_num(last.val_loss) : "")
     << ',' << (r.epochs_to_threshold ? 1 : 0) << ','
     << (has ? csv_num(r.median_epoch_wall_seconds()) : "") << '\n';
  return os.str();
}

struct Aggregate {
  double epochs_median = kNaN, epochs_iqr = kNaN;
  double final_acc_median = kNaN, final_acc_iqr = kNaN;
  double best_acc_median = kNaN;
  double mcc_median = kNaN;
  double loss_median = kNaN;
  double wall_median = kNaN;
  std::int64_t converged = 0;
  std::int64_t runs = 0;
};

Aggregate aggregate(const std::vector<const RunOutcome*>& group, std::int64_t epochs) {
  Aggregate a;
  std::vector<double> ett, fin, best, mcc, loss, wall;
  for (const auto* r : group) {
    ++a.runs;
    ett.push_back(censored_epochs(*r, epochs));
    if (r->epochs_to_threshold) ++a.converged;
    if (r->records.empty()) continue;
    fin.push_back(r->final_val_acc());
    best.push_back(r->best_val_acc());
    mcc.push_back(r->records.back().val_mcc);
    loss.push_back(r->records.back().val_loss);
    wall.push_back(r->median_epoch_wall_seconds());
  }
  a.epochs_median = median(ett);
  a.epochs_iqr = iqr(ett);
  a.final_acc_median = median(fin);
  a.final_acc_iqr = iqr(fin);
  a.best_acc_median = median(best);
  a.mcc_median = median(mcc);
  a.loss_median = median(loss);
  a.wall_median = median(wall);
  return a;
}

std::string aggregate_row(const RunSpec& key, std::int64_t trainable, const Aggregate& a) {
  std::ostringstream os;
  os << "aggregate," << key.method.name() << ',' << key.r1 << ',' << format_double(key.ratio_base)
     << ",,," << trainable << ',' << csv_num(a.epochs_median) << ',' << csv_num(a.epochs_iqr)
     << ',' << csv_num(a.final_acc_median) << ',' << csv_num(a.final_acc_iqr) << ','
     << csv_num(a.best_acc_median) << ',' << csv_num(a.mcc_median) << ','
     << csv_num(a.loss_median) << ',' << a.converged << ',' << csv_num(a.wall_median) << '\n';
  return os.str();
}

json aggregate_to_json(const RunSpec& key, const Aggregate& a) {
  return {{"method", key.method.name()},
          {"rank", key.r1},
          {"ratio_base", key.ratio_base},
          {"runs", a.runs},
          {"converged_runs", a.converged},
          {"median_epochs_to_threshold", json_num(a.epochs_median)},
          {"iqr_epochs_to_threshold", json_num(a.epochs_iqr)},
          {"median_final_val_acc", json_num(a.final_acc_median)},
          {"iqr_final_val_acc", json_num(a.final_acc_iqr)},
          {"median_best_val_acc", json_num(a.best_acc_median)},
          {"median_final_val_mcc", json_num(a.mcc_median)},
          {"median_epoch_wall_seconds", json_num(a.wall_median)}};
}

/// Runs every spec (in parallel), writes per-run CSVs under runs/, then the
/// merged CSV and summary.json. Specs sharing everything but the seed form
/// one aggregate group, in first-appearance order.
CommandResult run_sweep(const RunConfig& cfg, const std::string& command,
                        const std::vector<RunSpec>& specs,
                        const std::function<std::string(const RunSpec&)>& run_name) {
  const auto dir = out_dir(cfg);
  auto runs = parallel_map<RunOutcome>(specs.size(), cfg.workers, [&](std::size_t i) {
    return execute_run(cfg, specs[i], dir / "runs" / (run_name(specs[i]) + ".csv"));
  });

  std::vector<std::pair<RunSpec, std::vector<const RunOutcome*>>> groups;
  for (const auto& r : runs) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) {
      return g.first.method.name() == r.spec.method.name() && g.first.r1 == r.spec.r1 &&
             g.first.r2 == r.spec.r2 && g.first.ratio_base == r.spec.ratio_base;
    });
    if (it == groups.end()) {
      groups.push_back({r.spec, {}});
      it = std::prev(groups.end());
    }
    it->second.push_back(&r);
  }

  std::string csv = std::string(kSweepColumns) + "\n";
  for (const auto& r : runs) csv += run_row(r);
  json aggregates = json::array();
  for (const auto& [key, group] : groups) {
    const auto agg = aggregate(group, cfg.epochs);
    std::int64_t trainable = 0;
    for (const auto* r : group) trainable = std::max(trainable, r->trainable_params);
    csv += aggregate_row(key, trainable, agg);
    aggregates.push_back(aggregate_to_json(key, agg));
  }
  const std::string csv_name = command == "ratio-sweep" ? "ratio_sweep.csv" : "compare.csv";
  write_text(dir / csv_name, csv);

  json summary;
  summary["command"] = command;
  summary["config"] = config_to_json(cfg);
  summary["runs"] = json::array();
  for (const auto& r : runs) summary["runs"].push_back(outcome_to_json(r));
  summary["aggregates"] = aggregates;
  write_json(dir / "summary.json", summary);

  std::int64_t failed = 0;
  std::int64_t diverged = 0;
  for (const auto& r : runs) {
    failed += (!r.completed && !r.diverged) ? 1 : 0;
    diverged += r.diverged ? 1 : 0;
  }
  std::ostringstream os;
  os << command << ": " << runs.size() << " runs, " << diverged << " diverged, " << failed
     << " failed; results in " << (dir / csv_name).string();
  for (const auto& r : runs) {
    if (!r.completed) os << "\n  " << run_name(r.spec) << ": " << r.error;
  }
  return {exit_code_for(runs), os.str()};
}

}  // namespace

CommandResult cmd_train(const RunConfig& cfg, bool dry_run) {
  const RunSpec base_spec{Method{cfg.adapter.kind, cfg.adapter.mode}, cfg.adapter.r1,
                          cfg.adapter.r2, cfg.optimizer.ratio_base, cfg.seeds.front()};
  if (dry_run) {
    ToyModelSpec ms = cfg.model;
    ms.seed = derive_seed(base_spec.seed, "model");
    AdapterTemplate tmpl = cfg.adapter;
    tmpl.seed = derive_seed(base_spec.seed, "adapter");
    const ToyModel model = inject_adapters(build_model(ms), tmpl);
    std::ostringstream os;
    os << "dry run ok: " << model.layers().size() << " adapted layers, "
       << model.adapter_trainable_count() << " trainable adapter entries, "
       << model.base_param_count() << " frozen entries, 0 epochs";
    return {0, os.str()};
  }

  const auto dir = out_dir(cfg);
  std::vector<RunSpec> specs;
  for (auto seed : cfg.seeds) {
    RunSpec s = base_spec;
    s.seed = seed;
    specs.push_back(s);
  }
  auto runs = parallel_map<RunOutcome>(specs.size(), cfg.workers, [&](std::size_t i) {
    const auto tag = "seed" + std::to_string(specs[i].seed);
    return execute_run(cfg, specs[i], dir / ("run_" + tag + ".csv"), [&](const ToyModel& model) {
      for (const auto& slot : model.layers()) {
        if (const auto* tri = std::get_if<TriAdapter<double>>(&slot.adapter)) {
          save_adapter(dir / "adapters" / tag / (slot.name + ".json"), *tri);
        }
      }
    });
  });

  json summary;
  summary["command"] = "train";
  summary["config"] = config_to_json(cfg);
  summary["runs"] = json::array();
  for (const auto& r : runs) summary["runs"].push_back(outcome_to_json(r));
  write_json(dir / "summary.json", summary);

  std::ostringstream os;
  int code = 0;
  for (const auto& r : runs) {
    if (!r.completed) {
      code = 1;
      os << "seed " << r.spec.seed << ": " << status_of(r) << ": " << r.error << '\n';
      continue;
    }
    if (r.records.empty()) {
      os << "seed " << r.spec.seed << ": 0 epochs\n";
      continue;
    }
    const auto& last = r.records.back();
    os << "seed " << r.spec.seed << ": epoch " << last.epoch << " train_loss "
       << format_double(last.train_loss) << " val_loss " << format_double(last.val_loss)
       << " val_acc " << format_double(last.val_acc) << " val_mcc "
       << format_double(last.val_mcc) << " best_val_acc " << format_double(r.best_val_acc())
       << " (epoch " << r.best_epoch() << ")\n";
  }
  std::string msg = os.str();
  if (!msg.empty()) msg.pop_back();
  return {code, msg};
}

CommandResult cmd_gradcheck(const RunConfig& cfg) {
  const auto report = run_gradcheck(cfg.gradcheck);
  const auto dir = out_dir(cfg);
  std::string csv = "mode,case,m,n,r1,r2,batch,error_a,error_b,error_c\n";
  for (const auto& c : report.cases) {
    csv += std::string(to_string(c.mode)) + "," + std::to_string(c.index) + "," +
           std::to_string(c.m) + "," + std::to_string(c.n) + "," + std::to_string(c.r1) + "," +
           std::to_string(c.r2) + "," + std::to_string(c.batch) + "," + format_double(c.error_a) +
           "," + format_double(c.error_b) + "," + format_double(c.error_c) + "\n";
  }
  write_text(dir / "gradcheck.csv", csv);
  json summary;
  summary["command"] = "gradcheck";
  summary["config"] = config_to_json(cfg);
  summary["cases"] = report.cases.size();
  summary["passed"] = report.passed();
  summary["max_relative_error"] = report.worst_error;
  summary["worst_case"] = report.cases.empty() ? "" : report.cases[report.worst_index].describe();
  summary["failures"] = json::array();
  for (const auto* c : report.failures()) summary["failures"].push_back(c->describe());
  write_json(dir / "summary.json", summary);

  std::string msg = report.summary();
  if (!report.cases.empty()) msg += "\nworst case: " + report.cases[report.worst_index].describe();
  for (const auto* c : report.failures()) msg += "\n  " + c->describe();
  return {report.passed() ? 0 : 1, msg};
}

CommandResult cmd_params(const RunConfig& cfg) {
  const auto rows = params_table(cfg.model, cfg.params.widths, cfg.params.ranks);
  const auto dir = out_dir(cfg);
  write_text(dir / "params.csv", params_csv(rows));
  json summary;
  summary["command"] = "params";
  summary["config"] = config_to_json(cfg);
  summary["rows"] = json::array();
  for (const auto& r : rows) {
    summary["rows"].push_back({{"width", r.width},
                               {"depth", r.depth},
                               {"rank", r.rank},
                               {"method", r.method},
                               {"trainable_params", r.trainable},
                               {"base_params", r.base},
                               {"percent", r.percent}});
  }
  write_json(dir / "summary.json", summary);
  return {0, "params: " + std::to_string(rows.size()) + " rows in " + (dir / "params.csv").string()};
}

CommandResult cmd_scaling(const RunConfig& cfg) {
  const auto seed = cfg.seeds.front();
  const auto result = run_scaling(cfg.scaling, seed);
  const auto dir = out_dir(cfg);
  std::string csv = "width,seed,norm_a,norm_b,norm_c,spread_uniform,spread_eq8,spread_eq7\n";
  for (const auto& r : result.rows) {
    csv += std::to_string(r.width) + "," + std::to_string(r.seed) + "," + format_double(r.norm_a) +
           "," + format_double(r.norm_b) + "," + format_double(r.norm_c) + "," +
           format_double(r.spread_uniform) + "," + format_double(r.spread_eq8) + "," +
           format_double(r.spread_eq7) + "\n";
  }
  write_text(dir / "scaling.csv", csv);
  std::string slopes = "factor,slope,intercept\n";
  slopes += "A," + format_double(result.slope_a) + "," + format_double(result.intercept_a) + "\n";
  slopes += "B," + format_double(result.slope_b) + "," + format_double(result.intercept_b) + "\n";
  slopes += "C," + format_double(result.slope_c) + "," + format_double(result.intercept_c) + "\n";
  write_text(dir / "scaling_slopes.csv", slopes);

  json summary;
  summary["command"] = "scaling";
  summary["config"] = config_to_json(cfg);
  summary["slopes"] = {{"A", result.slope_a}, {"B", result.slope_b}, {"C", result.slope_c}};
  summary["median_spread"] = json::array();
  for (auto n : cfg.scaling.widths) {
    summary["median_spread"].push_back(
        {{"width", n},
         {"uniform", result.median_spread(n, RatioMode::Uniform)},
         {"eq8", result.median_spread(n, RatioMode::RatioBase)},
         {"eq7", result.median_spread(n, RatioMode::PerLayer)}});
  }
  write_json(dir / "summary.json", summary);

  const auto widest = cfg.scaling.widths.back();
  std::ostringstream os;
  os << "scaling: slopes A " << format_double(result.slope_a) << ", B "
     << format_double(result.slope_b) << ", C " << format_double(result.slope_c)
     << "; median spread at width " << widest << ": uniform "
     << format_double(result.median_spread(widest, RatioMode::Uniform)) << ", eq7 "
     << format_double(result.median_spread(widest, RatioMode::PerLayer));
  return {0, os.str()};
}

CommandResult cmd_ratio_sweep(const RunConfig& cfg) {
  if (cfg.adapter.kind != AdapterKind::Tri) {
    throw ConfigError("ratio-sweep needs adapter.kind \"tri\"");
  }
  RunConfig run_cfg = cfg;
  run_cfg.optimizer.ratio_mode = RatioMode::RatioBase;
  std::vector<RunSpec> specs;
  for (double lambda : cfg.sweep.ratio_bases) {
    for (auto seed : cfg.seeds) {
      specs.push_back({Method{AdapterKind::Tri, cfg.adapter.mode}, cfg.adapter.r1, cfg.adapter.r2,
                       lambda, seed});
    }
  }
  return run_sweep(run_cfg, "ratio-sweep", specs, [](const RunSpec& s) {
    return "ratio" + format_double(s.ratio_base) + "_seed" + std::to_string(s.seed);
  });
}

CommandResult cmd_compare(const RunConfig& cfg) {
  std::vector<RunSpec> specs;
  for (const auto& method : cfg.sweep.methods) {
    for (auto rank : cfg.sweep.ranks) {
      for (auto seed : cfg.seeds) {
        specs.push_back({method, rank, rank, cfg.optimizer.ratio_base, seed});
      }
    }
  }
  return run_sweep(cfg, "compare", specs, [](const RunSpec& s) {
    return s.method.name() + "_r" + std::to_string(s.r1) + "_seed" + std::to_string(s.seed);
  });
}

}  // namespace tlora
