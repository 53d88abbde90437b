#pragma once

// Fraction x seed x model sweeps with a crash-resumable results log, and the
// paired statistics report built from a results table.
//
// Output directory layout:
//   results.jsonl   one ResultRow per line; appended as cells finish, then
//                   rewritten in plan order once every cell is present
//   timings.jsonl   wall-clock seconds per cell (kept apart so the results
//                   table is byte-reproducible)
//   results.csv     CSV projection of results.jsonl
//   stats.json / stats.txt

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "chainz/experiment.hpp"
#include "chainz/metrics.hpp"

namespace chainz {

inline constexpr int kResultsFormatVersion = 1;

enum class Metric { Accuracy, Tau };

inline std::string to_string(Metric m) { return m == Metric::Accuracy ? "accuracy" : "tau"; }

// "a beats b on metric": higher accuracy, lower tau.
struct Comparison {
  std::string model_a;
  std::string model_b;
  Metric metric = Metric::Accuracy;

  std::string label() const { return model_a + ">" + model_b + ":" + to_string(metric); }
};

inline Comparison parse_comparison(const std::string& key, const std::string& s) {
  const auto gt = s.find('>');
  const auto colon = s.find(':');
  if (gt == std::string::npos || colon == std::string::npos || colon < gt)
    throw ConfigError(key, "comparison '" + s + "' is not of the form a>b:metric");
  Comparison c{s.substr(0, gt), s.substr(gt + 1, colon - gt - 1), Metric::Accuracy};
  const std::string m = s.substr(colon + 1);
  if (m == "accuracy") c.metric = Metric::Accuracy;
  else if (m == "tau") c.metric = Metric::Tau;
  else throw ConfigError(key, "unknown metric '" + m + "' (expected accuracy|tau)");
  return c;
}

struct ExperimentPlan {
  DataSpec data;
  std::vector<std::string> roster;
  std::map<std::string, RunSpec> specs;  // per roster model, fraction/seed unset
  std::vector<double> fractions;
  std::vector<std::uint64_t> seeds;
  Rounding smallest_rounding = Rounding::Ceiling;
  std::vector<Comparison> comparisons;
  std::size_t bonferroni_m = 0;  // 0: number of comparisons
  std::size_t workers = 1;

  std::size_t family_size() const { return bonferroni_m ? bonferroni_m : std::max<std::size_t>(1, comparisons.size()); }

  RunSpec cell(const std::string& model, double fraction, std::uint64_t seed) const {
    RunSpec s = specs.at(model);
    s.fraction = fraction;
    s.seed = seed;
    s.train.seed = seed;
    const double smallest = *std::min_element(fractions.begin(), fractions.end());
    s.rounding = fraction == smallest ? smallest_rounding : Rounding::Nearest;
    return s;
  }

  std::size_t cell_count() const { return roster.size() * fractions.size() * seeds.size(); }
};

// Plan keys:
//   data.*                       as in run configs
//   roster = cr,vanilla,...
//   model.widths, model.match_capacity, metrics.sensitivity
//   train.<key>                  defaults for every model
//   train.<model>.<key>          per-model override
//   split.fractions, split.seeds, split.smallest_rounding
//   comparisons = cr>vanilla:tau, ...
//   stats.bonferroni_m, workers
inline ExperimentPlan parse_plan(const KvConfig& kv) {
  detail::check_format_version(kv);
  ExperimentPlan p;
  detail::read_data_spec(kv, p.data);
  p.roster = kv.get_list("roster");
  const auto widths = detail::read_widths(kv, "model.widths", {16, 16});
  const bool match = kv.get_bool("model.match_capacity", true);
  const SensitivityTarget sens = detail::read_sensitivity(kv);
  std::set<std::string> seen;
  for (const auto& m : p.roster) {
    const auto kind = parse_model_kind(m);
    if (!kind) throw ConfigError("roster", "unknown model kind '" + m + "'");
    if (!seen.insert(m).second) throw ConfigError("roster", "duplicate model '" + m + "'");
    RunSpec s;
    s.data = p.data;
    s.kind = *kind;
    s.widths = widths;
    s.match_capacity = match;
    s.sensitivity = sens;
    s.train = default_train_config(*kind);
    detail::read_train_keys(kv, "train.", s.train);
    detail::read_train_keys(kv, "train." + m + ".", s.train);
    p.specs[m] = s;
  }
  p.fractions = kv.get_double_list("split.fractions");
  for (double f : p.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("split.fractions", "fractions must lie in (0, 1]");
  p.seeds = kv.get_u64_list("split.seeds");
  p.smallest_rounding = detail::read_rounding(kv, "split.smallest_rounding", Rounding::Ceiling);
  if (kv.has("comparisons"))
    for (const auto& c : kv.get_list("comparisons")) {
      Comparison cmp = parse_comparison("comparisons", c);
      if (!seen.count(cmp.model_a) || !seen.count(cmp.model_b))
        throw ConfigError("comparisons", "comparison '" + c + "' names a model outside the roster");
      p.comparisons.push_back(cmp);
    }
  p.bonferroni_m = kv.get_u64("stats.bonferroni_m", 0);
  p.workers = std::max<std::uint64_t>(1, kv.get_u64("workers", 1));
  kv.reject_unused();
  return p;
}

// ---------------------------------------------------------------- results IO

inline nlohmann::json to_json(const ResultRow& r) {
  nlohmann::json j;
  j["format_version"] = kResultsFormatVersion;
  j["model_id"] = r.model_id;
  j["fraction"] = r.fraction;
  j["seed"] = r.seed;
  j["status"] = r.ok ? "ok" : "failed";
  if (!r.ok) j["error"] = r.error;
  j["eval_accuracy"] = r.eval_accuracy;
  j["tau"] = r.tau;
  j["mean_norm"] = r.mean_norm;
  j["p99_norm"] = r.p99_norm;
  j["final_task_loss"] = r.final_task_loss;
  j["final_penalty"] = r.final_penalty;
  j["n_train"] = r.n_train;
  j["n_eval"] = r.n_eval;
  return j;
}

inline ResultRow row_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kResultsFormatVersion)
    throw Error("results: unsupported format_version");
  ResultRow r;
  r.model_id = j.at("model_id").get<std::string>();
  r.fraction = j.at("fraction").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("status").get<std::string>() == "ok";
  if (j.contains("error")) r.error = j.at("error").get<std::string>();
  r.eval_accuracy = j.at("eval_accuracy").get<double>();
  r.tau = j.at("tau").get<double>();
  r.mean_norm = j.at("mean_norm").get<double>();
  r.p99_norm = j.at("p99_norm").get<double>();
  r.final_task_loss = j.at("final_task_loss").get<double>();
  r.final_penalty = j.at("final_penalty").get<double>();
  r.n_train = j.at("n_train").get<std::size_t>();
  r.n_eval = j.at("n_eval").get<std::size_t>();
  return r;
}

inline std::string cell_key(const std::string& model, double fraction, std::uint64_t seed) {
  return model + "|" + format_double(fraction) + "|" + std::to_string(seed);
}

// Reads a results log. A torn final line (crash mid-write) is ignored; a
// malformed line anywhere else is an error.
inline std::vector<ResultRow> read_results(const std::string& path) {
  std::vector<ResultRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      rows.push_back(row_from_json(nlohmann::json::parse(lines[i])));
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) break;
      throw Error("results: malformed line " + std::to_string(i + 1) + " in '" + path + "': " + e.what());
    }
  }
  return rows;
}

inline std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out =
      "model_id,fraction,seed,status,eval_accuracy,tau,mean_norm,p99_norm,final_task_loss,final_penalty,n_train,n_eval\n";
  for (const auto& r : rows) {
    out += r.model_id + "," + format_double(r.fraction) + "," + std::to_string(r.seed) + "," +
           (r.ok ? "ok" : "failed") + "," + format_double(r.eval_accuracy) + "," + format_double(r.tau) + "," +
           format_double(r.mean_norm) + "," + format_double(r.p99_norm) + "," + format_double(r.final_task_loss) +
           "," + format_double(r.final_penalty) + "," + std::to_string(r.n_train) + "," +
           std::to_string(r.n_eval) + "\n";
  }
  return out;
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------- statistics

struct GroupSummary {
  std::string model_id;
  double fraction = 0.0;
  std::size_t n = 0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double tau_mean = 0.0, tau_std = 0.0;
};

struct TestOutcome {
  std::optional<StatTestResult> result;
  std::string error;
};

struct ComparisonReport {
  Comparison comparison;
  std::optional<double> fraction;  // nullopt: pooled over every fraction
  std::size_t n_pairs = 0;
  double mean_improvement = 0.0;  // mean over pairs of the per-seed improvement
  TestOutcome t_test;
  TestOutcome wilcoxon;
};

struct StatsReport {
  std::vector<GroupSummary> groups;
  std::vector<ComparisonReport> comparisons;
  std::size_t bonferroni_m = 1;
  std::vector<std::string> missing_cells;
  std::vector<std::string> failed_cells;
};

class UnpairedRowsError : public Error {
 public:
  explicit UnpairedRowsError(std::vector<std::string> missing)
      : Error(describe(missing)), missing_(std::move(missing)) {}
  const std::vector<std::string>& missing() const { return missing_; }

 private:
  static std::string describe(const std::vector<std::string>& m) {
    std::string s = "unpaired rows; missing cells:";
    for (const auto& c : m) s += "\n  " + c;
    return s;
  }
  std::vector<std::string> missing_;
};

inline double metric_of(const ResultRow& r, Metric m) { return m == Metric::Accuracy ? r.eval_accuracy : r.tau; }

// Per-seed improvement of a over b: accuracy gain, or tau reduction.
inline double improvement(const ResultRow& a, const ResultRow& b, Metric m) {
  return m == Metric::Accuracy ? a.eval_accuracy - b.eval_accuracy : b.tau - a.tau;
}

inline std::vector<Comparison> default_comparisons(const std::vector<ResultRow>& rows) {
  std::vector<std::string> models;
  for (const auto& r : rows)
    if (std::find(models.begin(), models.end(), r.model_id) == models.end()) models.push_back(r.model_id);
  std::vector<Comparison> out;
  if (std::find(models.begin(), models.end(), "cr") == models.end()) return out;
  for (Metric m : {Metric::Accuracy, Metric::Tau})
    for (const auto& b : models)
      if (b != "cr") out.push_back({"cr", b, m});
  return out;
}

namespace detail {

inline TestOutcome run_test(StatTest which, const std::vector<double>& improvements, std::size_t m) {
  TestOutcome out;
  const std::vector<double> zeros(improvements.size(), 0.0);
  try {
    StatTestResult r = which == StatTest::PairedTOneSided ? paired_t_one_sided(improvements, zeros)
                                                          : wilcoxon_signed_rank(improvements, zeros);
    out.result = bonferroni({r}, m).front();
  } catch (const ArgumentError& e) {
    out.error = e.what();
  }
  return out;
}

}  // namespace detail

// Seed-paired tests for every comparison, per fraction and pooled.
// `strict` turns missing pairs into UnpairedRowsError; otherwise the
// affected pairs are dropped and listed in missing_cells.
inline StatsReport compute_stats(const std::vector<ResultRow>& all_rows, std::vector<Comparison> comparisons,
                                 std::size_t bonferroni_m, bool strict) {
  StatsReport rep;
  if (comparisons.empty()) comparisons = default_comparisons(all_rows);
  rep.bonferroni_m = bonferroni_m ? bonferroni_m : std::max<std::size_t>(1, comparisons.size());

  std::map<std::string, ResultRow> ok;
  std::vector<double> fractions;
  std::map<double, std::set<std::uint64_t>> seeds_at;
  std::vector<std::string> models;
  for (const auto& r : all_rows) {
    if (std::find(fractions.begin(), fractions.end(), r.fraction) == fractions.end()) fractions.push_back(r.fraction);
    if (std::find(models.begin(), models.end(), r.model_id) == models.end()) models.push_back(r.model_id);
    seeds_at[r.fraction].insert(r.seed);
    if (r.ok) ok[cell_key(r.model_id, r.fraction, r.seed)] = r;
    else rep.failed_cells.push_back(cell_key(r.model_id, r.fraction, r.seed) + ": " + r.error);
  }
  std::sort(fractions.begin(), fractions.end());

  for (const auto& m : models)
    for (double f : fractions) {
      std::vector<double> acc, tau;
      for (std::uint64_t s : seeds_at[f]) {
        const auto it = ok.find(cell_key(m, f, s));
        if (it == ok.end()) continue;
        acc.push_back(it->second.eval_accuracy);
        tau.push_back(it->second.tau);
      }
      if (acc.empty()) continue;
      rep.groups.push_back({m, f, acc.size(), mean(acc), sample_stddev(acc), mean(tau), sample_stddev(tau)});
    }

  std::set<std::string> missing;
  for (const auto& cmp : comparisons) {
    std::vector<double> pooled;
    for (double f : fractions) {
      std::vector<double> imp;
      for (std::uint64_t s : seeds_at[f]) {
        const auto a = ok.find(cell_key(cmp.model_a, f, s));
        const auto b = ok.find(cell_key(cmp.model_b, f, s));
        if (a == ok.end()) missing.insert("model=" + cmp.model_a + " fraction=" + format_double(f) + " seed=" + std::to_string(s));
        if (b == ok.end()) missing.insert("model=" + cmp.model_b + " fraction=" + format_double(f) + " seed=" + std::to_string(s));
        if (a == ok.end() || b == ok.end()) continue;
        imp.push_back(improvement(a->second, b->second, cmp.metric));
      }
      pooled.insert(pooled.end(), imp.begin(), imp.end());
      ComparisonReport cr{cmp, f, imp.size(), imp.empty() ? 0.0 : mean(imp), {}, {}};
      cr.t_test = detail::run_test(StatTest::PairedTOneSided, imp, rep.bonferroni_m);
      cr.wilcoxon = detail::run_test(StatTest::WilcoxonSignedRank, imp, rep.bonferroni_m);
      rep.comparisons.push_back(std::move(cr));
    }
    ComparisonReport all{cmp, std::nullopt, pooled.size(), pooled.empty() ? 0.0 : mean(pooled), {}, {}};
    all.t_test = detail::run_test(StatTest::PairedTOneSided, pooled, rep.bonferroni_m);
    all.wilcoxon = detail::run_test(StatTest::WilcoxonSignedRank, pooled, rep.bonferroni_m);
    rep.comparisons.push_back(std::move(all));
  }
  rep.missing_cells.assign(missing.begin(), missing.end());
  if (strict && !rep.missing_cells.empty()) throw UnpairedRowsError(rep.missing_cells);
  return rep;
}

inline nlohmann::json to_json(const TestOutcome& t) {
  nlohmann::json j;
  if (t.result) {
    j["test"] = to_string(t.result->test);
    j["statistic"] = t.result->statistic;
    j["p_value"] = t.result->p_value;
    j["n_pairs"] = t.result->n_pairs;
    j["bonferroni_m"] = t.result->bonferroni_m;
    j["p_adjusted"] = t.result->p_adjusted;
  } else {
    j["error"] = t.error;
  }
  return j;
}

inline nlohmann::json to_json(const StatsReport& rep) {
  nlohmann::json j;
  j["format_version"] = kResultsFormatVersion;
  j["bonferroni_m"] = rep.bonferroni_m;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : rep.groups)
    j["groups"].push_back({{"model_id", g.model_id}, {"fraction", g.fraction}, {"n", g.n},
                           {"accuracy_mean", g.accuracy_mean}, {"accuracy_std", g.accuracy_std},
                           {"tau_mean", g.tau_mean}, {"tau_std", g.tau_std}});
  j["comparisons"] = nlohmann::json::array();
  for (const auto& c : rep.comparisons) {
    nlohmann::json e{{"comparison", c.comparison.label()}, {"model_a", c.comparison.model_a},
                     {"model_b", c.comparison.model_b}, {"metric", to_string(c.comparison.metric)},
                     {"n_pairs", c.n_pairs}, {"mean_improvement", c.mean_improvement},
                     {"paired_t", to_json(c.t_test)}, {"wilcoxon", to_json(c.wilcoxon)}};
    e["fraction"] = c.fraction ? nlohmann::json(*c.fraction) : nlohmann::json("pooled");
    j["comparisons"].push_back(e);
  }
  j["missing_cells"] = rep.missing_cells;
  j["failed_cells"] = rep.failed_cells;
  return j;
}

inline std::string to_text(const StatsReport& rep) {
  std::ostringstream o;
  char buf[256];
  o << "Per-fraction summary (mean +- sample std over seeds)\n";
  o << "model          fraction  n   accuracy            tau\n";
  for (const auto& g : rep.groups) {
    std::snprintf(buf, sizeof buf, "%-14s %-8.4g %-3zu %.4f +- %.4f   %.4f +- %.4f\n", g.model_id.c_str(),
                  g.fraction, g.n, g.accuracy_mean, g.accuracy_std, g.tau_mean, g.tau_std);
    o << buf;
  }
  o << "\nPaired one-sided tests, Bonferroni m = " << rep.bonferroni_m << "\n";
  auto fmt_test = [&](const TestOutcome& t) {
    if (!t.result) return "error: " + t.error;
    std::snprintf(buf, sizeof buf, "stat=%.4g p=%.4g p_adj=%.4g", t.result->statistic, t.result->p_value,
                  t.result->p_adjusted);
    return std::string(buf);
  };
  for (const auto& c : rep.comparisons) {
    char fbuf[32];
    if (c.fraction) std::snprintf(fbuf, sizeof fbuf, "%g", *c.fraction);
    const std::string frac = c.fraction ? std::string(fbuf) : std::string("pooled");
    std::snprintf(buf, sizeof buf, "%-28s fraction=%-7s pairs=%-3zu mean_improvement=%+.4f\n",
                  c.comparison.label().c_str(), frac.c_str(), c.n_pairs, c.mean_improvement);
    o << buf;
    o << "    t-test:   " << fmt_test(c.t_test) << "\n";
    o << "    wilcoxon: " << fmt_test(c.wilcoxon) << "\n";
  }
  if (!rep.missing_cells.empty()) {
    o << "\nMissing cells:\n";
    for (const auto& m : rep.missing_cells) o << "  " << m << "\n";
  }
  if (!rep.failed_cells.empty()) {
    o << "\nFailed cells:\n";
    for (const auto& m : rep.failed_cells) o << "  " << m << "\n";
  }
  return o.str();
}

inline void write_stats(const std::filesystem::path& dir, const StatsReport& rep) {
  write_file_atomic(dir / "stats.json", to_json(rep).dump(2) + "\n");
  write_file_atomic(dir / "stats.txt", to_text(rep));
}

// ---------------------------------------------------------------- sweep

struct SweepOptions {
  std::filesystem::path out_dir;
  std::size_t workers = 0;  // 0: plan value
  bool resume = false;
  // Testing hook: stop scheduling after this many new cells and return
  // without finalizing, as a killed process would. 0 = unlimited.
  std::size_t stop_after = 0;
  std::function<void(const std::string&)> log;
};

struct SweepSummary {
  std::size_t total = 0;
  std::size_t skipped = 0;   // already present when resuming
  std::size_t computed = 0;
  std::size_t failed = 0;
  bool finalized = false;
};

inline std::vector<std::tuple<std::string, double, std::uint64_t>> plan_cells(const ExperimentPlan& plan) {
  std::vector<std::tuple<std::string, double, std::uint64_t>> cells;
  for (double f : plan.fractions)
    for (std::uint64_t s : plan.seeds)
      for (const auto& m : plan.roster) cells.emplace_back(m, f, s);
  return cells;
}

inline SweepSummary run_sweep(const ExperimentPlan& plan, const SweepOptions& opts) {
  namespace fs = std::filesystem;
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  fs::create_directories(opts.out_dir);
  const fs::path results_path = opts.out_dir / "results.jsonl";
  const fs::path timings_path = opts.out_dir / "timings.jsonl";

  std::vector<ResultRow> existing;
  if (fs::exists(results_path) && fs::file_size(results_path) > 0) {
    if (!opts.resume)
      throw Error("'" + results_path.string() + "' already exists; pass --resume or choose a fresh --out");
    existing = read_results(results_path.string());
    // Drop a torn tail so new rows start on a fresh line.
    std::string rewrite;
    for (const auto& r : existing) rewrite += to_json(r).dump() + "\n";
    write_file_atomic(results_path, rewrite);
  }
  std::set<std::string> done;
  for (const auto& r : existing) done.insert(cell_key(r.model_id, r.fraction, r.seed));

  const auto cells = plan_cells(plan);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& [m, f, s] = cells[i];
    if (!done.count(cell_key(m, f, s))) pending.push_back(i);
  }
  SweepSummary summary;
  summary.total = cells.size();
  summary.skipped = cells.size() - pending.size();
  log("sweep: " + std::to_string(cells.size()) + " cells, " + std::to_string(summary.skipped) +
      " already complete, " + std::to_string(pending.size()) + " to run");

  const Dataset ds = load_dataset(plan.data);
  std::mutex write_mu;
  std::ofstream results_out(results_path, std::ios::app | std::ios::binary);
  std::ofstream timings_out(timings_path, std::ios::app | std::ios::binary);
  if (!results_out || !timings_out) throw Error("cannot append to results in '" + opts.out_dir.string() + "'");

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> claimed{0};
  std::size_t computed = 0, failed = 0;
  const std::size_t limit = opts.stop_after ? std::min(opts.stop_after, pending.size()) : pending.size();
  auto worker = [&]() {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size() || claimed.fetch_add(1) >= limit) return;
      const auto& [m, f, s] = cells[pending[k]];
      ResultRow row;
      try {
        row = run_cell(ds, plan.cell(m, f, s)).row;
      } catch (const std::exception& e) {
        row.model_id = m;
        row.fraction = f;
        row.seed = s;
        row.ok = false;
        row.error = e.what();
      }
      std::lock_guard lock(write_mu);
      results_out << to_json(row).dump() << "\n" << std::flush;
      timings_out << nlohmann::json{{"cell", cell_key(m, f, s)}, {"wall_time_seconds", row.wall_time_seconds}}.dump()
                  << "\n"
                  << std::flush;
      ++computed;
      if (!row.ok) ++failed;
      log("cell " + cell_key(m, f, s) + (row.ok ? " ok" : " FAILED: " + row.error));
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, opts.workers ? opts.workers : plan.workers);
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_workers; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  results_out.close();
  timings_out.close();
  summary.computed = computed;
  summary.failed = failed;

  std::vector<ResultRow> rows = read_results(results_path.string());
  std::map<std::string, ResultRow> by_cell;
  for (const auto& r : rows) by_cell[cell_key(r.model_id, r.fraction, r.seed)] = r;
  for (const auto& [m, f, s] : cells)
    if (!by_cell.count(cell_key(m, f, s))) return summary;  // interrupted; resume later

  // Every cell present: rewrite in plan order, then derived outputs.
  std::vector<ResultRow> ordered;
  std::string jsonl;
  for (const auto& [m, f, s] : cells) {
    ordered.push_back(by_cell.at(cell_key(m, f, s)));
    jsonl += to_json(ordered.back()).dump() + "\n";
  }
  write_file_atomic(results_path, jsonl);
  write_file_atomic(opts.out_dir / "results.csv", results_csv(ordered));
  write_stats(opts.out_dir, compute_stats(ordered, plan.comparisons, plan.bonferroni_m, false));
  summary.finalized = true;
  return summary;
}

}  // namespace chainz
