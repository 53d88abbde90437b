#pragma once

// The work behind each chainz subcommand, callable without a process
// boundary. tools/chainz.cpp only parses flags and maps errors to exit codes.

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "chainz/checkpoint.hpp"
#include "chainz/sweep.hpp"

namespace chainz {

namespace fs = std::filesystem;

struct TrainArtifacts {
  ResultRow row;
  Checkpoint checkpoint;
  TrainLog log;
};

inline std::string train_log_csv(const TrainLog& log) {
  std::string out = "epoch,loss,task_loss,penalty,eval_accuracy\n";
  for (const auto& e : log.epochs)
    out += std::to_string(e.epoch) + "," + format_double(e.loss) + "," + format_double(e.task_loss) + "," +
           format_double(e.penalty) + "," + format_double(e.eval_accuracy) + "\n";
  return out;
}

// Writes checkpoint.txt, train_log.csv and result.json under out_dir.
inline TrainArtifacts cmd_train(const std::string& config_path, const fs::path& out_dir,
                                std::optional<std::uint64_t> seed = std::nullopt) {
  RunSpec spec = parse_run_spec(KvConfig::load(config_path));
  if (seed) {
    spec.seed = *seed;
    spec.train.seed = *seed;
  }
  const Dataset ds = load_dataset(spec.data);
  RunOutcome run = run_cell(ds, spec);
  if (!run.row.ok) throw Error("training failed: " + run.row.error);

  TrainArtifacts art;
  art.row = run.row;
  art.log = run.log;
  art.checkpoint = Checkpoint{spec.kind, run.model, ds.feature_names, run.prep, spec.seed, spec.fraction,
                              config_hash(spec)};
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "checkpoint.txt", serialize_checkpoint(art.checkpoint));
  write_file_atomic(out_dir / "train_log.csv", train_log_csv(art.log));
  write_file_atomic(out_dir / "result.json", to_json(art.row).dump(2) + "\n");
  return art;
}

struct EvalContext {
  RunSpec spec;
  Checkpoint checkpoint;
  Matrix x_eval;
  Labels y_eval;
};

// Rebuilds the eval split named by the config and maps it through the
// checkpoint's stored preprocessing.
inline EvalContext load_eval_context(const std::string& checkpoint_path, const std::string& config_path,
                                     std::optional<std::uint64_t> seed) {
  EvalContext ctx;
  ctx.checkpoint = load_checkpoint(checkpoint_path);
  ctx.spec = parse_run_spec(KvConfig::load(config_path));
  if (seed) ctx.spec.seed = *seed;
  const Dataset ds = load_dataset(ctx.spec.data);
  const std::size_t model_dim = std::visit([](const auto& n) { return n.input_dim; }, ctx.checkpoint.model);
  if (ds.dim() != model_dim)
    throw ShapeError("dataset has " + std::to_string(ds.dim()) + " features, checkpoint expects " +
                     std::to_string(model_dim));
  if (!ctx.checkpoint.feature_names.empty() && ctx.checkpoint.feature_names != ds.feature_names) {
    std::string msg = "dataset columns do not match the checkpoint schema:";
    for (std::size_t i = 0; i < model_dim; ++i)
      if (ctx.checkpoint.feature_names[i] != ds.feature_names[i])
        msg += " column " + std::to_string(i) + " is '" + ds.feature_names[i] + "', expected '" +
               ctx.checkpoint.feature_names[i] + "';";
    throw ShapeError(msg);
  }
  const Split split = stratified_split(ds, SplitPlan{}, ctx.spec.seed);
  ctx.x_eval = ctx.checkpoint.prep.apply(gather_rows(ds.features, split.eval));
  for (std::size_t i : split.eval) ctx.y_eval.push_back(ds.labels[i]);
  return ctx;
}

inline nlohmann::json to_json(const TailRatioReport& r, const LogHistogram& h) {
  nlohmann::json j;
  j["format_version"] = kResultsFormatVersion;
  j["model_id"] = r.model_id;
  j["fraction"] = r.fraction;
  j["seed"] = r.seed;
  j["n"] = r.n;
  j["mean"] = r.mean;
  j["p99"] = r.p99;
  j["tau"] = r.tau;
  j["histogram"] = {{"bins", h.counts.size()}, {"scale", "log"}, {"edges", h.edges}, {"counts", h.counts},
                    {"zeros", h.zeros}};
  return j;
}

// Writes tailratio.json under out_dir.
inline TailRatioReport cmd_tailratio(const std::string& checkpoint_path, const std::string& config_path,
                                     const fs::path& out_dir, std::optional<std::uint64_t> seed = std::nullopt) {
  const EvalContext ctx = load_eval_context(checkpoint_path, config_path, seed);
  const auto norms = input_grad_norms(ctx.checkpoint.model, ctx.x_eval, ctx.y_eval, ctx.spec.sensitivity);
  TailRatioReport rep = tail_ratio(norms);
  rep.model_id = to_string(ctx.checkpoint.kind);
  rep.fraction = ctx.checkpoint.fraction;
  rep.seed = ctx.checkpoint.seed;
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "tailratio.json", to_json(rep, log_histogram(rep.norms)).dump(2) + "\n");
  return rep;
}

struct EvalReport {
  double accuracy = 0.0;
  double cross_entropy = 0.0;
  std::size_t n = 0;
};

// Writes eval.json under out_dir.
inline EvalReport cmd_eval(const std::string& checkpoint_path, const std::string& config_path,
                           const fs::path& out_dir, std::optional<std::uint64_t> seed = std::nullopt) {
  const EvalContext ctx = load_eval_context(checkpoint_path, config_path, seed);
  const Matrix logits = predict(ctx.checkpoint.model, ctx.x_eval);
  EvalReport rep{accuracy(logits, ctx.y_eval), mean_cross_entropy(logits, ctx.y_eval), ctx.y_eval.size()};
  fs::create_directories(out_dir);
  nlohmann::json j{{"format_version", kResultsFormatVersion}, {"model_id", to_string(ctx.checkpoint.kind)},
                   {"n", rep.n}, {"eval_accuracy", rep.accuracy}, {"eval_cross_entropy", rep.cross_entropy}};
  write_file_atomic(out_dir / "eval.json", j.dump(2) + "\n");
  return rep;
}

// Comparisons and m come from the plan when one is given, otherwise cr
// against every other model on both metrics. Writes stats.json/stats.txt.
inline StatsReport cmd_stats(const std::string& results_path, const fs::path& out_dir,
                             const std::optional<std::string>& plan_path, std::size_t bonferroni_m) {
  if (!fs::exists(results_path)) throw Error("results file '" + results_path + "' does not exist");
  const auto rows = read_results(results_path);
  std::vector<Comparison> comparisons;
  if (plan_path) {
    const ExperimentPlan plan = parse_plan(KvConfig::load(*plan_path));
    comparisons = plan.comparisons;
    if (!bonferroni_m) bonferroni_m = plan.bonferroni_m;
  }
  StatsReport rep = compute_stats(rows, comparisons, bonferroni_m, true);
  fs::create_directories(out_dir);
  write_stats(out_dir, rep);
  return rep;
}

}  // namespace chainz
