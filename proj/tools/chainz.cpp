#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "chainz/commands.hpp"

using namespace chainz;

int main(int argc, char** argv) {
  CLI::App app{"chainz: polynomial networks with Jacobian regularization"};
  app.require_subcommand(1);

  std::string config, plan, out = ".", checkpoint, results;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0, stop_after = 0, bonferroni_m = 0;
  bool resume = false, quiet = false;

  auto* train = app.add_subcommand("train", "train one model from a run config");
  train->add_option("--config", config, "run config")->required();
  train->add_option("--out", out, "output directory");
  train->add_option("--seed", seed, "override split.seed");

  auto* sweep = app.add_subcommand("sweep", "run every (model, fraction, seed) cell of a plan");
  sweep->add_option("--plan", plan, "sweep plan")->required();
  sweep->add_option("--out", out, "output directory");
  sweep->add_option("--workers", workers, "concurrent runs (default: plan value)");
  sweep->add_flag("--resume", resume, "skip cells already in results.jsonl");
  sweep->add_flag("--quiet", quiet, "no per-cell progress");
  sweep->add_option("--stop-after", stop_after, "stop after this many new cells")->group("");

  auto* tailratio = app.add_subcommand("tailratio", "tail ratio of input-gradient norms on the eval split");
  tailratio->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  tailratio->add_option("--config", config, "run config naming the dataset and split")->required();
  tailratio->add_option("--out", out, "output directory");
  tailratio->add_option("--seed", seed, "override split.seed");

  auto* stats = app.add_subcommand("stats", "paired tests over a results table");
  stats->add_option("--results", results, "results.jsonl")->required();
  stats->add_option("--plan", plan, "plan declaring the comparisons");
  stats->add_option("--out", out, "output directory");
  stats->add_option("--bonferroni-m", bonferroni_m, "Bonferroni family size (default: comparison count)");

  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on the eval split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--config", config, "run config naming the dataset and split")->required();
  eval->add_option("--out", out, "output directory");
  eval->add_option("--seed", seed, "override split.seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto art = cmd_train(config, out, seed);
      std::printf("%s fraction=%g seed=%llu eval_accuracy=%.4f tau=%.5f\n", art.row.model_id.c_str(),
                  art.row.fraction, static_cast<unsigned long long>(art.row.seed), art.row.eval_accuracy,
                  art.row.tau);
    } else if (*sweep) {
      SweepOptions opts;
      opts.out_dir = out;
      opts.workers = workers;
      opts.resume = resume;
      opts.stop_after = stop_after;
      if (!quiet) opts.log = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };
      const ExperimentPlan p = parse_plan(KvConfig::load(plan));
      const SweepSummary s = run_sweep(p, opts);
      std::printf("cells=%zu skipped=%zu computed=%zu failed=%zu finalized=%s\n", s.total, s.skipped, s.computed,
                  s.failed, s.finalized ? "yes" : "no");
      if (s.finalized) {
        std::ifstream in(fs::path(out) / "stats.txt");
        std::cout << in.rdbuf();
      }
    } else if (*tailratio) {
      const auto r = cmd_tailratio(checkpoint, config, out, seed);
      std::printf("n=%zu mean=%.6g p99=%.6g tau=%.6f\n", r.n, r.mean, r.p99, r.tau);
    } else if (*stats) {
      const auto rep = cmd_stats(results, out, plan.empty() ? std::nullopt : std::optional<std::string>(plan),
                                 bonferroni_m);
      std::cout << to_text(rep);
    } else if (*eval) {
      const auto r = cmd_eval(checkpoint, config, out, seed);
      std::printf("n=%zu eval_accuracy=%.4f eval_cross_entropy=%.6f\n", r.n, r.accuracy, r.cross_entropy);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "chainz: invalid config: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "chainz: %s\n", e.what());
    return 1;
  }
  return 0;
}
