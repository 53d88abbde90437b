#pragma once

// One experiment cell: (model kind, data fraction, seed) -> trained model,
// training log and a ResultRow. Shared by the `train` and `sweep` commands so
// that any sweep row can be reproduced on its own.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "chainz/baselines.hpp"
#include "chainz/data.hpp"
#include "chainz/kvconfig.hpp"
#include "chainz/metrics.hpp"
#include "chainz/polynet.hpp"
#include "chainz/train.hpp"

namespace chainz {

enum class ModelKind { Cr, Vanilla, Dropout, WeightDecay, ReluDreg };

inline const std::vector<ModelKind>& all_model_kinds() {
  static const std::vector<ModelKind> kinds = {ModelKind::Cr, ModelKind::Vanilla, ModelKind::Dropout,
                                               ModelKind::WeightDecay, ModelKind::ReluDreg};
  return kinds;
}

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Cr: return "cr";
    case ModelKind::Vanilla: return "vanilla";
    case ModelKind::Dropout: return "dropout";
    case ModelKind::WeightDecay: return "weight_decay";
    case ModelKind::ReluDreg: return "relu_dreg";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(const std::string& s) {
  for (ModelKind k : all_model_kinds())
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline bool is_polynomial(ModelKind k) { return k == ModelKind::Cr; }

// Per-kind defaults before any config override.
inline TrainConfig default_train_config(ModelKind kind) {
  TrainConfig c;
  c.lambda_dreg = 0.0;
  switch (kind) {
    case ModelKind::Cr:
    case ModelKind::ReluDreg: c.lambda_dreg = 0.1; break;
    case ModelKind::Dropout: c.dropout_rate = 0.2; break;
    case ModelKind::WeightDecay: c.weight_decay = 1e-4; break;
    case ModelKind::Vanilla: break;
  }
  return c;
}

enum class DataSource { Csv, Blobs };

struct DataSpec {
  DataSource source = DataSource::Csv;
  std::string path;
  std::string label_column = "Outcome";
  bool pima_schema = true;
  ImputeMode impute = ImputeMode::On;
  std::size_t blobs_n = 200;
  std::size_t blobs_dim = 2;
  std::uint64_t blobs_seed = 7;
};

using Model = std::variant<PolyNetwork, BaselineNet>;

struct RunSpec {
  DataSpec data;
  ModelKind kind = ModelKind::Cr;
  std::vector<std::size_t> widths = {16, 16};  // polynomial architecture
  bool match_capacity = true;                  // baselines: widths from matched_capacity
  TrainConfig train;
  double fraction = 1.0;
  Rounding rounding = Rounding::Nearest;
  std::uint64_t seed = 1;
  SensitivityTarget sensitivity = SensitivityTarget::CrossEntropy;
};

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

namespace detail {

inline void read_data_spec(const KvConfig& kv, DataSpec& d) {
  const std::string source = kv.get_string("data.source", "csv");
  if (source == "csv") {
    d.source = DataSource::Csv;
    d.path = kv.get_string("data.path");
    d.label_column = kv.get_string("data.label_column", d.label_column);
    const std::string schema = kv.get_string("data.schema", "pima");
    if (schema != "pima" && schema != "generic") throw ConfigError("data.schema", "expected pima|generic");
    d.pima_schema = schema == "pima";
    d.impute = kv.get_bool("data.impute", true) ? ImputeMode::On : ImputeMode::Off;
  } else if (source == "blobs") {
    d.source = DataSource::Blobs;
    d.blobs_n = kv.get_u64("data.blobs.n", d.blobs_n);
    d.blobs_dim = kv.get_u64("data.blobs.dim", d.blobs_dim);
    d.blobs_seed = kv.get_u64("data.blobs.seed", d.blobs_seed);
    d.pima_schema = false;
    d.impute = ImputeMode::Off;
  } else {
    throw ConfigError("data.source", "expected csv|blobs, got '" + source + "'");
  }
}

inline void write_data_spec(KvConfig& kv, const DataSpec& d) {
  if (d.source == DataSource::Csv) {
    kv.set("data.source", "csv");
    kv.set("data.path", d.path);
    kv.set("data.label_column", d.label_column);
    kv.set("data.schema", d.pima_schema ? "pima" : "generic");
    kv.set("data.impute", d.impute == ImputeMode::On ? "on" : "off");
  } else {
    kv.set("data.source", "blobs");
    kv.set("data.blobs.n", std::to_string(d.blobs_n));
    kv.set("data.blobs.dim", std::to_string(d.blobs_dim));
    kv.set("data.blobs.seed", std::to_string(d.blobs_seed));
  }
}

// Reads train.<key> (or <prefix><key> when given) on top of `c`.
inline void read_train_keys(const KvConfig& kv, const std::string& prefix, TrainConfig& c) {
  auto key = [&](const char* k) { return prefix + k; };
  c.lambda_dreg = kv.get_double(key("lambda_dreg"), c.lambda_dreg);
  c.learning_rate = kv.get_double(key("learning_rate"), c.learning_rate);
  c.batch_size = kv.get_u64(key("batch_size"), c.batch_size);
  c.epochs = kv.get_u64(key("epochs"), c.epochs);
  if (kv.has(key("optimizer"))) {
    const std::string o = kv.get_string(key("optimizer"));
    if (o == "adam") c.optimizer = OptimizerKind::Adam;
    else if (o == "sgd") c.optimizer = OptimizerKind::Sgd;
    else throw ConfigError(key("optimizer"), "expected adam|sgd, got '" + o + "'");
  }
  c.beta1 = kv.get_double(key("beta1"), c.beta1);
  c.beta2 = kv.get_double(key("beta2"), c.beta2);
  c.epsilon = kv.get_double(key("epsilon"), c.epsilon);
  c.weight_decay = kv.get_double(key("weight_decay"), c.weight_decay);
  c.dropout_rate = kv.get_double(key("dropout_rate"), c.dropout_rate);
  c.penalize_head = kv.get_bool(key("penalize_head"), c.penalize_head);
  c.patience = kv.get_u64(key("patience"), c.patience);
  try {
    c.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(prefix + "*", e.what());
  }
}

inline void write_train_keys(KvConfig& kv, const TrainConfig& c) {
  kv.set("train.lambda_dreg", format_double(c.lambda_dreg));
  kv.set("train.learning_rate", format_double(c.learning_rate));
  kv.set("train.batch_size", std::to_string(c.batch_size));
  kv.set("train.epochs", std::to_string(c.epochs));
  kv.set("train.optimizer", c.optimizer == OptimizerKind::Adam ? "adam" : "sgd");
  kv.set("train.beta1", format_double(c.beta1));
  kv.set("train.beta2", format_double(c.beta2));
  kv.set("train.epsilon", format_double(c.epsilon));
  kv.set("train.weight_decay", format_double(c.weight_decay));
  kv.set("train.dropout_rate", format_double(c.dropout_rate));
  kv.set("train.penalize_head", c.penalize_head ? "true" : "false");
  kv.set("train.patience", std::to_string(c.patience));
}

inline std::vector<std::size_t> read_widths(const KvConfig& kv, const std::string& key,
                                            std::vector<std::size_t> fallback) {
  if (!kv.has(key)) return fallback;
  std::vector<std::size_t> w;
  for (std::uint64_t v : kv.get_u64_list(key)) {
    if (v == 0) throw ConfigError(key, "layer widths must be positive");
    w.push_back(static_cast<std::size_t>(v));
  }
  return w;
}

inline SensitivityTarget read_sensitivity(const KvConfig& kv) {
  const std::string s = kv.get_string("metrics.sensitivity", "loss");
  if (s == "loss") return SensitivityTarget::CrossEntropy;
  if (s == "logit") return SensitivityTarget::TrueLogit;
  throw ConfigError("metrics.sensitivity", "expected loss|logit, got '" + s + "'");
}

inline Rounding read_rounding(const KvConfig& kv, const std::string& key, Rounding fallback) {
  if (!kv.has(key)) return fallback;
  const std::string s = kv.get_string(key);
  if (s == "nearest") return Rounding::Nearest;
  if (s == "ceiling") return Rounding::Ceiling;
  throw ConfigError(key, "expected nearest|ceiling, got '" + s + "'");
}

inline void check_format_version(const KvConfig& kv) {
  const auto v = kv.get_u64("format_version", 1);
  if (v != 1) throw ConfigError("format_version", "unsupported version " + std::to_string(v));
}

}  // namespace detail

// Parses a single-run config. Every key must be recognised.
inline RunSpec parse_run_spec(const KvConfig& kv) {
  detail::check_format_version(kv);
  RunSpec s;
  detail::read_data_spec(kv, s.data);
  const std::string kind = kv.get_string("model.kind");
  const auto k = parse_model_kind(kind);
  if (!k) throw ConfigError("model.kind", "unknown model kind '" + kind + "'");
  s.kind = *k;
  s.widths = detail::read_widths(kv, "model.widths", s.widths);
  s.match_capacity = kv.get_bool("model.match_capacity", s.match_capacity);
  s.train = default_train_config(s.kind);
  detail::read_train_keys(kv, "train.", s.train);
  s.fraction = kv.get_double("split.fraction", s.fraction);
  if (!(s.fraction > 0.0 && s.fraction <= 1.0)) throw ConfigError("split.fraction", "must lie in (0, 1]");
  s.rounding = detail::read_rounding(kv, "split.rounding", s.rounding);
  s.seed = kv.get_u64("split.seed", s.seed);
  s.train.seed = s.seed;
  s.sensitivity = detail::read_sensitivity(kv);
  kv.reject_unused();
  return s;
}

// Fully explicit config for `spec`; parse_run_spec(to_config(spec)) == spec.
inline KvConfig to_config(const RunSpec& s) {
  KvConfig kv;
  kv.set("format_version", "1");
  detail::write_data_spec(kv, s.data);
  kv.set("model.kind", to_string(s.kind));
  kv.set("model.widths", join_sizes(s.widths));
  kv.set("model.match_capacity", s.match_capacity ? "true" : "false");
  detail::write_train_keys(kv, s.train);
  kv.set("split.fraction", format_double(s.fraction));
  kv.set("split.rounding", s.rounding == Rounding::Ceiling ? "ceiling" : "nearest");
  kv.set("split.seed", std::to_string(s.seed));
  kv.set("metrics.sensitivity", s.sensitivity == SensitivityTarget::CrossEntropy ? "loss" : "logit");
  return kv;
}

inline std::uint64_t config_hash(const RunSpec& s) { return to_config(s).hash(); }

inline Dataset load_dataset(const DataSpec& d) {
  if (d.source == DataSource::Blobs) return make_blobs(d.blobs_n, d.blobs_seed, d.blobs_dim);
  const CsvSchema schema = d.pima_schema ? pima_schema() : CsvSchema{d.label_column, {}};
  return load_csv(d.path, schema);
}

struct ResultRow {
  std::string model_id;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double eval_accuracy = 0.0;
  double tau = 0.0;
  double mean_norm = 0.0;
  double p99_norm = 0.0;
  double final_task_loss = 0.0;
  double final_penalty = 0.0;
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  double wall_time_seconds = 0.0;
};

struct CellData {
  Split split;
  std::vector<std::size_t> train_rows;  // the fraction's subsample
  Preprocessing prep;
  TrainData data;
};

// Split, subsample and fit preprocessing on the active training rows.
inline CellData prepare_cell(const Dataset& ds, const RunSpec& spec) {
  CellData c;
  c.split = stratified_split(ds, SplitPlan{}, spec.seed);
  c.train_rows = subsample_fraction(c.split.train, ds.labels, spec.fraction, spec.seed, spec.rounding);
  c.prep = fit_preprocessing(ds.features, c.train_rows,
                             spec.data.pima_schema && spec.data.impute == ImputeMode::On
                                 ? pima_impute_columns()
                                 : std::vector<std::size_t>{});
  c.data.x_train = c.prep.apply(gather_rows(ds.features, c.train_rows));
  c.data.x_eval = c.prep.apply(gather_rows(ds.features, c.split.eval));
  for (std::size_t i : c.train_rows) c.data.y_train.push_back(ds.labels[i]);
  for (std::size_t i : c.split.eval) c.data.y_eval.push_back(ds.labels[i]);
  return c;
}

inline CapacityMatch baseline_widths(const RunSpec& spec, std::size_t input_dim, std::size_t classes) {
  if (!spec.match_capacity) {
    CapacityMatch m;
    m.widths = spec.widths;
    m.poly_params = poly_parameter_count({input_dim, spec.widths, classes});
    m.baseline_params = baseline_parameter_count(input_dim, spec.widths, classes);
    m.relative_gap = (static_cast<double>(m.baseline_params) - static_cast<double>(m.poly_params)) /
                     static_cast<double>(m.poly_params);
    m.within_tolerance = std::abs(m.relative_gap) <= kCapacityTolerance;
    return m;
  }
  return matched_capacity({input_dim, spec.widths, classes});
}

inline Model init_model(const RunSpec& spec, std::size_t input_dim, std::size_t classes,
                        CapacityMatch* capacity = nullptr) {
  Rng rng = Rng(spec.seed).fork(0x1417);
  if (is_polynomial(spec.kind)) return make_poly_network(input_dim, spec.widths, classes, rng);
  const CapacityMatch m = baseline_widths(spec, input_dim, classes);
  if (capacity) *capacity = m;
  return make_baseline_network(input_dim, m.widths, classes, rng, spec.train.dropout_rate);
}

inline std::vector<double> input_grad_norms(const Model& model, const Matrix& x, std::span<const int> y,
                                            SensitivityTarget target) {
  return std::visit([&](const auto& net) { return input_grad_norms(net, x, y, target); }, model);
}

inline Matrix predict(const Model& model, const Matrix& x) {
  return std::visit([&](const auto& net) { return predict(net, x); }, model);
}

struct RunOutcome {
  ResultRow row;
  Model model;
  TrainLog log;
  Preprocessing prep;
  CapacityMatch capacity;
};

// Trains one cell. Divergence and degenerate tau are recorded in the row
// (ok = false) rather than thrown.
inline RunOutcome run_cell(const Dataset& ds, const RunSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutcome out;
  out.row.model_id = to_string(spec.kind);
  out.row.fraction = spec.fraction;
  out.row.seed = spec.seed;
  const CellData cell = prepare_cell(ds, spec);
  out.prep = cell.prep;
  out.row.n_train = cell.train_rows.size();
  out.row.n_eval = cell.split.eval.size();
  out.model = init_model(spec, ds.dim(), ds.class_count, &out.capacity);
  TrainConfig cfg = spec.train;
  cfg.seed = spec.seed;
  try {
    std::visit(
        [&](auto& net) {
          auto res = train(std::move(net), cell.data, cfg);
          net = std::move(res.model);
          out.log = std::move(res.log);
        },
        out.model);
    out.row.eval_accuracy = accuracy(predict(out.model, cell.data.x_eval), cell.data.y_eval);
    out.row.final_task_loss = out.log.last().task_loss;
    out.row.final_penalty = out.log.last().penalty;
    const auto norms = input_grad_norms(out.model, cell.data.x_eval, cell.data.y_eval, spec.sensitivity);
    const TailRatioReport tr = tail_ratio(norms);
    out.row.tau = tr.tau;
    out.row.mean_norm = tr.mean;
    out.row.p99_norm = tr.p99;
  } catch (const Error& e) {
    out.row.ok = false;
    out.row.error = e.what();
  }
  out.row.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace chainz
