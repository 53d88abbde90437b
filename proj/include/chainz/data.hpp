#pragma once

// Tabular ingestion and the splitting protocol: an 80/20 stratified split
// per seed, nested stratified subsamples of the training side, and
// imputation/standardization fitted on the active training rows only.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "chainz/linalg.hpp"
#include "chainz/loss.hpp"

namespace chainz {

struct Dataset {
  Matrix features;  // n x d
  Labels labels;
  std::vector<std::string> feature_names;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(class_count, 0);
    for (int y : labels) h[static_cast<std::size_t>(y)]++;
    return h;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.features = gather_rows(features, idx);
    for (std::size_t i : idx) out.labels.push_back(labels.at(i));
    out.feature_names = feature_names;
    out.class_count = class_count;
    return out;
  }
};

struct CsvSchema {
  std::string label_column;
  // Required feature columns in output order; empty = every non-label column.
  std::vector<std::string> feature_columns;
};

inline const std::vector<std::string>& pima_feature_names() {
  static const std::vector<std::string> names = {
      "Pregnancies", "Glucose", "BloodPressure", "SkinThickness",
      "Insulin",     "BMI",     "DiabetesPedigreeFunction", "Age"};
  return names;
}

inline CsvSchema pima_schema() { return {"Outcome", pima_feature_names()}; }

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

// Comma-delimited numeric table with a header row. Rows in errors are
// 1-based data rows (the header is row 0); columns are 1-based.
inline Dataset parse_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw ParseError("csv: empty file (no header row)", 0, 0);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_commas(line);

  auto column_of = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("csv: missing column '" + name + "'", 0, 0);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t label_col = column_of(schema.label_column);
  std::vector<std::size_t> feature_cols;
  Dataset ds;
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (c != label_col) {
        feature_cols.push_back(c);
        ds.feature_names.push_back(header[c]);
      }
  } else {
    for (const auto& name : schema.feature_columns) feature_cols.push_back(column_of(name));
    ds.feature_names = schema.feature_columns;
  }
  if (feature_cols.empty()) throw ParseError("csv: no feature columns", 0, 0);

  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw ParseError("csv: row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                           " cells, header has " + std::to_string(header.size()),
                       row, 0);
    auto cell = [&](std::size_t c) {
      const auto v = detail::parse_double(cells[c]);
      if (!v)
        throw ParseError("csv: non-numeric cell '" + cells[c] + "' at row " + std::to_string(row) +
                             ", column " + std::to_string(c + 1) + " ('" + header[c] + "')",
                         row, c + 1);
      return *v;
    };
    for (std::size_t c : feature_cols) values.push_back(cell(c));
    const double y = cell(label_col);
    if (y < 0.0 || y != std::floor(y) || y > 1e6)
      throw ParseError("csv: label '" + cells[label_col] + "' at row " + std::to_string(row) +
                           " is not a nonnegative integer",
                       row, label_col + 1);
    ds.labels.push_back(static_cast<int>(y));
  }
  if (row == 0) throw ParseError("csv: no data rows", 0, 0);
  ds.features = Matrix(row, feature_cols.size(), std::move(values));
  ds.class_count = static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
  return ds;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("csv: cannot open '" + path + "'", 0, 0);
  return parse_csv(in, schema);
}

// Zero-as-missing imputation followed by standardization, both fitted on a
// chosen set of rows and replayed unchanged on any other rows.
struct Preprocessing {
  std::vector<std::size_t> impute_columns;
  std::vector<double> medians;  // parallel to impute_columns
  std::vector<double> means;
  std::vector<double> stds;

  Matrix apply(const Matrix& x) const {
    if (x.cols() != means.size()) throw ShapeError("Preprocessing::apply: column count mismatch");
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t k = 0; k < impute_columns.size(); ++k) {
        double& v = out(i, impute_columns[k]);
        if (v == 0.0) v = medians[k];
      }
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = (out(i, j) - means[j]) / stds[j];
    }
    return out;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median: empty input");
  return quantile(v, 0.5);
}

// Fits on x[fit_rows]. Medians are taken over the nonzero fitted values;
// constant columns keep unit scale.
inline Preprocessing fit_preprocessing(const Matrix& x, std::span<const std::size_t> fit_rows,
                                       std::vector<std::size_t> impute_columns) {
  if (fit_rows.empty()) throw ArgumentError("fit_preprocessing: no rows to fit");
  Preprocessing p;
  p.impute_columns = std::move(impute_columns);
  for (std::size_t c : p.impute_columns) {
    if (c >= x.cols()) throw ArgumentError("fit_preprocessing: impute column out of range");
    std::vector<double> nz;
    for (std::size_t r : fit_rows)
      if (x(r, c) != 0.0) nz.push_back(x(r, c));
    p.medians.push_back(nz.empty() ? 0.0 : median(std::move(nz)));
  }
  Preprocessing imputer = p;
  imputer.means.assign(x.cols(), 0.0);
  imputer.stds.assign(x.cols(), 1.0);
  const Matrix imputed = imputer.apply(gather_rows(x, fit_rows));
  const double n = static_cast<double>(fit_rows.size());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < imputed.rows(); ++i) m += imputed(i, j);
    m /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < imputed.rows(); ++i) var += (imputed(i, j) - m) * (imputed(i, j) - m);
    const double sd = std::sqrt(var / n);
    p.means.push_back(m);
    p.stds.push_back(sd > 0.0 ? sd : 1.0);
  }
  return p;
}

enum class ImputeMode { Off, On };

// Columns whose zeros are physiologically impossible and mark missing values.
inline std::vector<std::size_t> pima_impute_columns() { return {1, 2, 3, 4, 5}; }

struct Preprocessed {
  Dataset data;
  Preprocessing stats;
};

inline Preprocessed preprocess_pima(const Dataset& ds, std::span<const std::size_t> fit_rows,
                                    ImputeMode impute) {
  if (ds.dim() != pima_feature_names().size())
    throw ArgumentError("preprocess_pima: expected 8 feature columns, got " + std::to_string(ds.dim()));
  Preprocessed out;
  out.stats = fit_preprocessing(ds.features, fit_rows,
                                impute == ImputeMode::On ? pima_impute_columns() : std::vector<std::size_t>{});
  out.data = ds;
  out.data.features = out.stats.apply(ds.features);
  return out;
}

struct SplitPlan {
  double train_fraction_of_full = 0.8;
  double eval_fraction = 0.2;
  std::vector<double> data_fractions = {0.05, 0.10, 0.25, 0.50, 1.00};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6};
  bool stratified = true;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

// Distributes `total` over classes in proportion to `quotas` (which sum to
// `total`) by largest remainder; ties go to the lower class index.
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& quotas, std::size_t total) {
  std::vector<std::size_t> out(quotas.size());
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < quotas.size(); ++c) {
    out[c] = static_cast<std::size_t>(std::floor(quotas[c]));
    assigned += out[c];
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a] - std::floor(quotas[a]) > quotas[b] - std::floor(quotas[b]);
  });
  for (std::size_t k = 0; assigned < total && k < order.size(); ++k, ++assigned) out[order[k]]++;
  return out;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> by_class(std::span<const std::size_t> idx,
                                                      std::span<const int> labels, std::size_t classes) {
  std::vector<std::vector<std::size_t>> out(classes);
  for (std::size_t i : idx) out.at(static_cast<std::size_t>(labels[i])).push_back(i);
  return out;
}

}  // namespace detail

// Per-class 80/20 split: the train side holds round(0.8 n) rows and each
// class contributes its largest-remainder share to the eval side.
inline Split stratified_split(const Dataset& ds, const SplitPlan& plan, std::uint64_t seed) {
  const auto hist = ds.class_histogram();
  for (std::size_t c = 0; c < hist.size(); ++c)
    if (hist[c] < 2)
      throw ArgumentError("stratified_split: class " + std::to_string(c) + " has fewer than 2 samples");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::lround(plan.train_fraction_of_full * static_cast<double>(n)));
  const std::size_t n_eval = n - n_train;
  std::vector<double> quotas;
  for (std::size_t h : hist) quotas.push_back(static_cast<double>(h) * static_cast<double>(n_eval) / static_cast<double>(n));
  const auto eval_counts = largest_remainder(quotas, n_eval);

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  auto groups = detail::by_class(all, ds.labels, ds.class_count);
  Rng rng(seed);
  Rng split_rng = rng.fork(0x5EED5);
  Split s;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    split_rng.shuffle(groups[c]);
    s.eval.insert(s.eval.end(), groups[c].begin(), groups[c].begin() + static_cast<std::ptrdiff_t>(eval_counts[c]));
    s.train.insert(s.train.end(), groups[c].begin() + static_cast<std::ptrdiff_t>(eval_counts[c]), groups[c].end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.eval.begin(), s.eval.end());
  return s;
}

// Seeded ordering of `train` in which every prefix is stratified: position t
// goes to the class with the largest deficit p_c * t - taken_c. Prefixes of
// this order give the nested subsamples.
inline std::vector<std::size_t> stratified_order(std::span<const std::size_t> train,
                                                 std::span<const int> labels, std::size_t classes,
                                                 std::uint64_t seed) {
  auto groups = detail::by_class(train, labels, classes);
  Rng rng(seed);
  Rng order_rng = rng.fork(0xF4AC);
  for (auto& g : groups) order_rng.shuffle(g);
  const double n = static_cast<double>(train.size());
  std::vector<std::size_t> taken(classes, 0), out;
  out.reserve(train.size());
  for (std::size_t t = 1; t <= train.size(); ++t) {
    std::size_t best = classes;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) {
      if (taken[c] == groups[c].size()) continue;
      const double deficit = static_cast<double>(groups[c].size()) / n * static_cast<double>(t) -
                             static_cast<double>(taken[c]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = c;
      }
    }
    out.push_back(groups[best][taken[best]++]);
  }
  return out;
}

enum class Rounding { Nearest, Ceiling };

inline std::size_t fraction_size(std::size_t n, double f, Rounding rounding) {
  const double raw = f * static_cast<double>(n);
  // Guard against 0.1 * 610 = 61.000000000000007 style noise before ceil.
  const double snapped = std::abs(raw - std::round(raw)) < 1e-9 ? std::round(raw) : raw;
  return static_cast<std::size_t>(rounding == Rounding::Ceiling ? std::ceil(snapped) : std::lround(snapped));
}

// Stratified subsample of round(f |train|) rows (ceil with Rounding::Ceiling).
// For one seed, smaller fractions are subsets of larger ones.
inline std::vector<std::size_t> subsample_fraction(std::span<const std::size_t> train,
                                                   std::span<const int> labels, double f,
                                                   std::uint64_t seed, Rounding rounding = Rounding::Nearest) {
  if (!(f > 0.0 && f <= 1.0)) throw ArgumentError("subsample_fraction: fraction outside (0, 1]");
  std::size_t classes = 0;
  for (std::size_t i : train) classes = std::max(classes, static_cast<std::size_t>(labels[i]) + 1);
  const auto order = stratified_order(train, labels, classes, seed);
  const std::size_t k = std::min(order.size(), fraction_size(order.size(), f, rounding));
  std::vector<std::size_t> out(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> seen(classes, 0), present(classes, 0);
  for (std::size_t i : train) present[static_cast<std::size_t>(labels[i])]++;
  for (std::size_t i : out) seen[static_cast<std::size_t>(labels[i])]++;
  for (std::size_t c = 0; c < classes; ++c)
    if (present[c] > 0 && seen[c] == 0)
      throw ArgumentError("subsample_fraction: class " + std::to_string(c) + " has no samples at fraction " +
                          std::to_string(f));
  std::sort(out.begin(), out.end());
  return out;
}

// Two Gaussian clusters centred at -/+ (2, 2, ...) with unit-free spread 0.5;
// linearly separable with overwhelming probability.
inline Dataset make_blobs(std::size_t n, std::uint64_t seed, std::size_t dim = 2) {
  if (n < 4 || dim == 0) throw ArgumentError("make_blobs: need n >= 4 and dim >= 1");
  Rng rng(seed);
  Dataset ds;
  ds.features = Matrix(n, dim);
  ds.class_count = 2;
  for (std::size_t j = 0; j < dim; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    const double centre = y == 0 ? -2.0 : 2.0;
    for (std::size_t j = 0; j < dim; ++j) ds.features(i, j) = centre + 0.5 * rng.normal();
    ds.labels.push_back(y);
  }
  return ds;
}

}  // namespace chainz
