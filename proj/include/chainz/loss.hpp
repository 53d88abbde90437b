#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chainz/linalg.hpp"

namespace chainz {

using Labels = std::vector<int>;

// Scalar whose input gradient defines the per-sample sensitivity.
enum class SensitivityTarget {
  CrossEntropy,  // the sample's own loss
  TrueLogit,     // the logit of the sample's label
};

inline void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows)
    throw ShapeError("labels: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw ArgumentError("labels: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(classes) + ")");
}

// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    double m = r[0];
    for (double v : r) m = std::max(m, v);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += (p(i, j) = std::exp(r[j] - m));
    for (std::size_t j = 0; j < r.size(); ++j) p(i, j) /= s;
  }
  return p;
}

// Cross-entropy of every row.
inline std::vector<double> per_sample_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    double m = r[0];
    for (double v : r) m = std::max(m, v);
    double s = 0.0;
    for (double v : r) s += std::exp(v - m);
    out[i] = m + std::log(s) - r[static_cast<std::size_t>(labels[i])];
  }
  return out;
}

inline double mean_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const auto l = per_sample_cross_entropy(logits, labels);
  return mean(l);
}

// d(per-sample target)/d(logits), one row per sample.
inline Matrix target_logit_grad(const Matrix& logits, std::span<const int> labels,
                                SensitivityTarget target) {
  check_labels(labels, logits.rows(), logits.cols());
  Matrix g = target == SensitivityTarget::CrossEntropy ? softmax_rows(logits)
                                                       : Matrix(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    g(i, y) += target == SensitivityTarget::CrossEntropy ? -1.0 : 1.0;
  }
  return g;
}

inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace chainz
