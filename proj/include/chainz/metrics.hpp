#pragma once

// Gradient tail ratio, per-sample input-gradient norms, and the paired
// significance tests used to compare models across seeds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "chainz/baselines.hpp"
#include "chainz/linalg.hpp"
#include "chainz/loss.hpp"
#include "chainz/polynet.hpp"

namespace chainz {

struct TailRatioReport {
  std::vector<double> norms;
  double mean = 0.0;
  double p99 = 0.0;
  double tau = 0.0;
  std::size_t n = 0;
  std::string model_id;
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

// tau = p99 / mean of the per-sample norms.
inline TailRatioReport tail_ratio(std::span<const double> norms) {
  if (norms.empty()) throw ArgumentError("tail_ratio: empty norm sequence");
  for (double v : norms)
    if (!std::isfinite(v) || v < 0.0) throw ArgumentError("tail_ratio: norms must be finite and >= 0");
  TailRatioReport r;
  r.norms.assign(norms.begin(), norms.end());
  r.n = norms.size();
  r.mean = mean(norms);
  if (r.mean == 0.0) throw DegenerateDistributionError("tail_ratio: all norms are zero");
  r.p99 = quantile(norms, 0.99);
  r.tau = r.p99 / r.mean;
  return r;
}

inline constexpr std::size_t kNormChunk = 256;

inline std::vector<double> input_grad_norms(const PolyNetwork& net, const Matrix& x,
                                            std::span<const int> labels,
                                            SensitivityTarget target = SensitivityTarget::CrossEntropy) {
  if (x.rows() == 0) throw ArgumentError("input_grad_norms: empty evaluation set");
  check_labels(labels, x.rows(), net.num_classes());
  std::vector<double> out;
  out.reserve(x.rows());
  const std::size_t classes = net.num_classes();
  for (std::size_t start = 0; start < x.rows(); start += kNormChunk) {
    const std::size_t stop = std::min(x.rows(), start + kNormChunk);
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < stop; ++i) idx.push_back(i);
    const auto [logits, dual] = forward_dual(net, gather_rows(x, idx));
    const Matrix g = target_logit_grad(logits, labels.subspan(start, stop - start), target);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      double sq = 0.0;
      for (std::size_t k = 0; k < net.input_dim; ++k) {
        double acc = 0.0;
        for (std::size_t c = 0; c < classes; ++c) acc += g(b, c) * dual.head_jacobian(b * classes + c, k);
        sq += acc * acc;
      }
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm))
        throw NumericOverflowError("input_grad_norms: non-finite gradient at sample " +
                                   std::to_string(start + b));
      out.push_back(norm);
    }
  }
  return out;
}

inline std::vector<double> input_grad_norms(const BaselineNet& net, const Matrix& x,
                                            std::span<const int> labels,
                                            SensitivityTarget target = SensitivityTarget::CrossEntropy) {
  if (x.rows() == 0) throw ArgumentError("input_grad_norms: empty evaluation set");
  auto norms = baseline_input_grads(net, x, labels, target);
  for (std::size_t i = 0; i < norms.size(); ++i)
    if (!std::isfinite(norms[i]))
      throw NumericOverflowError("input_grad_norms: non-finite gradient at sample " + std::to_string(i));
  return norms;
}

struct LogHistogram {
  std::vector<double> edges;  // bins + 1 log-spaced edges
  std::vector<std::size_t> counts;
  std::size_t zeros = 0;  // norms equal to 0, outside any log bin
};

// Fixed-count, log-spaced histogram spanning [min positive, max].
inline LogHistogram log_histogram(std::span<const double> values, std::size_t bins = 50) {
  LogHistogram h;
  h.counts.assign(bins, 0);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (double v : values) {
    if (v > 0.0) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    } else {
      ++h.zeros;
    }
  }
  if (!(hi > 0.0)) return h;
  if (hi == lo) hi = lo * (1.0 + 1e-12) + 1e-300;
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i <= bins; ++i)
    h.edges.push_back(std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(bins)));
  for (double v : values) {
    if (!(v > 0.0)) continue;
    auto k = static_cast<std::size_t>((std::log(v) - a) / (b - a) * static_cast<double>(bins));
    h.counts[std::min(k, bins - 1)]++;
  }
  return h;
}

enum class StatTest { PairedTOneSided, WilcoxonSignedRank };

inline const char* to_string(StatTest t) {
  return t == StatTest::PairedTOneSided ? "paired-t-one-sided" : "wilcoxon-signed-rank";
}

struct StatTestResult {
  StatTest test = StatTest::PairedTOneSided;
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n_pairs = 0;
  std::size_t bonferroni_m = 1;
  double p_adjusted = 1.0;
};

// Regularized incomplete beta I_x(a, b): continued fraction evaluated with
// the modified Lentz method, using I_x(a, b) = 1 - I_{1-x}(b, a) to stay in
// the fast-converging region.
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ArgumentError("incomplete_beta: a, b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError("incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);

  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 10000; ++m) {
    const double dm = m;
    // even step
    double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    f *= d * c;
    // odd step
    num = -(a + dm) * (a + b + dm) * x / ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::exp(log_front) * f / a;
}

// P(T > t) for Student's t with `dof` degrees of freedom.
inline double student_t_sf(double t, double dof) {
  if (!(dof > 0.0)) throw ArgumentError("student_t_sf: dof must be positive");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? tail : 1.0 - tail;
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

// H1: mean(a - b) > 0.
inline StatTestResult paired_t_one_sided(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("paired_t_one_sided: sequences differ in length");
  if (a.size() < 2) throw ArgumentError("paired_t_one_sided: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double sd = sample_stddev(d);
  if (!(sd > 0.0)) throw ArgumentError("paired_t_one_sided: differences have zero variance");
  const double n = static_cast<double>(d.size());
  StatTestResult r;
  r.test = StatTest::PairedTOneSided;
  r.statistic = mean(d) / (sd / std::sqrt(n));
  r.p_value = student_t_sf(r.statistic, n - 1.0);
  r.n_pairs = d.size();
  r.p_adjusted = r.p_value;
  return r;
}

struct SignedRanks {
  std::vector<double> ranks;  // average ranks of |d|, zeros dropped
  std::vector<bool> positive;
};

inline SignedRanks signed_ranks(std::span<const double> diffs) {
  std::vector<double> nz;
  for (double v : diffs) {
    if (std::isnan(v)) throw ArgumentError("wilcoxon: NaN difference");
    if (v != 0.0) nz.push_back(v);
  }
  std::vector<std::size_t> order(nz.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return std::abs(nz[x]) < std::abs(nz[y]); });
  SignedRanks out;
  out.ranks.assign(nz.size(), 0.0);
  out.positive.assign(nz.size(), false);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(nz[order[j + 1]]) == std::abs(nz[order[i]])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) out.ranks[order[k]] = avg;
    i = j + 1;
  }
  for (std::size_t i = 0; i < nz.size(); ++i) out.positive[i] = nz[i] > 0.0;
  return out;
}

inline constexpr std::size_t kWilcoxonExactLimit = 20;

// H1: median(a - b) > 0. W is the sum of the ranks of positive differences.
// Up to 20 nonzero pairs the p-value counts every sign assignment whose rank
// sum reaches W (a subset-sum count over doubled, hence integral, ranks);
// beyond that a tie- and continuity-corrected normal approximation is used.
inline StatTestResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("wilcoxon_signed_rank: sequences differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const SignedRanks sr = signed_ranks(d);
  const std::size_t n = sr.ranks.size();
  if (n == 0) throw ArgumentError("wilcoxon_signed_rank: all differences are zero");

  StatTestResult r;
  r.test = StatTest::WilcoxonSignedRank;
  r.n_pairs = n;
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (sr.positive[i]) w += sr.ranks[i];
  r.statistic = w;

  if (n <= kWilcoxonExactLimit) {
    std::vector<std::size_t> doubled(n);
    std::size_t total = 0;
    for (std::size_t i = 0; i < n; ++i) total += doubled[i] = static_cast<std::size_t>(std::lround(2.0 * sr.ranks[i]));
    std::vector<std::uint64_t> ways(total + 1, 0);
    ways[0] = 1;
    for (std::size_t r2 : doubled)
      for (std::size_t s = total; s >= r2; --s) {
        ways[s] += ways[s - r2];
        if (s == r2) break;
      }
    const auto w2 = static_cast<std::size_t>(std::lround(2.0 * w));
    std::uint64_t count = 0;
    for (std::size_t s = w2; s <= total; ++s) count += ways[s];
    r.p_value = static_cast<double>(count) / std::ldexp(1.0, static_cast<int>(n));
  } else {
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    double tie_term = 0.0;
    std::vector<double> sorted = sr.ranks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
    const double sigma = std::sqrt(nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0);
    r.p_value = normal_sf((w - mu - 0.5) / sigma);
  }
  r.p_value = std::clamp(r.p_value, 0.0, 1.0);
  r.p_adjusted = r.p_value;
  return r;
}

inline std::vector<StatTestResult> bonferroni(std::vector<StatTestResult> results, std::size_t m) {
  if (m < 1) throw ArgumentError("bonferroni: family size must be at least 1");
  if (m < results.size())
    throw ArgumentError("bonferroni: family size " + std::to_string(m) + " smaller than " +
                        std::to_string(results.size()) + " results");
  for (auto& r : results) {
    r.bonferroni_m = m;
    r.p_adjusted = std::min(1.0, static_cast<double>(m) * r.p_value);
  }
  return results;
}

}  // namespace chainz
