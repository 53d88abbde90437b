#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace chainz;
using namespace testing_support;

namespace {

std::vector<double> one_to_hundred() {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}

// One-sided p by brute force over all 2^n sign assignments of the ranks.
double enumerated_p(const std::vector<double>& ranks, double w) {
  const std::size_t n = ranks.size();
  std::size_t hits = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += ranks[i];
    if (s >= w - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(std::size_t{1} << n);
}

}  // namespace

TEST(TailRatio, OneToHundred) {
  const auto v = one_to_hundred();
  const TailRatioReport r = tail_ratio(v);
  EXPECT_NEAR(r.p99, 99.01, 1e-12);
  EXPECT_NEAR(r.mean, 50.5, 1e-12);
  EXPECT_NEAR(r.tau, 99.01 / 50.5, 1e-12);
  EXPECT_NEAR(r.tau, 1.96059, 1e-5);
}

TEST(TailRatio, ConstantIsExactlyOne) {
  const std::vector<double> v{1, 1, 1, 1};
  EXPECT_EQ(tail_ratio(v).tau, 1.0);
  const std::vector<double> single{0.37};
  EXPECT_EQ(tail_ratio(single).tau, 1.0);
}

TEST(TailRatio, ScaleAndPermutationInvariant) {
  Rng rng(71);
  std::vector<double> v(257);
  for (double& x : v) x = std::exp(rng.normal());
  const double tau = tail_ratio(v).tau;
  for (double c : {1e-3, 0.5, 7.0, 1e4}) {
    std::vector<double> s = v;
    for (double& x : s) x *= c;
    EXPECT_NEAR(tail_ratio(s).tau, tau, 1e-12);
  }
  rng.shuffle(v);
  EXPECT_NEAR(tail_ratio(v).tau, tau, 1e-12);
}

TEST(TailRatio, AtLeastOneForSkewedSamples) {
  Rng rng(72);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(200);
    for (double& x : v) x = std::exp(rng.normal());
    EXPECT_GE(tail_ratio(v).tau, 1.0);
  }
}

TEST(TailRatio, Errors) {
  const std::vector<double> empty, zeros{0, 0, 0}, neg{1, -1}, inf{1, INFINITY};
  EXPECT_THROW(tail_ratio(empty), ArgumentError);
  EXPECT_THROW(tail_ratio(zeros), DegenerateDistributionError);
  EXPECT_THROW(tail_ratio(neg), ArgumentError);
  EXPECT_THROW(tail_ratio(inf), ArgumentError);
}

TEST(InputGradNorms, PolyMatchesFiniteDifferences) {
  Rng rng(73);
  const PolyNetwork net = random_poly_net(rng, 4, {5, 5}, 3);
  const Matrix x = random_matrix(rng, 6, 4);
  const Labels y = random_labels(rng, 6, 3);
  for (auto target : {SensitivityTarget::CrossEntropy, SensitivityTarget::TrueLogit}) {
    const auto norms = input_grad_norms(net, x, y, target);
    for (std::size_t b = 0; b < 6; ++b) {
      Matrix row = gather_rows(x, std::vector<std::size_t>{b});
      const Labels yb{y[b]};
      auto f = [&] {
        const Matrix l = forward_values(net, row).first;
        return target == SensitivityTarget::CrossEntropy ? mean_cross_entropy(l, yb)
                                                         : l(0, static_cast<std::size_t>(yb[0]));
      };
      const Matrix g = fd_grad(row, f);
      EXPECT_LE(rel_err(norms[b], std::sqrt(frobenius_sq(g)), 1e-4), 1e-5);
    }
  }
}

TEST(InputGradNorms, ChunkingDoesNotChangeResults) {
  Rng rng(74);
  const PolyNetwork net = random_poly_net(rng, 3, {4}, 2);
  const Matrix x = random_matrix(rng, kNormChunk + 17, 3);
  const Labels y = random_labels(rng, x.rows(), 2);
  const auto all = input_grad_norms(net, x, y);
  const std::vector<std::size_t> tail_idx{kNormChunk + 3};
  const auto one = input_grad_norms(net, gather_rows(x, tail_idx), Labels{y[kNormChunk + 3]});
  EXPECT_DOUBLE_EQ(one[0], all[kNormChunk + 3]);
}

TEST(InputGradNorms, ZeroHeadGivesZeroNormsAndDegenerateTau) {
  Rng rng(75);
  PolyNetwork net = random_poly_net(rng, 3, {4}, 2);
  net.head_weights = Matrix(2, 4);
  const Matrix x = random_matrix(rng, 5, 3);
  const auto norms = input_grad_norms(net, x, random_labels(rng, 5, 2));
  for (double n : norms) EXPECT_EQ(n, 0.0);
  EXPECT_THROW(tail_ratio(norms), DegenerateDistributionError);
}

TEST(LogHistogram, FiftyLogBinsCoverEveryPositiveValue) {
  const auto v = one_to_hundred();
  const LogHistogram h = log_histogram(v);
  ASSERT_EQ(h.counts.size(), 50u);
  ASSERT_EQ(h.edges.size(), 51u);
  EXPECT_NEAR(h.edges.front(), 1.0, 1e-12);
  EXPECT_NEAR(h.edges.back(), 100.0, 1e-9);
  EXPECT_NEAR(h.edges[25], 10.0, 1e-9);
  EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), 100u);
  const std::vector<double> with_zero{0, 1, 2};
  EXPECT_EQ(log_histogram(with_zero).zeros, 1u);
}

TEST(StudentT, SurvivalFunctionMatchesReference) {
  // Reference values from scipy.stats.t.sf.
  EXPECT_NEAR(student_t_sf(2.5, 7), 0.020496109292876437, 1e-13);
  EXPECT_NEAR(student_t_sf(-1.3, 12), 0.8909914144582428, 1e-13);
  EXPECT_NEAR(student_t_sf(0.7, 1), 0.3055998877857853, 1e-13);
  EXPECT_EQ(student_t_sf(0.0, 5), 0.5);
}

TEST(PairedT, HandExample) {
  const std::vector<double> a{1.5, 2.5, 2.0, 2.0}, b{1, 1, 1, 1};
  const StatTestResult r = paired_t_one_sided(a, b);
  // mean 1, sample var 1/6 -> t = 1 / sqrt(1/24)
  EXPECT_NEAR(r.statistic, 4.898979485566356, 1e-12);
  // mpmath: I_{3/(3+t^2)}(3/2, 1/2) / 2
  EXPECT_NEAR(r.p_value, 0.0081383017297142777, 1e-13);
  EXPECT_EQ(r.n_pairs, 4u);
  EXPECT_STREQ(to_string(r.test), "paired-t-one-sided");
}

TEST(PairedT, SwapMapsPToOneMinusP) {
  Rng rng(76);
  std::vector<double> a(8), b(8);
  for (std::size_t i = 0; i < 8; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
  }
  EXPECT_NEAR(paired_t_one_sided(a, b).p_value + paired_t_one_sided(b, a).p_value, 1.0, 1e-12);
}

TEST(PairedT, Degenerate) {
  const std::vector<double> a{2, 2, 2}, b{1, 1, 1}, one{1};
  EXPECT_THROW(paired_t_one_sided(a, b), ArgumentError);
  EXPECT_THROW(paired_t_one_sided(one, one), ArgumentError);
  EXPECT_THROW(paired_t_one_sided(a, one), ArgumentError);
}

TEST(Wilcoxon, SmallExamples) {
  const std::vector<double> zeros{0, 0, 0}, up{1, 2, 3}, down{-1, -2, -3};
  const auto r = wilcoxon_signed_rank(up, zeros);
  EXPECT_EQ(r.statistic, 6.0);
  EXPECT_EQ(r.p_value, 1.0 / 8);
  EXPECT_EQ(wilcoxon_signed_rank(down, zeros).p_value, 1.0);
  EXPECT_STREQ(to_string(r.test), "wilcoxon-signed-rank");
}

TEST(Wilcoxon, TiesUseAverageRanks) {
  const std::vector<double> d{1, 1, -1}, z{0, 0, 0};
  const auto r = wilcoxon_signed_rank(d, z);
  EXPECT_EQ(r.statistic, 4.0);
  EXPECT_EQ(r.p_value, enumerated_p({2, 2, 2}, 4.0));
  EXPECT_EQ(r.p_value, 0.5);
}

TEST(Wilcoxon, ExactMatchesEnumerationForEverySignPattern) {
  Rng rng(77);
  for (std::size_t n = 1; n <= 10; ++n) {
    std::vector<double> mags(n);
    for (auto& m : mags) m = 0.1 + rng.uniform();
    const std::vector<double> zeros(n, 0.0);
    std::vector<double> ranks = signed_ranks(mags).ranks;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
      std::vector<double> d(n);
      double w = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d[i] = mask >> i & 1 ? mags[i] : -mags[i];
        if (mask >> i & 1) w += ranks[i];
      }
      const auto r = wilcoxon_signed_rank(d, zeros);
      ASSERT_EQ(r.statistic, w);
      ASSERT_EQ(r.p_value, enumerated_p(ranks, w)) << "n=" << n << " mask=" << mask;
    }
  }
}

TEST(Wilcoxon, ZeroDifferencesDropped) {
  const std::vector<double> d{0, 1, 2, 3, 0}, z(5, 0.0);
  const auto r = wilcoxon_signed_rank(d, z);
  EXPECT_EQ(r.n_pairs, 3u);
  EXPECT_EQ(r.p_value, 1.0 / 8);
  EXPECT_THROW(wilcoxon_signed_rank(z, z), ArgumentError);
}

TEST(Wilcoxon, NormalApproximationMatchesReference) {
  // scipy.stats.wilcoxon(d, alternative="greater", method="approx", correction=True)
  const std::vector<double> d{1, 2, 2, -4, 5, -5, 7, -8, 9, 10, 11, -12, 13,
                              14, 15, -16, 17, 18, 19, -20, 21, 22, 23, -24, 25};
  const std::vector<double> z(d.size(), 0.0);
  const auto r = wilcoxon_signed_rank(d, z);
  EXPECT_EQ(r.statistic, 235.5);
  EXPECT_NEAR(r.p_value, 0.025532825572186765, 1e-12);
}

TEST(Bonferroni, Examples) {
  StatTestResult a, b;
  a.p_value = 0.01;
  b.p_value = 0.6;
  const auto r = bonferroni({a, b}, 3);
  EXPECT_NEAR(r[0].p_adjusted, 0.03, 1e-15);
  EXPECT_EQ(r[0].bonferroni_m, 3u);
  EXPECT_EQ(bonferroni({b}, 2)[0].p_adjusted, 1.0);
  EXPECT_EQ(bonferroni({a}, 1)[0].p_adjusted, 0.01);
}

TEST(Bonferroni, ReportedPimaValuesSurviveTwoComparisons) {
  StatTestResult xgb, svm;
  xgb.p_value = 0.0047;
  svm.p_value = 0.0039;
  for (const auto& r : bonferroni({xgb, svm}, 2)) EXPECT_LT(r.p_adjusted, 0.05);
}

TEST(Bonferroni, FamilySmallerThanResultsRejected) {
  StatTestResult a;
  EXPECT_THROW(bonferroni({a, a}, 1), ArgumentError);
  EXPECT_THROW(bonferroni({}, 0), ArgumentError);
}
