#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace chainz;
using namespace testing_support;

namespace {

Dataset toy(std::size_t n0, std::size_t n1) {
  Dataset ds;
  ds.class_count = 2;
  ds.features = Matrix(n0 + n1, 1);
  for (std::size_t i = 0; i < n0 + n1; ++i) {
    ds.features(i, 0) = static_cast<double>(i);
    ds.labels.push_back(i < n0 ? 0 : 1);
  }
  ds.feature_names = {"v"};
  return ds;
}

const Dataset& pima() {
  static const Dataset ds = load_csv(pima_path().string(), pima_schema());
  return ds;
}

}  // namespace

TEST(Csv, ToyFileParsesExactly) {
  std::istringstream in("a,b,label\n1,2.5,0\n-3,4e1,1\n0.25, 7 ,1\n");
  const Dataset ds = parse_csv(in, CsvSchema{"label", {}});
  EXPECT_EQ(ds.features, (Matrix{{1, 2.5}, {-3, 40}, {0.25, 7}}));
  EXPECT_EQ(ds.labels, (Labels{0, 1, 1}));
  EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.class_count, 2u);
}

TEST(Csv, SchemaSelectsAndOrdersColumns) {
  std::istringstream in("x,y,z,t\n1,2,3,0\n4,5,6,1\n");
  const Dataset ds = parse_csv(in, CsvSchema{"t", {"z", "x"}});
  EXPECT_EQ(ds.features, (Matrix{{3, 1}, {6, 4}}));
}

TEST(Csv, NonNumericCellNamesRow) {
  std::istringstream in("a,label\n1,0\n2,0\n3,1\n4,1\nabc,0\n6,1\n");
  try {
    parse_csv(in, CsvSchema{"label", {}});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 5u);
    EXPECT_EQ(e.column(), 1u);
    EXPECT_NE(std::string(e.what()).find("row 5"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("abc"), std::string::npos);
  }
}

TEST(Csv, StructuralErrors) {
  std::istringstream empty("");
  EXPECT_THROW(parse_csv(empty, CsvSchema{"label", {}}), ParseError);
  std::istringstream missing("a,b\n1,2\n");
  EXPECT_THROW(parse_csv(missing, CsvSchema{"label", {}}), ParseError);
  std::istringstream ragged("a,label\n1,0\n2\n");
  EXPECT_THROW(parse_csv(ragged, CsvSchema{"label", {}}), ParseError);
  std::istringstream bad_label("a,label\n1,0.5\n");
  EXPECT_THROW(parse_csv(bad_label, CsvSchema{"label", {}}), ParseError);
}

TEST(Pima, ShapeAndClasses) {
  const Dataset& ds = pima();
  EXPECT_EQ(ds.size(), 768u);
  EXPECT_EQ(ds.dim(), 8u);
  EXPECT_EQ(ds.class_count, 2u);
  EXPECT_EQ(ds.class_histogram(), (std::vector<std::size_t>{500, 268}));
  EXPECT_EQ(ds.feature_names, pima_feature_names());
}

TEST(Preprocess, ImputesZerosWithMedianOfNonzeros) {
  const Matrix x{{0}, {2}, {4}};
  const std::vector<std::size_t> rows{0, 1, 2};
  const Preprocessing p = fit_preprocessing(x, rows, {0});
  EXPECT_EQ(p.medians, (std::vector<double>{3.0}));
  const Matrix out = p.apply(x);
  // imputed column [3, 2, 4]: mean 3, population std sqrt(2/3)
  EXPECT_NEAR(out(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(out(1, 0), -1 / std::sqrt(2.0 / 3), 1e-12);
}

TEST(Preprocess, ImputeOffPassesZerosThrough) {
  const Matrix x{{0}, {2}, {4}};
  const std::vector<std::size_t> rows{0, 1, 2};
  const Preprocessing p = fit_preprocessing(x, rows, {});
  EXPECT_TRUE(p.medians.empty());
  EXPECT_NEAR(p.means[0], 2.0, 1e-15);
}

TEST(Preprocess, PimaTrainColumnsStandardised) {
  const Dataset& ds = pima();
  const Split split = stratified_split(ds, SplitPlan{}, 1);
  for (auto mode : {ImputeMode::On, ImputeMode::Off}) {
    const Preprocessed pp = preprocess_pima(ds, split.train, mode);
    const Matrix t = gather_rows(pp.data.features, split.train);
    for (std::size_t j = 0; j < 8; ++j) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < t.rows(); ++i) m += t(i, j);
      m /= static_cast<double>(t.rows());
      for (std::size_t i = 0; i < t.rows(); ++i) v += (t(i, j) - m) * (t(i, j) - m);
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / static_cast<double>(t.rows()), 1.0, 1e-12);
    }
    if (mode == ImputeMode::On) {
      ASSERT_EQ(pp.stats.medians.size(), 5u);
      for (double med : pp.stats.medians) EXPECT_GT(med, 0.0);
    }
  }
}

TEST(Preprocess, FitUsesOnlyTrainingRows) {
  // Changing eval rows must not change the fitted statistics.
  Dataset ds = pima();
  const Split split = stratified_split(ds, SplitPlan{}, 2);
  const Preprocessing before = fit_preprocessing(ds.features, split.train, pima_impute_columns());
  for (std::size_t i : split.eval)
    for (std::size_t j = 0; j < 8; ++j) ds.features(i, j) = 1e6;
  const Preprocessing after = fit_preprocessing(ds.features, split.train, pima_impute_columns());
  EXPECT_EQ(before.means, after.means);
  EXPECT_EQ(before.stds, after.stds);
  EXPECT_EQ(before.medians, after.medians);
}

TEST(Split, LargestRemainderOnSixFour) {
  // n_train = round(0.8 * 10) = 8, so eval gets 2 rows; quotas 1.2 and 0.8.
  const Split s = stratified_split(toy(6, 4), SplitPlan{}, 3);
  ASSERT_EQ(s.eval.size(), 2u);
  std::size_t ones = 0;
  for (auto i : s.eval) ones += i >= 6;
  EXPECT_EQ(ones, 1u);
  EXPECT_EQ(largest_remainder({1.2, 0.8}, 2), (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(largest_remainder({2.4, 1.6}, 4), (std::vector<std::size_t>{2, 2}));
}

TEST(Split, PartitionDeterministicAndStratified) {
  const Dataset& ds = pima();
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Split s = stratified_split(ds, SplitPlan{}, seed);
    EXPECT_EQ(s.train.size(), 614u);
    EXPECT_EQ(s.eval.size(), 154u);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    for (auto i : s.eval) EXPECT_TRUE(all.insert(i).second) << "index " << i << " in both sets";
    EXPECT_EQ(all.size(), 768u);
    std::size_t pos = 0;
    for (auto i : s.eval) pos += ds.labels[i];
    EXPECT_EQ(pos, 54u);  // 268 * 154 / 768 = 53.74
    const Split again = stratified_split(ds, SplitPlan{}, seed);
    EXPECT_EQ(again.train, s.train);
    EXPECT_EQ(again.eval, s.eval);
  }
  EXPECT_NE(stratified_split(ds, SplitPlan{}, 1).eval, stratified_split(ds, SplitPlan{}, 2).eval);
}

TEST(Split, RejectsSingletonClass) {
  EXPECT_THROW(stratified_split(toy(5, 1), SplitPlan{}, 1), ArgumentError);
}

TEST(Subsample, PimaSizesAndNesting) {
  const Dataset& ds = pima();
  const Split s = stratified_split(ds, SplitPlan{}, 4);
  const auto f05 = subsample_fraction(s.train, ds.labels, 0.05, 4, Rounding::Ceiling);
  EXPECT_GE(f05.size(), 31u);
  EXPECT_LE(f05.size(), 32u);
  EXPECT_EQ(fraction_size(614, 0.05, Rounding::Nearest), 31u);
  EXPECT_EQ(fraction_size(614, 0.05, Rounding::Ceiling), 31u);
  EXPECT_EQ(fraction_size(610, 0.1, Rounding::Ceiling), 61u);
  EXPECT_EQ(subsample_fraction(s.train, ds.labels, 1.0, 4), s.train);

  std::vector<std::vector<std::size_t>> subs;
  for (double f : {0.05, 0.1, 0.25, 0.5, 1.0}) subs.push_back(subsample_fraction(s.train, ds.labels, f, 4));
  for (std::size_t k = 0; k + 1 < subs.size(); ++k)
    EXPECT_TRUE(std::includes(subs[k + 1].begin(), subs[k + 1].end(), subs[k].begin(), subs[k].end()));
  for (const auto& sub : subs) {
    double pos = 0;
    for (auto i : sub) pos += ds.labels[i];
    EXPECT_NEAR(pos, 214.0 / 614.0 * static_cast<double>(sub.size()), 1.0);
    for (auto i : sub) EXPECT_TRUE(std::binary_search(s.train.begin(), s.train.end(), i));
  }
}

TEST(Subsample, RejectsBadFractions) {
  const Dataset ds = toy(6, 4);
  const std::vector<std::size_t> train{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_THROW(subsample_fraction(train, ds.labels, 0.0, 1), ArgumentError);
  EXPECT_THROW(subsample_fraction(train, ds.labels, 1.5, 1), ArgumentError);
  EXPECT_THROW(subsample_fraction(train, ds.labels, 0.1, 1), ArgumentError);  // one row, two classes
}

TEST(Blobs, DeterministicAndBalanced) {
  const Dataset a = make_blobs(200, 7), b = make_blobs(200, 7);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.class_histogram(), (std::vector<std::size_t>{100, 100}));
}
