#include "oracles.hpp"
#include "test_util.hpp"

#include <stressmeter/stats.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace stressmeter;
using namespace stressmeter::stats;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

features::FeatureMatrix frame(std::vector<std::string> ids, std::vector<std::string> names, Matrix values) {
  features::FeatureMatrix m;
  m.row_ids = std::move(ids);
  m.names = std::move(names);
  m.values = std::move(values);
  return m;
}

std::vector<std::string> ids(int n, const std::string& prefix = "u") {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace

TEST(Pearson, SpecExamples) {
  EXPECT_DOUBLE_EQ(pearson(vec({1, 5, 2, 7}), vec({1, 5, 2, 7})), 1.0);
  EXPECT_DOUBLE_EQ(pearson(vec({1, 2, 3}), vec({3, 2, 1})), -1.0);
  EXPECT_NEAR(pearson(vec({1, 2, 3, 4}), vec({1, 3, 2, 4})), 0.8, 1e-15);
}

TEST(Pearson, ConstantVectorNamed) {
  try {
    pearson(vec({1, 2, 3}), vec({4, 4, 4}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
    EXPECT_NE(std::string(e.what()).find("y"), std::string::npos);
  }
  EXPECT_THROW(pearson(vec({1, 2}), vec({1, 2})), Error);
}

TEST(Pearson, MatchesOracleOnRandomData) {
  std::mt19937_64 g(11);
  for (int rep = 0; rep < 50; ++rep) {
    Vector x = testutil::random_vector(g, 30), y = 0.3 * x + testutil::random_vector(g, 30);
    EXPECT_NEAR(pearson(x, y), oracle::pearson(x, y), 1e-12);
  }
}

TEST(Spearman, MonotoneAndDistinct) {
  EXPECT_DOUBLE_EQ(spearman(vec({1, 2, 3, 4}), vec({1, 10, 100, 1000})), 1.0);
  Vector x = vec({3, 1, 4, 1.5, 9}), y = vec({2, 7, 1, 8, 2.5});
  EXPECT_NEAR(spearman(x, y), pearson(oracle::ranks(x), oracle::ranks(y)), 1e-15);
}

TEST(Spearman, TiesUseAverageRanks) {
  Vector x = vec({1, 2, 2, 3, 3, 3, 4}), y = vec({5, 1, 2, 2, 4, 4, 0});
  Vector r = average_ranks(as_span(x));
  EXPECT_DOUBLE_EQ(r(1), 2.5);
  EXPECT_DOUBLE_EQ(r(3), 5.0);
  EXPECT_NEAR(spearman(x, y), oracle::spearman(x, y), 1e-14);
}

TEST(PartialCorr, EmptyCovariatesIsPlainCorrelation) {
  std::mt19937_64 g(3);
  Vector x = testutil::random_vector(g, 25), y = x + testutil::random_vector(g, 25);
  auto pc = partial_corr(x, y, Matrix(25, 0));
  EXPECT_NEAR(pc.r, pearson(x, y), 1e-12);
  EXPECT_EQ(pc.df, 23);
  EXPECT_EQ(pc.n, 25u);
}

TEST(PartialCorr, OrthogonalCovariate) {
  Vector x = vec({1, 2, 3, 4}), y = vec({1, 3, 2, 4});
  Matrix z = vec({1, -1, -1, 1});
  double expected = oracle::partial_one(0.8, oracle::pearson(x, z.col(0)), oracle::pearson(y, z.col(0)));
  auto pc = partial_corr(x, y, z);
  EXPECT_NEAR(pc.r, expected, 1e-12);
  EXPECT_NEAR(pc.r, 0.8, 1e-12);
}

TEST(PartialCorr, OutcomeInCovariateSpanGivesZero) {
  Vector x = vec({1, 2, 3, 4, 5}), y = vec({2, 1, 4, 3, 6});
  auto pc = partial_corr(x, y, Matrix(y));
  EXPECT_NEAR(pc.r, 0.0, 1e-10);
  EXPECT_EQ(pc.p, 1.0);
}

TEST(PartialCorr, RankDeficientCovariatesRejected) {
  std::mt19937_64 g(5);
  Vector x = testutil::random_vector(g, 10), y = testutil::random_vector(g, 10);
  Matrix Z(10, 2);
  Z.col(0) = testutil::random_vector(g, 10);
  Z.col(1) = 2.0 * Z.col(0);
  EXPECT_THROW(partial_corr(x, y, Z), Error);
  Matrix constant = Matrix::Constant(10, 1, 3.0);
  EXPECT_THROW(partial_corr(x, y, constant), Error);
}

TEST(PartialCorr, MatchesPrecisionMatrixOracle) {
  std::mt19937_64 g(2024);
  for (int rep = 0; rep < 100; ++rep) {
    const int k = rep % 4;
    Matrix Z = testutil::random_matrix(g, 20, k);
    Vector x = testutil::random_vector(g, 20), y = 0.5 * x + testutil::random_vector(g, 20);
    for (int j = 0; j < k; ++j) {
      x += 0.4 * Z.col(j);
      y -= 0.3 * Z.col(j);
    }
    for (bool ranked : {false, true}) {
      auto pc = partial_corr(x, y, Z, ranked ? Method::spearman : Method::pearson);
      EXPECT_NEAR(pc.r, oracle::partial(x, y, Z, ranked), 1e-10) << "rep " << rep;
      EXPECT_EQ(pc.df, 18 - k);
    }
  }
}

TEST(PartialCorr, SymmetricAndAffineInvariant) {
  std::mt19937_64 g(8);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix Z = testutil::random_matrix(g, 30, 2);
    Vector x = testutil::random_vector(g, 30) + Z.col(0), y = x + testutil::random_vector(g, 30);
    double r = partial_corr(x, y, Z).r;
    EXPECT_NEAR(partial_corr(y, x, Z).r, r, 1e-12);
    EXPECT_NEAR(partial_corr((3.0 * x.array() + 7).matrix(), y, Z).r, r, 1e-12);
    Matrix Z2 = Z;
    Z2.col(1) = -0.5 * Z2.col(1).array() + 4;
    EXPECT_NEAR(partial_corr(x, y, Z2).r, r, 1e-12);
  }
}

TEST(PValue, ClosedFormOnTwoDegreesOfFreedom) {
  for (double r : {0.05, 0.3, 0.6, 0.9, -0.75})
    EXPECT_NEAR(correlation_p_value(r, 2), oracle::p_value_df2(r), 1e-12) << r;
  // n=4, Z empty gives df=2
  auto pc = correlation_test(vec({1, 2, 3, 4}), vec({1, 3, 2, 4}));
  EXPECT_NEAR(pc.p, oracle::p_value_df2(0.8), 1e-12);
}

TEST(PValue, MonotoneDecreasingInAbsR) {
  double prev = 1.0;
  for (double r = 0.0; r < 0.99; r += 0.01) {
    double p = correlation_p_value(r, 40);
    EXPECT_LE(p, prev);
    EXPECT_DOUBLE_EQ(p, correlation_p_value(-r, 40));
    prev = p;
  }
  EXPECT_EQ(correlation_p_value(1.0, 5), 0.0);
}

TEST(Bonferroni, PublishedThresholds) {
  EXPECT_DOUBLE_EQ(bonferroni_threshold(0.01, 1000), 1e-5);
  EXPECT_DOUBLE_EQ(bonferroni_threshold(0.01, 2000), 5e-6);
  double t73 = bonferroni_threshold(0.01, 73);
  EXPECT_NEAR(t73, 1.3699e-4, 5e-9);
  EXPECT_EQ(std::floor(t73 * 1e5) / 1e5, 1.3e-4);
  EXPECT_DOUBLE_EQ(bonferroni_threshold(0.01, 1), 0.01);
  EXPECT_THROW(bonferroni_threshold(0.01, 0), Error);
}

TEST(EncodeControls, NumericPassThroughAndOneHotDropsFirstLevel) {
  auto enc = encode_controls({{"age", {"20", "31.5", "40"}}, {"gender", {"m", "f", "x"}}}, 3);
  ASSERT_EQ(enc.values.cols(), 3);
  EXPECT_EQ(enc.values(1, 0), 31.5);
  // levels sorted: f, m, x; f dropped
  EXPECT_EQ(enc.names[1], "gender=m");
  EXPECT_EQ(enc.names[2], "gender=x");
  EXPECT_EQ(enc.values(0, 1), 1.0);
  EXPECT_EQ(enc.values(1, 1), 0.0);
  EXPECT_EQ(enc.values(1, 2), 0.0);
  EXPECT_EQ(enc.values(2, 2), 1.0);
}

TEST(Dla, InjectedOutcomeIsPerfectAndSignificant) {
  std::mt19937_64 g(1);
  Vector y = testutil::random_vector(g, 40);
  Matrix X(40, 3);
  X.col(0) = testutil::random_vector(g, 40);
  X.col(1) = y;
  X.col(2) = testutil::random_vector(g, 40);
  auto rep = dla(frame(ids(40), {"a", "b", "c"}, X), y, Matrix(40, 0));
  ASSERT_EQ(rep.results.size(), 3u);
  EXPECT_EQ(rep.results[0].feature, "b");
  EXPECT_NEAR(rep.results[0].r, 1.0, 1e-12);
  EXPECT_TRUE(rep.results[0].significant);
  EXPECT_EQ(rep.family_size, 3u);
  EXPECT_DOUBLE_EQ(rep.threshold, 0.01 / 3);
}

TEST(Dla, PureNoiseRarelySignificant) {
  std::mt19937_64 g(77);
  Matrix X = testutil::random_matrix(g, 50, 100);
  std::vector<std::string> names;
  for (int j = 0; j < 100; ++j) names.push_back("f" + std::to_string(1000 + j));
  auto rep = dla(frame(ids(50), names, X), testutil::random_vector(g, 50), Matrix(50, 0));
  int sig = 0;
  for (const auto& r : rep.results) sig += r.significant;
  EXPECT_LE(sig, 1);
}

TEST(Dla, SingleFeatureThresholdIsAlpha) {
  std::mt19937_64 g(4);
  Vector y = testutil::random_vector(g, 20);
  auto rep = dla(frame(ids(20), {"only"}, Matrix(testutil::random_vector(g, 20))), y, Matrix(20, 0),
                 {.alpha = 0.05});
  EXPECT_DOUBLE_EQ(rep.threshold, 0.05);
}

TEST(Dla, ConstantColumnsSkippedAndReported) {
  std::mt19937_64 g(6);
  Matrix X(20, 2);
  X.col(0).setConstant(2.0);
  X.col(1) = testutil::random_vector(g, 20);
  auto rep = dla(frame(ids(20), {"flat", "live"}, X), testutil::random_vector(g, 20), Matrix(20, 0));
  ASSERT_EQ(rep.skipped_constant, std::vector<std::string>{"flat"});
  EXPECT_EQ(rep.family_size, 1u);
  EXPECT_EQ(rep.results.size(), 1u);
}

TEST(Dla, MatchesPartialCorrWithControlsAndOrdersTiesByName) {
  std::mt19937_64 g(9);
  Matrix Z = testutil::random_matrix(g, 30, 2);
  Vector y = testutil::random_vector(g, 30);
  Matrix X(30, 3);
  X.col(0) = testutil::random_vector(g, 30);
  X.col(1) = X.col(0);
  X.col(2) = testutil::random_vector(g, 30) + y;
  auto rep = dla(frame(ids(30), {"zz", "aa", "mid"}, X), y, Z, {.method = Method::spearman});
  for (const auto& r : rep.results) {
    auto j = frame(ids(30), {"zz", "aa", "mid"}, X).column(r.feature);
    EXPECT_NEAR(r.r, oracle::partial(X.col(j), y, Z, true), 1e-10);
  }
  std::vector<std::string> order;
  for (const auto& r : rep.results) order.push_back(r.feature);
  auto aa = std::find(order.begin(), order.end(), "aa"), zz = std::find(order.begin(), order.end(), "zz");
  EXPECT_EQ(zz - aa, 1);
}

TEST(Dla, CsvShape) {
  std::mt19937_64 g(10);
  Vector y = testutil::random_vector(g, 10);
  auto rep = dla(frame(ids(10), {"a", "b"}, testutil::random_matrix(g, 10, 2)), y, Matrix(10, 0));
  std::ostringstream out;
  write_dla_csv(out, rep);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "feature,r,p,significant,family_size,method");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 2);
}

TEST(Contrast, IdenticalValuesGiveZeroPlatformCorrelation) {
  Matrix v = vec({1, 4, 2, 8, 5});
  auto A = frame(ids(5), {"w"}, v), B = frame(ids(5), {"w"}, v);
  std::map<std::string, double> y;
  for (int i = 0; i < 5; ++i) y["u" + std::to_string(i)] = i * 1.5;
  auto c = platform_contrast(A, B, y, {.method = Method::pearson});
  ASSERT_EQ(c.points.size(), 1u);
  EXPECT_NEAR(c.points[0].r_platform, 0.0, 1e-12);
  EXPECT_FALSE(c.points[0].kept);
}

TEST(Contrast, FeatureOnlyOnPlatformAIsPositive) {
  auto A = frame(ids(4), {"only_a"}, vec({0.2, 0.1, 0.3, 0.4}));
  auto B = frame(ids(4), {"other"}, vec({1, 2, 3, 4}));
  std::map<std::string, double> y{{"u0", 1}, {"u1", 2}, {"u2", 3}, {"u3", 4}};
  auto c = platform_contrast(A, B, y);
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.points[0].feature, "only_a");
  EXPECT_GT(c.points[0].r_platform, 0.0);
  EXPECT_LT(c.points[1].r_platform, 0.0);
}

TEST(Contrast, HandStackedFixture) {
  // four users on both platforms, plus one only on A
  auto A = frame({"a", "b", "c", "d", "solo"}, {"x"}, vec({3, 1, 4, 1, 9}));
  auto B = frame({"d", "c", "b", "a"}, {"x"}, vec({2, 6, 5, 3}));
  std::map<std::string, double> y{{"a", 10}, {"b", 20}, {"c", 15}, {"d", 5}, {"solo", 0}};
  auto c = platform_contrast(A, B, y);
  EXPECT_EQ(c.excluded_rows, std::vector<std::string>{"solo"});
  // stacked by sorted user id: A rows a,b,c,d then B rows a,b,c,d
  Vector x = vec({3, 1, 4, 1, 3, 5, 6, 2});
  Vector outcome = vec({10, 20, 15, 5, 10, 20, 15, 5});
  Vector platform = vec({1, 1, 1, 1, 0, 0, 0, 0});
  ASSERT_EQ(c.points.size(), 1u);
  EXPECT_NEAR(c.points[0].r_outcome, oracle::spearman(x, outcome), 1e-12);
  EXPECT_NEAR(c.points[0].r_platform, oracle::spearman(x, platform), 1e-12);
}

TEST(Contrast, KeepRuleNeedsSignificanceAndMagnitude) {
  std::mt19937_64 g(12);
  const int n = 200;
  Matrix a(n, 2), b(n, 2);
  a.col(0) = testutil::random_vector(g, n).array() + 3.0;  // strongly platform-linked
  b.col(0) = testutil::random_vector(g, n);
  a.col(1) = testutil::random_vector(g, n);
  b.col(1) = testutil::random_vector(g, n);
  std::map<std::string, double> y;
  Vector yv = testutil::random_vector(g, n);
  for (int i = 0; i < n; ++i) y["u" + std::to_string(i)] = yv(i);
  auto c = platform_contrast(frame(ids(n), {"loud", "quiet"}, a), frame(ids(n), {"loud", "quiet"}, b), y);
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_TRUE(c.points[0].kept);
  EXPECT_FALSE(c.points[1].kept);
  auto strict = platform_contrast(frame(ids(n), {"loud", "quiet"}, a), frame(ids(n), {"loud", "quiet"}, b), y,
                                  {.min_abs_rho = 0.99});
  EXPECT_FALSE(strict.points[0].kept);
}
