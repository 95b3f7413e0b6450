#include "oracles.hpp"
#include "test_util.hpp"

#include <stressmeter/model.hpp>

#include <gtest/gtest.h>

#include <algorithm>

using namespace stressmeter;
using namespace stressmeter::model;

namespace {

std::vector<std::string> names_for(Eigen::Index p) {
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < p; ++j) out.push_back("f" + std::to_string(100 + j));
  return out;
}

struct Problem {
  Matrix X;
  Vector y;
  Vector beta;
};

// y = X beta + noise, with noise scaled so var(X beta) / var(noise) = snr.
Problem linear_problem(std::uint64_t seed, Eigen::Index n, Eigen::Index p, double snr, int active = -1) {
  std::mt19937_64 g(seed);
  Problem pr;
  pr.X = testutil::random_matrix(g, n, p);
  pr.beta = Vector::Zero(p);
  Eigen::Index a = active < 0 ? p : active;
  pr.beta.head(a) = testutil::random_vector(g, a);
  Vector signal = pr.X * pr.beta;
  Vector noise = testutil::random_vector(g, n);
  double sd_signal = std::sqrt((signal.array() - signal.mean()).square().mean());
  pr.y = signal + noise * (sd_signal / std::sqrt(snr));
  return pr;
}

features::FeatureMatrix frame(const Matrix& X, std::vector<std::string> names) {
  features::FeatureMatrix m;
  for (Eigen::Index i = 0; i < X.rows(); ++i) m.row_ids.push_back("r" + std::to_string(i));
  m.names = std::move(names);
  m.values = X;
  return m;
}

}  // namespace

TEST(SoftThreshold, Cases) {
  EXPECT_EQ(soft_threshold(3.0, 1.0), 2.0);
  EXPECT_EQ(soft_threshold(-3.0, 1.0), -2.0);
  EXPECT_EQ(soft_threshold(0.5, 1.0), 0.0);
  EXPECT_EQ(soft_threshold(-1.0, 1.0), 0.0);
}

TEST(ElasticNet, ZeroLambdaMatchesLeastSquares) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto pr = linear_problem(seed, 100, 10, 3.0);
    auto m = fit_elastic_net(pr.X, names_for(10), pr.y, {0.0, 1.0});
    auto ls = oracle::least_squares(pr.X, pr.y);
    Vector fitted = predict_aligned(m, pr.X);
    EXPECT_LT((fitted - ls.fitted).cwiseAbs().maxCoeff(), 1e-6);
    Vector raw = m.weights.cwiseQuotient(m.scales);
    EXPECT_LT((raw - ls.beta).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(ElasticNet, WeightedZeroLambdaMatchesWeightedLeastSquares) {
  auto pr = linear_problem(4, 60, 5, 2.0);
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  Vector w(60);
  for (auto& x : w) x = u(g);
  auto m = fit_elastic_net(pr.X, names_for(5), pr.y, {0.0, 0.5}, w);
  auto ls = oracle::least_squares(pr.X, pr.y, &w);
  EXPECT_LT((predict_aligned(m, pr.X) - ls.fitted).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(m.sample_weight_policy, "custom");
}

TEST(ElasticNet, IntegerWeightsEqualRowDuplication) {
  auto pr = linear_problem(5, 30, 4, 2.0);
  Vector w = Vector::Ones(30);
  w(3) = 3;
  w(17) = 2;
  Matrix Xd(33, 4);
  Vector yd(33);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < 30; ++i)
    for (int c = 0; c < static_cast<int>(w(i)); ++c) {
      Xd.row(r) = pr.X.row(i);
      yd(r++) = pr.y(i);
    }
  auto a = fit_elastic_net(pr.X, names_for(4), pr.y, {0.05, 0.5}, w, {.tol = 1e-12});
  auto b = fit_elastic_net(Xd, names_for(4), yd, {0.05, 0.5}, std::nullopt, {.tol = 1e-12});
  EXPECT_LT((a.weights - b.weights).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(a.intercept, b.intercept, 1e-12);
}

TEST(ElasticNet, LargeLambdaShrinksToWeightedMean) {
  auto pr = linear_problem(6, 50, 8, 1.0);
  Vector w = Vector::LinSpaced(50, 1.0, 2.0);
  auto m = fit_elastic_net(pr.X, names_for(8), pr.y, {1e6, 0.7}, w);
  EXPECT_TRUE((m.weights.array() == 0.0).all());
  EXPECT_NEAR(m.intercept, w.dot(pr.y) / w.sum(), 1e-12);
}

TEST(ElasticNet, OrthonormalDesignSoftThresholds) {
  // Sylvester-Hadamard columns 1..4 of order 8: zero mean, unit variance, orthogonal.
  Matrix H(8, 8);
  H(0, 0) = 1;
  for (int s = 1; s < 8; s *= 2) {
    H.block(0, s, s, s) = H.block(0, 0, s, s);
    H.block(s, 0, s, s) = H.block(0, 0, s, s);
    H.block(s, s, s, s) = -H.block(0, 0, s, s);
  }
  Matrix X = (3.0 * H.middleCols(1, 4)).array() + 5.0;
  Vector y(8);
  y << 4, -1, 2.5, 0.3, -2, 7, 1, 0.2;
  auto ls = oracle::least_squares(X, y);
  Vector ols_std = ls.beta * 3.0;
  for (double lambda : {0.0, 0.3, 1.0, 2.0}) {
    auto m = fit_elastic_net(X, names_for(4), y, {lambda, 1.0});
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(m.weights(j), soft_threshold(ols_std(j), lambda), 1e-6) << lambda;
  }
}

TEST(ElasticNet, KktHoldsAcrossDefaultGrid) {
  auto grid = Grid::defaults();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto pr = linear_problem(100 + seed, 100, 40, 2.0, 10);
    for (double l1 : grid.l1_ratios)
      for (double lambda : grid.lambdas) {
        auto m = fit_elastic_net(pr.X, names_for(40), pr.y, {lambda, l1});
        double lib = kkt_violation(m, pr.X, pr.y);
        double ora = oracle::enet_kkt(pr.X, pr.y, m.intercept, m.weights, lambda, l1);
        EXPECT_LT(ora, 1e-5) << "lambda " << lambda << " l1 " << l1;
        EXPECT_NEAR(lib, ora, 1e-9);
      }
  }
}

TEST(ElasticNet, ObjectiveNeverIncreases) {
  auto pr = linear_problem(7, 80, 20, 1.0);
  std::vector<double> trace;
  fit_elastic_net(pr.X, names_for(20), pr.y, {0.02, 0.5}, std::nullopt, {}, &trace);
  ASSERT_GT(trace.size(), 2u);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-15);
}

TEST(ElasticNet, GramAndResidualUpdatesAgree) {
  auto pr = linear_problem(8, 70, 15, 1.5);
  Vector v = Vector::Constant(70, 1.0 / 70);
  auto s = standardize(pr.X, v);
  Vector yc = pr.y.array() - pr.y.mean();
  FitOptions opts{.tol = 1e-12};
  auto a = coordinate_descent(s, yc, v, {0.01, 0.5}, opts, Vector::Zero(15));
  s.gram.resize(0, 0);
  auto b = coordinate_descent(s, yc, v, {0.01, 0.5}, opts, Vector::Zero(15));
  EXPECT_LT((a.beta - b.beta).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(ElasticNet, ConstantColumnGetsZeroWeight) {
  auto pr = linear_problem(9, 40, 3, 2.0);
  pr.X.col(1).setConstant(4.0);
  auto m = fit_elastic_net(pr.X, names_for(3), pr.y, {0.0, 1.0});
  EXPECT_EQ(m.weights(1), 0.0);
  EXPECT_EQ(m.scales(1), 1.0);
}

TEST(ElasticNet, NonConvergenceReportsIterations) {
  auto pr = linear_problem(10, 40, 10, 2.0);
  try {
    fit_elastic_net(pr.X, names_for(10), pr.y, {1e-4, 0.5}, std::nullopt, {.tol = 1e-30, .max_iter = 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
    EXPECT_NE(std::string(e.what()).find("3 sweeps"), std::string::npos);
  }
}

TEST(ElasticNet, RejectsBadInput) {
  auto pr = linear_problem(11, 10, 2, 1.0);
  EXPECT_THROW(fit_elastic_net(pr.X, names_for(2), pr.y, {-1.0, 0.5}), Error);
  EXPECT_THROW(fit_elastic_net(pr.X, names_for(2), pr.y, {0.1, 1.5}), Error);
  pr.X(0, 0) = std::nan("");
  EXPECT_THROW(fit_elastic_net(pr.X, names_for(2), pr.y, {0.1, 0.5}), Error);
}

TEST(Predict, ZeroWeightsGiveIntercept) {
  LinearModel m;
  m.feature_names = {"a", "b"};
  m.weights = Vector::Zero(2);
  m.means = Vector::Zero(2);
  m.scales = Vector::Ones(2);
  m.intercept = 2.5;
  Matrix X(3, 2);
  X << 1, 2, 3, 4, 5, 6;
  Vector p = predict(m, frame(X, {"a", "b"}));
  EXPECT_TRUE((p.array() == 2.5).all());
}

TEST(Predict, ColumnOrderDoesNotMatter) {
  auto pr = linear_problem(12, 40, 4, 2.0);
  auto names = names_for(4);
  auto m = fit_elastic_net(pr.X, names, pr.y, {0.01, 0.5});
  std::vector<int> perm{2, 0, 3, 1};
  Matrix Xp(40, 5);
  std::vector<std::string> np;
  for (int j = 0; j < 4; ++j) {
    Xp.col(j) = pr.X.col(perm[static_cast<std::size_t>(j)]);
    np.push_back(names[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]);
  }
  Xp.col(4).setOnes();
  np.push_back("extra");
  std::vector<std::string> ignored;
  Vector a = predict(m, frame(pr.X, names)), b = predict(m, frame(Xp, np), &ignored);
  EXPECT_EQ(a, b);
  EXPECT_EQ(ignored, std::vector<std::string>{"extra"});
}

TEST(Predict, MissingFeatureAndCorruptScale) {
  auto pr = linear_problem(13, 20, 2, 2.0);
  auto m = fit_elastic_net(pr.X, {"a", "b"}, pr.y, {0.01, 0.5});
  try {
    predict(m, frame(pr.X.leftCols(1), {"a"}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  m.scales(0) = 0.0;
  EXPECT_THROW(predict(m, frame(pr.X, {"a", "b"})), Error);
}

TEST(Predict, ModelJsonRoundTrip) {
  auto pr = linear_problem(14, 30, 3, 2.0);
  auto m = fit_elastic_net(pr.X, {"x", "y", "z"}, pr.y, {0.01, 0.5});
  m.adaptation = "tca";
  m.transform_fingerprint = "abc";
  m.seed = 99;
  auto back = LinearModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(predict_aligned(back, pr.X), predict_aligned(m, pr.X));
  EXPECT_EQ(back.adaptation, "tca");
  EXPECT_EQ(back.seed, 99u);
  EXPECT_THROW(LinearModel::from_json(nlohmann::json{{"kind", "linear_model"}}), Error);
}

TEST(Folds, TenRowsFiveFolds) {
  std::vector<StratRow> rows;
  for (int i = 0; i < 10; ++i) rows.push_back({"u" + std::to_string(i), 20.0 + i, "f"});
  auto fa = stratified_folds(rows, 5, 1);
  EXPECT_EQ(fa.sizes(), std::vector<int>(5, 2));
}

TEST(Folds, EachFoldGetsOneOfEachGender) {
  std::vector<StratRow> rows;
  for (int i = 0; i < 5; ++i) rows.push_back({"m" + std::to_string(i), 30.0 + 3 * i, "male"});
  for (int i = 0; i < 5; ++i) rows.push_back({"f" + std::to_string(i), 25.0 + i, "female"});
  for (std::uint64_t seed : {0u, 7u, 42u}) {
    auto fa = stratified_folds(rows, 5, seed);
    std::vector<int> males(5, 0), females(5, 0);
    for (const auto& r : rows) (r.gender == "male" ? males : females)[static_cast<std::size_t>(fa.of(r.id))]++;
    EXPECT_EQ(males, std::vector<int>(5, 1));
    EXPECT_EQ(females, std::vector<int>(5, 1));
  }
}

TEST(Folds, DeterministicAndOrderIndependent) {
  std::mt19937_64 g(3);
  std::vector<StratRow> rows;
  std::uniform_int_distribution<int> age(18, 70);
  for (int i = 0; i < 53; ++i) rows.push_back({"u" + std::to_string(i), double(age(g)), i % 3 ? "f" : "m"});
  auto a = stratified_folds(rows, 5, 9);
  std::shuffle(rows.begin(), rows.end(), g);
  auto b = stratified_folds(rows, 5, 9);
  EXPECT_EQ(a.fold, b.fold);
  auto sizes = a.sizes();
  EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1);
}

TEST(Folds, Errors) {
  std::vector<StratRow> rows{{"a", 1, "f"}, {"b", 2, "f"}};
  EXPECT_THROW(stratified_folds(rows, 3, 0), Error);
  rows.push_back({"a", 5, "m"});
  EXPECT_THROW(stratified_folds(rows, 2, 0), Error);
  FoldAssignment fa = stratified_folds({{"x", 1, "f"}}, 1, 0);
  EXPECT_THROW(fa.of("nope"), Error);
}

TEST(CrossValidate, RecoversSignalAndNotNoise) {
  auto pr = linear_problem(21, 300, 50, 5.0);
  std::vector<int> folds(300);
  for (int i = 0; i < 300; ++i) folds[static_cast<std::size_t>(i)] = i % 5;
  auto res = cross_validate(pr.X, pr.y, folds, 5, Grid::defaults());
  EXPECT_GE(res.pearson_r, 0.85);
  EXPECT_EQ(res.chosen.size(), 5u);
  EXPECT_NEAR(res.pearson_r, oracle::pearson(res.oof_predictions, pr.y), 1e-12);

  std::mt19937_64 g(5);
  Vector perm = pr.y;
  std::shuffle(perm.begin(), perm.end(), g);
  auto null = cross_validate(pr.X, perm, folds, 5, Grid::defaults());
  EXPECT_LT(std::abs(null.pearson_r), 0.15);
}

TEST(CrossValidate, BitIdenticalRepeat) {
  auto pr = linear_problem(22, 120, 20, 3.0);
  std::vector<StratRow> rows;
  for (int i = 0; i < 120; ++i) rows.push_back({"u" + std::to_string(i), double(i % 37), i % 2 ? "f" : "m"});
  std::vector<std::string> ids;
  for (const auto& r : rows) ids.push_back(r.id);
  auto folds = stratified_folds(rows, 5, 42).for_rows(ids);
  auto a = cross_validate(pr.X, pr.y, folds, 5, Grid::defaults());
  auto b = cross_validate(pr.X, pr.y, folds, 5, Grid::defaults());
  EXPECT_EQ(a.oof_predictions, b.oof_predictions);
  EXPECT_EQ(a.pearson_r, b.pearson_r);
  EXPECT_EQ(a.chosen, b.chosen);
}

TEST(CrossValidate, OutOfFoldMeansHeldOut) {
  // Each prediction must come from a model that never saw its row: replacing
  // one row's label changes only other folds' predictions.
  auto pr = linear_problem(23, 60, 5, 3.0);
  std::vector<int> folds(60);
  for (int i = 0; i < 60; ++i) folds[static_cast<std::size_t>(i)] = i % 3;
  Grid fixed{{0.01}, {0.5}};
  auto a = cross_validate(pr.X, pr.y, folds, 3, fixed);
  Vector y2 = pr.y;
  y2(0) += 50.0;
  auto b = cross_validate(pr.X, y2, folds, 3, fixed);
  for (int i = 0; i < 60; i += 3) EXPECT_DOUBLE_EQ(a.oof_predictions(i), b.oof_predictions(i));
  EXPECT_NE(a.oof_predictions(1), b.oof_predictions(1));
}

TEST(CrossValidate, ConstantPredictionsScoreZero) {
  Vector y = Vector::LinSpaced(20, 0, 1);
  EXPECT_EQ(pooled_r(Vector::Constant(20, 3.0), y), 0.0);
}

TEST(CrossValidate, EmptyGridRejected) {
  auto pr = linear_problem(24, 20, 2, 1.0);
  std::vector<int> folds(20, 0);
  for (int i = 0; i < 20; ++i) folds[static_cast<std::size_t>(i)] = i % 2;
  EXPECT_THROW(cross_validate(pr.X, pr.y, folds, 2, Grid{}), Error);
}

TEST(SelectHyperparameters, PrefersSmallPenaltyOnCleanSignal) {
  auto pr = linear_problem(25, 200, 5, 100.0);
  auto sel = select_hyperparameters(pr.X, pr.y, Grid::defaults(), {});
  EXPECT_LE(sel.hyper.lambda, 1e-2);
  EXPECT_EQ(sel.skipped_points, 0u);
}
