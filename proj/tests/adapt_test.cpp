#include "oracles.hpp"
#include "test_util.hpp"

#include <stressmeter/adapt.hpp>

#include <gtest/gtest.h>

using namespace stressmeter;
using namespace stressmeter::adapt;

namespace {

Matrix random_spd(std::mt19937_64& g, Eigen::Index n) {
  Matrix M = testutil::random_matrix(g, n, n);
  return M * M.transpose() + 0.5 * Matrix::Identity(n, n);
}

Matrix random_symmetric(std::mt19937_64& g, Eigen::Index n) {
  Matrix M = testutil::random_matrix(g, n, n);
  return 0.5 * (M + M.transpose());
}

}  // namespace

TEST(EasyAdapt, AugmentationBlocks) {
  Vector x(2);
  x << 1, 2;
  Vector s = easyadapt_augment(x, Domain::source), t = easyadapt_augment(x, Domain::target);
  Vector es(6), et(6);
  es << 1, 2, 1, 2, 0, 0;
  et << 1, 2, 0, 0, 1, 2;
  EXPECT_EQ(s, es);
  EXPECT_EQ(t, et);
  EXPECT_EQ(easyadapt_augment(Vector(), Domain::source).size(), 0);
}

TEST(EasyAdapt, MatrixAndNamedForms) {
  Matrix X(2, 2);
  X << 1, 2, 3, 4;
  Matrix A = easyadapt_augment(X, Domain::target);
  for (Eigen::Index i = 0; i < 2; ++i) EXPECT_EQ(Vector(A.row(i).transpose()), easyadapt_augment(Vector(X.row(i).transpose()), Domain::target));
  features::FeatureMatrix fm;
  fm.row_ids = {"a", "b"};
  fm.names = {"p", "q"};
  fm.values = X;
  auto aug = easyadapt_augment(fm, Domain::source);
  EXPECT_EQ(aug.names, (std::vector<std::string>{"p:shared", "q:shared", "p:src", "q:src", "p:tgt", "q:tgt"}));
  EXPECT_NE(aug.fingerprint, easyadapt_augment(fm, Domain::target).fingerprint);
}

TEST(Mmd, SameSampleIsZero) {
  std::mt19937_64 g(1);
  Matrix S = testutil::random_matrix(g, 15, 4);
  EXPECT_LE(mmd(S, S, KernelSpec::linear()), 1e-12);
  EXPECT_LE(mmd(S, S, KernelSpec::rbf(1.3)), 1e-12);
}

TEST(Mmd, LinearIsMeanDistance) {
  Matrix S(2, 1), T(1, 1);
  S << 0, 2;
  T << 4;
  EXPECT_DOUBLE_EQ(mmd(S, T, KernelSpec::linear()), 3.0);
}

TEST(Mmd, MatchesDoubleSumOracle) {
  std::mt19937_64 g(2);
  for (int rep = 0; rep < 10; ++rep) {
    Matrix S = testutil::random_matrix(g, 12, 3);
    Matrix T = testutil::random_matrix(g, 9, 3).array() + 0.7;
    double bw = 0.5 + rep * 0.3;
    EXPECT_NEAR(mmd(S, T, KernelSpec::rbf(bw)), oracle::rbf_mmd(S, T, bw), 1e-10);
    EXPECT_NEAR(mmd(S, T, KernelSpec::linear()), oracle::linear_mmd(S, T), 1e-12);
  }
}

TEST(Mmd, Errors) {
  Matrix S(2, 2), T(2, 3);
  S.setZero();
  T.setZero();
  EXPECT_THROW(mmd(S, T, KernelSpec::linear()), Error);
  EXPECT_THROW(mmd(S, S, KernelSpec::rbf(0.0)), Error);
  EXPECT_THROW(mmd(Matrix(0, 2), S, KernelSpec::linear()), Error);
}

TEST(Kernel, MedianPairwiseDistance) {
  Matrix X(3, 1);
  X << 0, 1, 3;  // distances 1, 3, 2
  EXPECT_DOUBLE_EQ(median_pairwise_distance(X), 2.0);
  Matrix Y(4, 1);
  Y << 0, 1, 2, 10;  // 1,2,10,1,9,8 -> sorted 1,1,2,8,9,10
  EXPECT_DOUBLE_EQ(median_pairwise_distance(Y), 5.0);
  EXPECT_THROW(median_pairwise_distance(Matrix::Zero(3, 2)), Error);
}

TEST(SymEig, DiagonalWithIdentity) {
  Matrix A = Vector((Vector(4) << 2, -1, 7, 3).finished()).asDiagonal();
  auto e = sym_eig(A, Matrix::Identity(4, 4));
  Vector expected(4);
  expected << 7, 3, 2, -1;
  EXPECT_LT((e.values - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SymEig, TwoByTwo) {
  Matrix A(2, 2);
  A << 2, 1, 1, 2;
  auto e = sym_eig(A, Matrix::Identity(2, 2));
  // roots of l^2 - 4l + 3
  EXPECT_NEAR(e.values(0), 3.0, 1e-14);
  EXPECT_NEAR(e.values(1), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(e.vectors(0, 0)), std::sqrt(0.5), 1e-14);
  EXPECT_GT(e.vectors.col(0).cwiseAbs().maxCoeff(), 0);
}

TEST(SymEig, ResidualsAndBOrthonormality) {
  std::mt19937_64 g(3);
  for (int rep = 0; rep < 20; ++rep) {
    Matrix A = random_symmetric(g, 10), B = random_spd(g, 10);
    auto e = sym_eig(A, B);
    for (Eigen::Index j = 0; j < 10; ++j) {
      Vector v = e.vectors.col(j);
      EXPECT_LT((A * v - e.values(j) * B * v).norm(), 1e-8);
      if (j > 0) {
        EXPECT_GE(e.values(j - 1), e.values(j));
      }
    }
    Matrix G = e.vectors.transpose() * B * e.vectors;
    EXPECT_LT((G - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-9);
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ref(A, B);
    Vector ref_desc = ref.eigenvalues().reverse();
    EXPECT_LT((e.values - ref_desc).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SymEig, RejectsIndefiniteAndAsymmetric) {
  Matrix B(2, 2);
  B << 1, 2, 2, 1;
  try {
    sym_eig(Matrix::Identity(2, 2), B);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
  }
  Matrix A(2, 2);
  A << 1, 2, 0, 1;
  EXPECT_THROW(sym_eig(A, Matrix::Identity(2, 2)), Error);
}

TEST(SymEig, JacobiLargerMatchesReference) {
  std::mt19937_64 g(4);
  Matrix A = random_symmetric(g, 60);
  auto e = jacobi_eigen(A);
  Eigen::SelfAdjointEigenSolver<Matrix> ref(A);
  Vector got = e.values;
  std::sort(got.begin(), got.end());
  EXPECT_LT((got - ref.eigenvalues()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((A * e.vectors - e.vectors * e.values.asDiagonal()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Tca, TinyCaseMatchesDenseOracle) {
  Matrix XS(2, 1), XT(2, 1);
  XS << 1.0, 2.0;
  XT << 4.0, 3.5;
  auto t = tca_fit(XS, XT, {.kernel = KernelSpec::linear(), .m = 1, .mu = 0.5, .standardize = false});
  // Build the problem from its definition and solve it with a dense solver.
  Matrix X(4, 1);
  X << 1.0, 2.0, 4.0, 3.5;
  Matrix K = X * X.transpose();
  Matrix H = Matrix::Identity(4, 4) - Matrix::Constant(4, 4, 0.25);
  Matrix L(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) L(i, j) = ((i < 2) == (j < 2)) ? 0.25 : -0.25;
  Matrix A = K * H * K, B = K * L * K + 0.5 * Matrix::Identity(4, 4);
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ref(A, B);
  Vector w = ref.eigenvectors().col(3);
  double sign = (w.dot(t.W.col(0)) < 0) ? -1.0 : 1.0;
  EXPECT_LT((t.W.col(0) - sign * w).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(t.eigenvalues(0), ref.eigenvalues()(3), 1e-8);
}

TEST(Tca, IdenticalDomainsEmbedToSameMean) {
  std::mt19937_64 g(5);
  Matrix S = testutil::random_matrix(g, 12, 3);
  for (auto kernel : {KernelSpec::linear(), KernelSpec::rbf(0.0)}) {
    auto t = tca_fit(S, S, {.kernel = kernel, .m = 5});
    Matrix E = tca_training_embedding(t);
    Vector d = E.topRows(12).colwise().mean() - E.bottomRows(12).colwise().mean();
    EXPECT_LT(d.norm(), 1e-9);
  }
}

TEST(Tca, ShrinksMeanShift) {
  std::mt19937_64 g(6);
  Matrix S = testutil::random_matrix(g, 60, 8);
  Matrix T = testutil::random_matrix(g, 60, 8);
  T.col(0).array() += 2.0;
  T.col(3).array() -= 1.5;
  auto t = tca_fit(S, T, {.kernel = KernelSpec::linear(), .m = 5});
  Matrix E = tca_training_embedding(t);
  double before = mmd(t.training.topRows(60), t.training.bottomRows(60), KernelSpec::linear());
  double after = mmd(E.topRows(60), E.bottomRows(60), KernelSpec::linear());
  EXPECT_LT(after, before);
}

TEST(Tca, TransformOfTrainingPointsMatchesEmbedding) {
  std::mt19937_64 g(7);
  Matrix S = testutil::random_matrix(g, 10, 3).array() * 4.0 + 1.0;
  Matrix T = testutil::random_matrix(g, 8, 3);
  auto t = tca_fit(S, T, {.kernel = KernelSpec::rbf(0.0), .m = 4});
  EXPECT_GT(t.kernel.bandwidth, 0.0);
  Matrix E = tca_training_embedding(t);
  EXPECT_LT((tca_transform(t, S) - E.topRows(10)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((tca_transform(t, T) - E.bottomRows(8)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Tca, JsonRoundTripAndNamedTransform) {
  std::mt19937_64 g(8);
  features::FeatureMatrix S, T;
  S.names = T.names = {"a", "b"};
  for (int i = 0; i < 6; ++i) S.row_ids.push_back("s" + std::to_string(i));
  for (int i = 0; i < 5; ++i) T.row_ids.push_back("t" + std::to_string(i));
  S.values = testutil::random_matrix(g, 6, 2);
  T.values = testutil::random_matrix(g, 5, 2);
  auto t = tca_fit(S, T, {.kernel = KernelSpec::linear(), .m = 3});
  auto back = TcaTransform::from_json(nlohmann::json::parse(t.to_json().dump()));
  EXPECT_EQ(back.fingerprint, t.fingerprint);
  auto a = tca_transform(t, T), b = tca_transform(back, T);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.names, (std::vector<std::string>{"tca_000", "tca_001", "tca_002"}));

  features::FeatureMatrix swapped = T;
  swapped.names = {"b", "a"};
  swapped.values.col(0).swap(swapped.values.col(1));
  EXPECT_LT((tca_transform(t, swapped).values - a.values).cwiseAbs().maxCoeff(), 1e-12);
  swapped.names = {"b", "c"};
  EXPECT_THROW(tca_transform(t, swapped), Error);
}

TEST(Tca, OptionErrors) {
  Matrix S = Matrix::Identity(2, 2), T = Matrix::Identity(2, 2);
  EXPECT_THROW(tca_fit(S, T, {.m = 4}), Error);
  EXPECT_THROW(tca_fit(S, T, {.m = 0}), Error);
  EXPECT_THROW(tca_fit(S, T, {.m = 1, .mu = 0.0}), Error);
  EXPECT_THROW(tca_fit(S, Matrix::Identity(3, 3), {.m = 1}), Error);
}
