#pragma once

#include "common.hpp"
#include "features.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace stressmeter::adapt {

enum class Domain { source, target };

// ---------------------------------------------------------------------------
// EasyAdapt feature augmentation

/// source -> <x, x, 0>, target -> <x, 0, x>.
inline Vector easyadapt_augment(const Vector& x, Domain d) {
  const Eigen::Index F = x.size();
  Vector out = Vector::Zero(3 * F);
  out.head(F) = x;
  if (d == Domain::source) out.segment(F, F) = x;
  else out.tail(F) = x;
  return out;
}

inline std::vector<std::string> augmented_names(const std::vector<std::string>& names) {
  std::vector<std::string> out;
  out.reserve(3 * names.size());
  for (const char* suffix : {":shared", ":src", ":tgt"})
    for (const auto& n : names) out.push_back(n + suffix);
  return out;
}

inline Matrix easyadapt_augment(const Matrix& X, Domain d) {
  const Eigen::Index F = X.cols();
  Matrix out = Matrix::Zero(X.rows(), 3 * F);
  out.leftCols(F) = X;
  if (d == Domain::source) out.middleCols(F, F) = X;
  else out.rightCols(F) = X;
  return out;
}

/// Block order is shared, source, target; names carry the block suffix.
inline features::FeatureMatrix easyadapt_augment(const features::FeatureMatrix& X, Domain d) {
  features::FeatureMatrix out;
  out.row_ids = X.row_ids;
  out.names = augmented_names(X.names);
  out.values = easyadapt_augment(X.values, d);
  out.fingerprint = fingerprint(X.fingerprint + (d == Domain::source ? ";easyadapt:source" : ";easyadapt:target"));
  return out;
}

// ---------------------------------------------------------------------------
// Kernels and MMD

struct KernelSpec {
  enum class Kind { linear, rbf } kind = Kind::linear;
  double bandwidth = 0.0;  // rbf: k(a,b) = exp(-|a-b|^2 / (2 bandwidth^2))

  void validate() const {
    if (kind == Kind::rbf && !(bandwidth > 0.0)) fail_validation("rbf kernel bandwidth must be > 0");
  }

  std::string describe() const {
    return kind == Kind::linear ? "linear" : "rbf(" + format_double(bandwidth) + ")";
  }

  static KernelSpec linear() { return {}; }
  static KernelSpec rbf(double bandwidth) { return {Kind::rbf, bandwidth}; }
};

inline KernelSpec::Kind parse_kernel(std::string_view s) {
  if (s == "linear") return KernelSpec::Kind::linear;
  if (s == "rbf") return KernelSpec::Kind::rbf;
  fail_validation("unknown kernel '" + std::string(s) + "'");
}

/// Rows of A against rows of B.
inline Matrix kernel_matrix(const Matrix& A, const Matrix& B, const KernelSpec& k) {
  k.validate();
  if (A.cols() != B.cols()) fail_validation("kernel_matrix: dimension mismatch");
  Matrix G = A * B.transpose();
  if (k.kind == KernelSpec::Kind::linear) return G;
  Vector a2 = A.rowwise().squaredNorm();
  Vector b2 = B.rowwise().squaredNorm();
  const double gamma = 1.0 / (2.0 * k.bandwidth * k.bandwidth);
  for (Eigen::Index i = 0; i < G.rows(); ++i)
    for (Eigen::Index j = 0; j < G.cols(); ++j)
      G(i, j) = std::exp(-gamma * std::max(0.0, a2(i) + b2(j) - 2.0 * G(i, j)));
  return G;
}

/// Median Euclidean distance over all distinct pairs of rows.
inline double median_pairwise_distance(const Matrix& X) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(X.rows() * (X.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = i + 1; j < X.rows(); ++j) d.push_back((X.row(i) - X.row(j)).norm());
  if (d.empty()) fail_validation("median heuristic needs at least two points");
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  if (!(med > 0.0)) fail_validation("median pairwise distance is zero; set an explicit bandwidth");
  return med;
}

/// Empirical MMD: RKHS distance between the two sample means. The linear
/// kernel is evaluated as the Euclidean distance of the feature means.
inline double mmd(const Matrix& S, const Matrix& T, const KernelSpec& k) {
  if (S.rows() < 1 || T.rows() < 1) fail_validation("mmd: both samples need at least one row");
  if (S.cols() != T.cols()) fail_validation("mmd: dimension mismatch");
  k.validate();
  if (k.kind == KernelSpec::Kind::linear)
    return (S.colwise().mean() - T.colwise().mean()).norm();
  double ss = kernel_matrix(S, S, k).mean();
  double tt = kernel_matrix(T, T, k).mean();
  double st = kernel_matrix(S, T, k).mean();
  return std::sqrt(std::max(0.0, ss + tt - 2.0 * st));
}

// ---------------------------------------------------------------------------
// Symmetric-definite generalized eigenproblem

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // columns; B-orthonormal for the generalized problem
  int sweeps = 0;
};

/// Lower Cholesky factor of a symmetric positive-definite matrix.
inline Matrix cholesky_lower(const Matrix& B) {
  const Eigen::Index n = B.rows();
  Matrix L = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = B(j, j) - L.row(j).head(j).squaredNorm();
    if (!(d > 0.0))
      fail_numerical("matrix is not positive definite: Cholesky pivot " + std::to_string(j) + " is " + format_double(d));
    double ljj = std::sqrt(d);
    L(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) L(i, j) = (B(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / ljj;
  }
  return L;
}

inline double off_diagonal_norm(const Matrix& A) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < A.cols(); ++j)
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      if (i != j) s += A(i, j) * A(i, j);
  return std::sqrt(s);
}

/// Cyclic Jacobi rotations until the off-diagonal norm falls below
/// tol * max(1, |A|_F). Eigenpairs are returned in input order (unsorted).
///
/// Storage is column major, so each rotation (p, q) is applied to columns p
/// and q at once while its effect on rows p and q of the other columns is
/// queued. A column replays the queued rotations of the current round just
/// before it is next read, which keeps every access contiguous.
inline EigenDecomposition jacobi_eigen(Matrix A, double tol = 1e-10, int max_sweeps = 100) {
  const Eigen::Index n = A.rows();
  Matrix V = Matrix::Identity(n, n);
  const double target = tol * std::max(1.0, A.norm());
  EigenDecomposition out;
  struct Rotation {
    Eigen::Index q;
    double c, s;
  };
  std::vector<Rotation> pending;
  std::vector<std::size_t> replayed(static_cast<std::size_t>(n));  // per column: rotations already applied
  auto replay = [&](Eigen::Index p, Eigen::Index k, std::size_t upto) {
    double* col = A.col(k).data();
    for (std::size_t r = replayed[static_cast<std::size_t>(k)]; r < upto; ++r) {
      const auto& rot = pending[r];
      if (rot.q == k) continue;
      const double x = col[p], y = col[rot.q];
      col[p] = rot.c * x - rot.s * y;
      col[rot.q] = rot.s * x + rot.c * y;
    }
    replayed[static_cast<std::size_t>(k)] = upto;
  };
  auto rotate_columns = [n](double* a, double* b, double c, double s) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double x = a[k], y = b[k];
      a[k] = c * x - s * y;
      b[k] = s * x + c * y;
    }
  };
  for (int sweep = 0;; ++sweep) {
    double off = off_diagonal_norm(A);
    if (off <= target) {
      out.sweeps = sweep;
      break;
    }
    if (sweep == max_sweeps)
      fail_numerical("Jacobi eigensolver did not converge after " + std::to_string(max_sweeps) +
                     " sweeps (off-diagonal norm " + format_double(off) + ")");
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      pending.clear();
      std::fill(replayed.begin(), replayed.end(), 0);
      for (Eigen::Index q = p + 1; q < n; ++q) {
        replay(p, q, pending.size());
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        const double app = A(p, p), aqq = A(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        rotate_columns(A.col(p).data(), A.col(q).data(), c, s);
        A(p, p) = app - t * apq;
        A(q, q) = aqq + t * apq;
        A(p, q) = A(q, p) = 0.0;
        rotate_columns(V.col(p).data(), V.col(q).data(), c, s);
        pending.push_back({q, c, s});
        replayed[static_cast<std::size_t>(q)] = pending.size();
      }
      for (Eigen::Index k = 0; k < n; ++k)
        if (k != p) replay(p, k, pending.size());
    }
  }
  out.values = A.diagonal();
  out.vectors = std::move(V);
  return out;
}

namespace detail {

inline double max_asymmetry(const Matrix& A) { return (A - A.transpose()).cwiseAbs().maxCoeff(); }

inline void sort_descending_fix_signs(EigenDecomposition& e) {
  const Eigen::Index n = e.values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return e.values(a) > e.values(b); });
  Vector vals(n);
  Matrix vecs(e.vectors.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    vals(j) = e.values(order[static_cast<std::size_t>(j)]);
    vecs.col(j) = e.vectors.col(order[static_cast<std::size_t>(j)]);
    Eigen::Index arg = 0;
    vecs.col(j).cwiseAbs().maxCoeff(&arg);
    if (vecs(arg, j) < 0) vecs.col(j) = -vecs.col(j);
  }
  e.values = std::move(vals);
  e.vectors = std::move(vecs);
}

}  // namespace detail

/// Solves A v = lambda B v for symmetric A and symmetric positive-definite B:
/// Cholesky-reduce to L^-1 A L^-T, diagonalize by Jacobi, back-transform.
/// Eigenvalues descending; each eigenvector's largest-magnitude entry is positive.
inline EigenDecomposition sym_eig(const Matrix& A, const Matrix& B) {
  if (A.rows() != A.cols() || B.rows() != B.cols() || A.rows() != B.rows())
    fail_validation("sym_eig: A and B must be square and of equal size");
  if (detail::max_asymmetry(A) > 1e-9 * std::max(1.0, A.cwiseAbs().maxCoeff())) fail_validation("sym_eig: A is not symmetric");
  if (detail::max_asymmetry(B) > 1e-9 * std::max(1.0, B.cwiseAbs().maxCoeff())) fail_validation("sym_eig: B is not symmetric");
  Matrix L = cholesky_lower(B);
  auto lower = L.triangularView<Eigen::Lower>();
  Matrix Y = lower.solve(A);                              // L^-1 A
  Matrix C = lower.solve(Y.transpose()).transpose();      // L^-1 A L^-T
  C = (0.5 * (C + C.transpose())).eval();
  auto e = jacobi_eigen(std::move(C));
  e.vectors = L.transpose().triangularView<Eigen::Upper>().solve(e.vectors);
  detail::sort_descending_fix_signs(e);
  return e;
}

// ---------------------------------------------------------------------------
// Transfer Component Analysis

struct TcaOptions {
  KernelSpec kernel;  // rbf with bandwidth 0 means: use the median heuristic
  int m = 30;
  double mu = 1.0;
  bool standardize = true;  // z-score columns on the stacked sample first
};

struct TcaTransform {
  std::vector<std::string> feature_names;
  Vector column_mean;
  Vector column_scale;
  Matrix training;  // standardized points: source rows then target rows
  Eigen::Index n_source = 0;
  Eigen::Index n_target = 0;
  KernelSpec kernel;
  double mu = 1.0;
  int m = 0;
  Matrix W;  // (n_source + n_target) x m
  Vector eigenvalues;
  std::string fingerprint;

  std::vector<std::string> component_names() const {
    std::size_t width = std::max<std::size_t>(3, std::to_string(m).size());
    std::vector<std::string> out;
    for (int j = 0; j < m; ++j) {
      std::string idx = std::to_string(j);
      out.push_back("tca_" + std::string(width - idx.size(), '0') + idx);
    }
    return out;
  }

  nlohmann::ordered_json to_json() const {
    auto rows_of = [](const Matrix& M) {
      std::vector<std::vector<double>> out(static_cast<std::size_t>(M.rows()));
      for (Eigen::Index i = 0; i < M.rows(); ++i) {
        auto& r = out[static_cast<std::size_t>(i)];
        r.resize(static_cast<std::size_t>(M.cols()));
        for (Eigen::Index j = 0; j < M.cols(); ++j) r[static_cast<std::size_t>(j)] = M(i, j);
      }
      return out;
    };
    nlohmann::ordered_json j;
    j["kind"] = "tca_transform";
    j["kernel"] = {{"kind", kernel.kind == KernelSpec::Kind::linear ? "linear" : "rbf"}, {"bandwidth", kernel.bandwidth}};
    j["mu"] = mu;
    j["m"] = m;
    j["n_source"] = n_source;
    j["n_target"] = n_target;
    j["feature_names"] = feature_names;
    j["column_mean"] = std::vector<double>(column_mean.data(), column_mean.data() + column_mean.size());
    j["column_scale"] = std::vector<double>(column_scale.data(), column_scale.data() + column_scale.size());
    j["eigenvalues"] = std::vector<double>(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
    j["training_points"] = rows_of(training);
    j["W"] = rows_of(W);
    j["provenance"] = {{"fingerprint", fingerprint}};
    return j;
  }

  static TcaTransform from_json(const nlohmann::json& j) {
    auto matrix_of = [](const nlohmann::json& a, Eigen::Index cols) {
      Matrix M(static_cast<Eigen::Index>(a.size()), cols);
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (static_cast<Eigen::Index>(a[i].size()) != cols) fail_validation("tca transform: ragged matrix");
        for (std::size_t k = 0; k < a[i].size(); ++k) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = a[i][k].get<double>();
      }
      return M;
    };
    auto vec_of = [](const nlohmann::json& a) {
      auto v = a.get<std::vector<double>>();
      return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
    };
    try {
      if (j.at("kind").get<std::string>() != "tca_transform") fail_validation("not a tca_transform JSON document");
      TcaTransform t;
      t.kernel.kind = parse_kernel(j.at("kernel").at("kind").get<std::string>());
      t.kernel.bandwidth = j.at("kernel").at("bandwidth").get<double>();
      t.mu = j.at("mu").get<double>();
      t.m = j.at("m").get<int>();
      t.n_source = j.at("n_source").get<Eigen::Index>();
      t.n_target = j.at("n_target").get<Eigen::Index>();
      t.feature_names = j.at("feature_names").get<std::vector<std::string>>();
      t.column_mean = vec_of(j.at("column_mean"));
      t.column_scale = vec_of(j.at("column_scale"));
      t.eigenvalues = vec_of(j.at("eigenvalues"));
      const auto d = static_cast<Eigen::Index>(t.feature_names.size());
      t.training = matrix_of(j.at("training_points"), d);
      t.W = matrix_of(j.at("W"), t.m);
      t.fingerprint = j.at("provenance").at("fingerprint").get<std::string>();
      if (t.training.rows() != t.n_source + t.n_target || t.W.rows() != t.training.rows())
        fail_validation("tca transform: inconsistent shapes");
      if (t.column_mean.size() != d || t.column_scale.size() != d) fail_validation("tca transform: inconsistent shapes");
      t.kernel.validate();
      return t;
    } catch (const nlohmann::json::exception& e) {
      fail_validation(std::string("malformed TCA transform JSON: ") + e.what());
    }
  }
};

/// Centering and MMD matrices for n1 source and n2 target points.
inline Matrix mmd_matrix(Eigen::Index n1, Eigen::Index n2) {
  Vector e(n1 + n2);
  e.head(n1).setConstant(1.0 / static_cast<double>(n1));
  e.tail(n2).setConstant(-1.0 / static_cast<double>(n2));
  return e * e.transpose();
}

inline TcaTransform tca_fit(const Matrix& XS, const Matrix& XT, const TcaOptions& opts,
                            std::vector<std::string> feature_names = {}) {
  if (XS.cols() != XT.cols()) fail_validation("tca_fit: source and target dimensions differ");
  const Eigen::Index n1 = XS.rows(), n2 = XT.rows(), n = n1 + n2;
  if (n1 < 1 || n2 < 1) fail_validation("tca_fit: both domains need at least one row");
  if (opts.m < 1) fail_validation("tca_fit: m must be >= 1");
  if (opts.m > n - 1)
    fail_validation("tca_fit: m=" + std::to_string(opts.m) + " too large for " + std::to_string(n) + " points (max n-1)");
  if (!(opts.mu > 0.0)) fail_validation("tca_fit: mu must be > 0");
  if (feature_names.empty())
    for (Eigen::Index j = 0; j < XS.cols(); ++j) feature_names.push_back("x" + std::to_string(j));
  if (static_cast<Eigen::Index>(feature_names.size()) != XS.cols()) fail_validation("tca_fit: feature names do not match columns");

  TcaTransform t;
  t.feature_names = std::move(feature_names);
  t.n_source = n1;
  t.n_target = n2;
  t.mu = opts.mu;
  t.m = opts.m;
  Matrix X(n, XS.cols());
  X.topRows(n1) = XS;
  X.bottomRows(n2) = XT;
  t.column_mean = Vector::Zero(X.cols());
  t.column_scale = Vector::Ones(X.cols());
  if (opts.standardize) {
    t.column_mean = X.colwise().mean();
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      double sd = std::sqrt((X.col(j).array() - t.column_mean(j)).square().mean());
      t.column_scale(j) = sd > 0 ? sd : 1.0;
    }
    X = (X.rowwise() - t.column_mean.transpose()).array().rowwise() / t.column_scale.transpose().array();
  }
  t.training = X;
  t.kernel = opts.kernel;
  if (t.kernel.kind == KernelSpec::Kind::rbf && !(t.kernel.bandwidth > 0.0)) t.kernel.bandwidth = median_pairwise_distance(X);

  Matrix K = kernel_matrix(X, X, t.kernel);
  Vector e(n);
  e.head(n1).setConstant(1.0 / static_cast<double>(n1));
  e.tail(n2).setConstant(-1.0 / static_cast<double>(n2));
  Vector Ke = K * e;
  Matrix HK = K.rowwise() - K.colwise().mean();  // (I - 11'/n) K
  Matrix A = K * HK;
  A = (0.5 * (A + A.transpose())).eval();
  Matrix B = Ke * Ke.transpose() + opts.mu * Matrix::Identity(n, n);
  auto eig = sym_eig(A, B);
  t.W = eig.vectors.leftCols(opts.m);
  t.eigenvalues = eig.values.head(opts.m);

  Fnv1a h;
  h.update("tca;" + t.kernel.describe() + ";mu=" + format_double(t.mu) + ";m=" + std::to_string(t.m));
  for (const auto& name : t.feature_names) h.update(name + "\x1f");
  for (Eigen::Index i = 0; i < X.size(); ++i) h.update(X.data()[i]);
  t.fingerprint = h.hex();
  return t;
}

inline TcaTransform tca_fit(const features::FeatureMatrix& XS, const features::FeatureMatrix& XT, const TcaOptions& opts) {
  if (XS.names != XT.names) fail_validation("tca_fit: source and target feature columns differ");
  return tca_fit(XS.values, XT.values, opts, XS.names);
}

/// Out-of-sample embedding: k(X_new, X_train) W.
inline Matrix tca_transform(const TcaTransform& t, const Matrix& X_new) {
  if (X_new.cols() != t.training.cols())
    fail_validation("tca_transform: input has " + std::to_string(X_new.cols()) + " columns, transform expects " +
                    std::to_string(t.training.cols()));
  Matrix Z = (X_new.rowwise() - t.column_mean.transpose()).array().rowwise() / t.column_scale.transpose().array();
  return kernel_matrix(Z, t.training, t.kernel) * t.W;
}

inline Matrix tca_training_embedding(const TcaTransform& t) {
  return kernel_matrix(t.training, t.training, t.kernel) * t.W;
}

/// Name-aligned embedding; missing transform features are an error.
inline features::FeatureMatrix tca_transform(const TcaTransform& t, const features::FeatureMatrix& X) {
  Matrix aligned(static_cast<Eigen::Index>(X.rows()), static_cast<Eigen::Index>(t.feature_names.size()));
  std::vector<std::string> missing;
  for (std::size_t j = 0; j < t.feature_names.size(); ++j) {
    auto c = X.column(t.feature_names[j]);
    if (c < 0) missing.push_back(t.feature_names[j]);
    else aligned.col(static_cast<Eigen::Index>(j)) = X.values.col(c);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    fail_validation("tca_transform: " + std::to_string(missing.size()) + " features missing from input: " + list);
  }
  features::FeatureMatrix out;
  out.row_ids = X.row_ids;
  out.names = t.component_names();
  out.values = tca_transform(t, aligned);
  out.fingerprint = t.fingerprint;
  return out;
}

}  // namespace stressmeter::adapt
