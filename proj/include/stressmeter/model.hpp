#pragma once

#include "common.hpp"
#include "features.hpp"
#include "rng.hpp"
#include "stats.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace stressmeter::model {

struct Hyperparameters {
  double lambda = 0.0;
  double l1_ratio = 0.5;

  bool operator==(const Hyperparameters&) const = default;
};

struct FitOptions {
  double tol = 1e-7;
  int max_iter = 10000;
};

/// Elastic-net regression on standardized columns. Weights live on the
/// standardized scale; predict() applies (x - mean) / scale first.
struct LinearModel {
  std::vector<std::string> feature_names;
  Vector weights;
  double intercept = 0.0;
  Vector means;
  Vector scales;
  Hyperparameters hyper;
  std::string sample_weight_policy = "uniform";
  std::string adaptation = "none";  // none | easyadapt | tca
  std::string transform_fingerprint;
  std::string training_fingerprint;
  std::uint64_t seed = 0;
  int iterations = 0;

  void validate() const {
    auto p = static_cast<Eigen::Index>(feature_names.size());
    if (weights.size() != p || means.size() != p || scales.size() != p)
      fail_validation("linear model: weights/means/scales length differs from feature names");
    for (Eigen::Index j = 0; j < p; ++j)
      if (!(scales(j) > 0.0)) fail_validation("corrupt model: scale of feature " + feature_names[static_cast<std::size_t>(j)] + " is not positive");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = "linear_model";
    j["feature_names"] = feature_names;
    j["weights"] = std::vector<double>(weights.data(), weights.data() + weights.size());
    j["intercept"] = intercept;
    j["means"] = std::vector<double>(means.data(), means.data() + means.size());
    j["scales"] = std::vector<double>(scales.data(), scales.data() + scales.size());
    j["hyperparameters"] = {{"lambda", hyper.lambda}, {"l1_ratio", hyper.l1_ratio}};
    j["sample_weight_policy"] = sample_weight_policy;
    j["adaptation"] = {{"method", adaptation}, {"transform_fingerprint", transform_fingerprint}};
    j["provenance"] = {{"training_fingerprint", training_fingerprint}, {"seed", seed}, {"iterations", iterations}};
    return j;
  }

  static LinearModel from_json(const nlohmann::json& j) {
    try {
      if (j.at("kind").get<std::string>() != "linear_model") fail_validation("not a linear_model JSON document");
      LinearModel m;
      m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
      auto to_vec = [](const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())).eval(); };
      m.weights = to_vec(j.at("weights").get<std::vector<double>>());
      m.intercept = j.at("intercept").get<double>();
      m.means = to_vec(j.at("means").get<std::vector<double>>());
      m.scales = to_vec(j.at("scales").get<std::vector<double>>());
      m.hyper.lambda = j.at("hyperparameters").at("lambda").get<double>();
      m.hyper.l1_ratio = j.at("hyperparameters").at("l1_ratio").get<double>();
      m.sample_weight_policy = j.at("sample_weight_policy").get<std::string>();
      m.adaptation = j.at("adaptation").at("method").get<std::string>();
      m.transform_fingerprint = j.at("adaptation").at("transform_fingerprint").get<std::string>();
      m.training_fingerprint = j.at("provenance").at("training_fingerprint").get<std::string>();
      m.seed = j.at("provenance").at("seed").get<std::uint64_t>();
      m.iterations = j.at("provenance").at("iterations").get<int>();
      m.validate();
      return m;
    } catch (const nlohmann::json::exception& e) {
      fail_validation(std::string("malformed model JSON: ") + e.what());
    }
  }
};

inline double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

inline Vector normalized_weights(const std::optional<Vector>& w, Eigen::Index n) {
  if (!w) return Vector::Constant(n, 1.0 / static_cast<double>(n));
  if (w->size() != n) fail_validation("sample weights length differs from number of rows");
  if ((w->array() < 0).any() || !w->allFinite()) fail_validation("sample weights must be finite and non-negative");
  double s = w->sum();
  if (!(s > 0)) fail_validation("sample weights sum to zero");
  return *w / s;
}

struct Standardized {
  Matrix Z;
  Vector mean;
  Vector scale;
  Vector col_sq;  // sum_i v_i z_ij^2; 0 for constant columns
  Matrix gram;    // Z' diag(v) Z when the design is narrow enough to cache; else empty
};

inline constexpr Eigen::Index kMaxGramColumns = 2048;

/// Weighted z-scoring. Constant columns get scale 1 and an all-zero Z column.
inline Standardized standardize(const Matrix& X, const Vector& v) {
  Standardized s;
  const Eigen::Index p = X.cols();
  s.mean = X.transpose() * v;
  s.scale.resize(p);
  s.col_sq.resize(p);
  s.Z.resize(X.rows(), p);
  for (Eigen::Index j = 0; j < p; ++j) {
    Vector centered = X.col(j).array() - s.mean(j);
    double var = v.dot(centered.cwiseProduct(centered));
    bool constant = X.col(j).maxCoeff() == X.col(j).minCoeff();
    if (constant || !(var > 0)) {
      s.scale(j) = 1.0;
      s.Z.col(j).setZero();
      s.col_sq(j) = 0.0;
    } else {
      s.scale(j) = std::sqrt(var);
      s.Z.col(j) = centered / s.scale(j);
      s.col_sq(j) = v.dot(s.Z.col(j).cwiseProduct(s.Z.col(j)));
    }
  }
  if (p <= kMaxGramColumns) {
    Matrix VZ = s.Z.array().colwise() * v.array();
    s.gram = s.Z.transpose() * VZ;
    s.gram.diagonal() = s.col_sq;
  }
  return s;
}

inline double objective(const Matrix& Z, const Vector& yc, const Vector& v, const Vector& beta, const Hyperparameters& hp) {
  Vector r = yc - Z * beta;
  return 0.5 * v.dot(r.cwiseProduct(r)) +
         hp.lambda * (hp.l1_ratio * beta.lpNorm<1>() + 0.5 * (1.0 - hp.l1_ratio) * beta.squaredNorm());
}

struct DescentResult {
  Vector beta;
  int iterations = 0;
  double last_delta = 0.0;
};

/// Cyclic coordinate descent with soft-thresholding on a standardized design.
/// v holds normalized sample weights; yc is the weighted-centered response.
inline DescentResult coordinate_descent(const Standardized& s, const Vector& yc, const Vector& v,
                                        const Hyperparameters& hp, const FitOptions& opts, Vector beta,
                                        std::vector<double>* objective_trace = nullptr) {
  if (!(hp.lambda >= 0.0)) fail_validation("lambda must be >= 0");
  if (!(hp.l1_ratio >= 0.0 && hp.l1_ratio <= 1.0)) fail_validation("l1_ratio must lie in [0,1]");
  const Eigen::Index n = s.Z.rows(), p = s.Z.cols();
  const double l1 = hp.lambda * hp.l1_ratio;
  const double l2 = hp.lambda * (1.0 - hp.l1_ratio);
  DescentResult out;
  if (objective_trace) objective_trace->push_back(objective(s.Z, yc, v, beta, hp));
  auto finish_sweep = [&](int it, double max_delta) {
    if (objective_trace) objective_trace->push_back(objective(s.Z, yc, v, beta, hp));
    out.iterations = it;
    out.last_delta = max_delta;
    return max_delta < opts.tol;
  };
  auto update = [&](Eigen::Index j, double g) {
    double updated = soft_threshold(g, l1) / (s.col_sq(j) + l2);
    double delta = updated - beta(j);
    beta(j) = updated;
    return delta;
  };
  if (s.gram.size() > 0) {
    // Covariance updates: g_j = c_j - (G beta)_j + G_jj beta_j, with G beta
    // maintained incrementally. Same iterates as the residual form.
    Vector c = s.Z.transpose() * v.cwiseProduct(yc);
    Vector q = s.gram * beta;
    for (int it = 1; it <= opts.max_iter; ++it) {
      double max_delta = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (s.col_sq(j) == 0.0) {
          beta(j) = 0.0;
          continue;
        }
        double delta = update(j, c(j) - q(j) + s.col_sq(j) * beta(j));
        if (delta != 0.0) {
          q += delta * s.gram.col(j);
          max_delta = std::max(max_delta, std::abs(delta));
        }
      }
      if (finish_sweep(it, max_delta)) {
        out.beta = std::move(beta);
        return out;
      }
    }
  } else {
    Vector r = yc - s.Z * beta;
    for (int it = 1; it <= opts.max_iter; ++it) {
      double max_delta = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (s.col_sq(j) == 0.0) {
          beta(j) = 0.0;
          continue;
        }
        auto zj = s.Z.col(j);
        double g = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) g += v(i) * zj(i) * r(i);
        double delta = update(j, g + s.col_sq(j) * beta(j));
        if (delta != 0.0) {
          r -= delta * zj;
          max_delta = std::max(max_delta, std::abs(delta));
        }
      }
      if (finish_sweep(it, max_delta)) {
        out.beta = std::move(beta);
        return out;
      }
    }
  }
  fail_numerical("elastic net did not converge after " + std::to_string(out.iterations) +
                 " sweeps (last max coefficient change " + format_double(out.last_delta) + ")");
}

inline LinearModel fit_elastic_net(const Matrix& X, const std::vector<std::string>& names, const Vector& y,
                                   const Hyperparameters& hp, const std::optional<Vector>& sample_weights = std::nullopt,
                                   const FitOptions& opts = {}, std::vector<double>* objective_trace = nullptr) {
  if (X.rows() != y.size()) fail_validation("fit_elastic_net: X and y row counts differ");
  if (X.rows() < 2) fail_validation("fit_elastic_net: need at least 2 rows");
  if (static_cast<std::size_t>(X.cols()) != names.size()) fail_validation("fit_elastic_net: names do not match columns");
  if (!X.allFinite() || !y.allFinite()) fail_validation("fit_elastic_net: NaN or infinite input");
  Vector v = normalized_weights(sample_weights, X.rows());
  Standardized s = standardize(X, v);
  double ybar = v.dot(y);
  Vector yc = y.array() - ybar;
  auto res = coordinate_descent(s, yc, v, hp, opts, Vector::Zero(X.cols()), objective_trace);
  LinearModel m;
  m.feature_names = names;
  m.weights = res.beta;
  m.intercept = ybar;
  m.means = s.mean;
  m.scales = s.scale;
  m.hyper = hp;
  m.sample_weight_policy = sample_weights ? "custom" : "uniform";
  m.iterations = res.iterations;
  return m;
}

inline LinearModel fit_elastic_net(const features::FeatureMatrix& X, const Vector& y, const Hyperparameters& hp,
                                   const std::optional<Vector>& sample_weights = std::nullopt, const FitOptions& opts = {}) {
  X.validate();
  auto m = fit_elastic_net(X.values, X.names, y, hp, sample_weights, opts);
  m.training_fingerprint = X.fingerprint;
  return m;
}

/// Columns already in model order.
inline Vector predict_aligned(const LinearModel& m, const Matrix& X) {
  m.validate();
  if (X.cols() != m.weights.size()) fail_validation("predict: column count differs from model");
  Vector scaled_w = m.weights.cwiseQuotient(m.scales);
  double offset = m.intercept - scaled_w.dot(m.means);
  return (X * scaled_w).array() + offset;
}

/// Aligns columns by name. Missing model features are an error; extra
/// input columns are ignored and listed in `ignored` when given.
inline Vector predict(const LinearModel& m, const features::FeatureMatrix& X, std::vector<std::string>* ignored = nullptr) {
  m.validate();
  std::map<std::string, Eigen::Index> pos;
  for (std::size_t j = 0; j < X.names.size(); ++j) pos.emplace(X.names[j], static_cast<Eigen::Index>(j));
  std::vector<std::string> missing;
  Matrix aligned(static_cast<Eigen::Index>(X.rows()), static_cast<Eigen::Index>(m.feature_names.size()));
  std::set<std::string> used;
  for (std::size_t j = 0; j < m.feature_names.size(); ++j) {
    auto it = pos.find(m.feature_names[j]);
    if (it == pos.end()) {
      missing.push_back(m.feature_names[j]);
      continue;
    }
    used.insert(it->first);
    aligned.col(static_cast<Eigen::Index>(j)) = X.values.col(it->second);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ...";
    fail_validation("predict: " + std::to_string(missing.size()) + " model features missing from input: " + list);
  }
  if (ignored)
    for (const auto& name : X.names)
      if (!used.count(name)) ignored->push_back(name);
  return predict_aligned(m, aligned);
}

/// Largest KKT violation of a fitted model on its training data, measured on
/// the standardized scale.
inline double kkt_violation(const LinearModel& m, const Matrix& X, const Vector& y,
                            const std::optional<Vector>& sample_weights = std::nullopt) {
  Vector v = normalized_weights(sample_weights, X.rows());
  Standardized s = standardize(X, v);
  Vector r = (y.array() - m.intercept).matrix() - s.Z * m.weights;
  const double l1 = m.hyper.lambda * m.hyper.l1_ratio;
  const double l2 = m.hyper.lambda * (1.0 - m.hyper.l1_ratio);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (s.col_sq(j) == 0.0) continue;
    double grad = -v.dot(s.Z.col(j).cwiseProduct(r));
    double b = m.weights(j);
    double viol = b != 0.0 ? std::abs(grad + l2 * b + l1 * (b > 0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(grad) - l1);
    worst = std::max(worst, viol);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Folds

struct StratRow {
  std::string id;
  double age = 0.0;
  std::string gender;
};

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold;

  int of(const std::string& id) const {
    auto it = fold.find(id);
    if (it == fold.end()) fail_validation("row " + id + " has no fold assignment");
    return it->second;
  }

  std::vector<int> sizes() const {
    std::vector<int> s(static_cast<std::size_t>(k), 0);
    for (const auto& [_, f] : fold) ++s[static_cast<std::size_t>(f)];
    return s;
  }

  std::vector<int> for_rows(const std::vector<std::string>& ids) const {
    std::vector<int> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(of(id));
    return out;
  }
};

/// Within each gender, rows ordered by (age, id) are dealt round-robin to
/// folds. One counter runs across strata, starting at a seed-derived offset,
/// so fold sizes differ by at most one.
inline FoldAssignment stratified_folds(std::vector<StratRow> rows, int k, std::uint64_t seed) {
  if (k < 1) fail_validation("stratified_folds: k must be >= 1");
  if (static_cast<std::size_t>(k) > rows.size())
    fail_validation("stratified_folds: k=" + std::to_string(k) + " exceeds number of rows " + std::to_string(rows.size()));
  std::sort(rows.begin(), rows.end(), [](const StratRow& a, const StratRow& b) {
    return std::tie(a.gender, a.age, a.id) < std::tie(b.gender, b.age, b.id);
  });
  auto rng = RandomStreams(seed).stream("folds");
  std::size_t counter = static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(k));
  FoldAssignment fa;
  fa.k = k;
  for (const auto& r : rows) {
    if (!fa.fold.emplace(r.id, static_cast<int>(counter % static_cast<std::size_t>(k))).second)
      fail_validation("stratified_folds: duplicate row id " + r.id);
    ++counter;
  }
  return fa;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct Grid {
  std::vector<double> lambdas;    // any order; searched descending
  std::vector<double> l1_ratios;

  static Grid defaults() {
    Grid g;
    for (int i = 0; i <= 12; ++i) g.lambdas.push_back(std::pow(10.0, -4.0 + 5.0 * i / 12.0));
    g.l1_ratios = {0.0, 0.5, 1.0};
    return g;
  }

  bool empty() const { return lambdas.empty() || l1_ratios.empty(); }
};

struct CvOptions {
  int inner_k = 3;
  FitOptions fit;
};

struct Selection {
  Hyperparameters hyper;
  double inner_mse = 0.0;
  std::size_t skipped_points = 0;  // grid points that failed to converge
};

/// Inner k-fold grid search on one training set. Inner folds deal rows sorted
/// by (y, position) round-robin. Each l1_ratio is solved along a descending
/// lambda path with warm starts; the grid point with lowest pooled squared
/// error wins, ties going to the larger lambda. A point that fails to converge
/// ends its path: the remaining smaller lambdas are skipped.
inline Selection select_hyperparameters(const Matrix& X, const Vector& y, const Grid& grid, const CvOptions& opts,
                                        const std::optional<Vector>& sample_weights = std::nullopt) {
  if (grid.empty()) fail_validation("hyperparameter grid is empty");
  const Eigen::Index n = X.rows();
  const int k = std::max(2, std::min<int>(opts.inner_k, static_cast<int>(n) / 2));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return y(a) < y(b); });
  std::vector<int> inner(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) inner[static_cast<std::size_t>(order[i])] = static_cast<int>(i % static_cast<std::size_t>(k));

  std::vector<double> lambdas = grid.lambdas;
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  const std::size_t G = lambdas.size() * grid.l1_ratios.size();
  std::vector<double> sse(G, 0.0);
  std::vector<bool> failed(G, false);

  for (int f = 0; f < k; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index i = 0; i < n; ++i) (inner[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
    Matrix Xtr = X(tr, Eigen::all), Xte = X(te, Eigen::all);
    Vector ytr = y(tr), yte = y(te);
    std::optional<Vector> wtr;
    if (sample_weights) wtr = (*sample_weights)(tr);
    Vector v = normalized_weights(wtr, Xtr.rows());
    Standardized s = standardize(Xtr, v);
    double ybar = v.dot(ytr);
    Vector yc = ytr.array() - ybar;
    Matrix Zte = (Xte.rowwise() - s.mean.transpose()).array().rowwise() / s.scale.transpose().array();
    for (std::size_t a = 0; a < grid.l1_ratios.size(); ++a) {
      Vector beta = Vector::Zero(X.cols());
      for (std::size_t l = 0; l < lambdas.size(); ++l) {
        std::size_t g = a * lambdas.size() + l;
        if (failed[g]) continue;
        try {
          auto res = coordinate_descent(s, yc, v, {lambdas[l], grid.l1_ratios[a]}, opts.fit, beta);
          beta = res.beta;
          Vector pred = (Zte * beta).array() + ybar;
          sse[g] += (pred - yte).squaredNorm();
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::numerical) throw;
          // smaller lambdas on this path are harder still; skip them
          for (std::size_t rest = l; rest < lambdas.size(); ++rest) failed[a * lambdas.size() + rest] = true;
          break;
        }
      }
    }
  }
  Selection sel;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < grid.l1_ratios.size(); ++a)
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
      std::size_t g = a * lambdas.size() + l;
      if (failed[g]) {
        ++sel.skipped_points;
        continue;
      }
      if (sse[g] < best) {
        best = sse[g];
        sel.hyper = {lambdas[l], grid.l1_ratios[a]};
      }
    }
  if (!std::isfinite(best)) fail_numerical("no grid point converged during hyperparameter selection");
  sel.inner_mse = best / static_cast<double>(n);
  return sel;
}

struct FoldSplit {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

inline std::vector<FoldSplit> splits_from(std::span<const int> fold_of_row, int k) {
  std::vector<FoldSplit> out(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < fold_of_row.size(); ++i) {
    int f = fold_of_row[i];
    if (f < 0 || f >= k) fail_validation("fold index out of range");
    for (int g = 0; g < k; ++g) (g == f ? out[static_cast<std::size_t>(g)].test : out[static_cast<std::size_t>(g)].train).push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

/// Pearson r of pooled predictions; a constant prediction vector scores 0.
inline double pooled_r(const Vector& pred, const Vector& y) {
  if (stats::is_constant(stats::as_span(pred))) return 0.0;
  return stats::pearson(pred, y);
}

struct CvResult {
  Vector oof_predictions;
  double pearson_r = 0.0;
  std::vector<Hyperparameters> chosen;  // per outer fold
};

/// Outer k-fold evaluation with nested hyperparameter selection per fold.
inline CvResult cross_validate(const Matrix& X, const Vector& y, std::span<const int> fold_of_row, int k,
                               const Grid& grid, const CvOptions& opts = {},
                               const std::optional<Vector>& sample_weights = std::nullopt) {
  if (grid.empty()) fail_validation("hyperparameter grid is empty");
  if (static_cast<Eigen::Index>(fold_of_row.size()) != X.rows() || y.size() != X.rows())
    fail_validation("cross_validate: folds, X and y are not aligned");
  CvResult out;
  out.oof_predictions = Vector::Zero(X.rows());
  std::vector<std::string> names(static_cast<std::size_t>(X.cols()));
  for (const auto& split : splits_from(fold_of_row, k)) {
    if (split.test.empty()) fail_validation("cross_validate: empty fold");
    Matrix Xtr = X(split.train, Eigen::all);
    Vector ytr = y(split.train);
    std::optional<Vector> wtr;
    if (sample_weights) wtr = (*sample_weights)(split.train);
    auto sel = select_hyperparameters(Xtr, ytr, grid, opts, wtr);
    auto m = fit_elastic_net(Xtr, names, ytr, sel.hyper, wtr, opts.fit);
    Vector pred = predict_aligned(m, X(split.test, Eigen::all));
    for (std::size_t i = 0; i < split.test.size(); ++i) out.oof_predictions(split.test[i]) = pred(static_cast<Eigen::Index>(i));
    out.chosen.push_back(sel.hyper);
  }
  out.pearson_r = pooled_r(out.oof_predictions, y);
  return out;
}

}  // namespace stressmeter::model
