#pragma once

#include "common.hpp"
#include "csv.hpp"
#include "features.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace stressmeter::stats {

enum class Method { pearson, spearman };

inline std::string to_string(Method m) { return m == Method::pearson ? "pearson" : "spearman"; }

inline Method parse_method(std::string_view s) {
  if (s == "pearson") return Method::pearson;
  if (s == "spearman") return Method::spearman;
  fail_validation("unknown correlation method '" + std::string(s) + "'");
}

inline bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
}

inline std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail_validation("pearson: length mismatch");
  if (x.size() < 3) fail_validation("pearson: need at least 3 observations");
  if (is_constant(x)) fail_validation("pearson: x is a constant vector");
  if (is_constant(y)) fail_validation("pearson: y is a constant vector");
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double pearson(const Vector& x, const Vector& y) { return pearson(as_span(x), as_span(y)); }

/// 1-based ranks; tied values share the average of their positions.
inline Vector average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector ranks(static_cast<Eigen::Index>(v.size()));
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks(static_cast<Eigen::Index>(idx[k])) = avg;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail_validation("spearman: length mismatch");
  if (is_constant(x)) fail_validation("spearman: x is a constant vector");
  if (is_constant(y)) fail_validation("spearman: y is a constant vector");
  return pearson(average_ranks(x), average_ranks(y));
}

inline double spearman(const Vector& x, const Vector& y) { return spearman(as_span(x), as_span(y)); }

/// Two-tailed p for a correlation coefficient with df degrees of freedom.
inline double correlation_p_value(double r, double df) {
  if (df < 1) fail_validation("correlation test needs at least one degree of freedom");
  double a = std::abs(r);
  if (a >= 1.0) return 0.0;
  double t = a * std::sqrt(df / (1.0 - a * a));
  boost::math::students_t dist(df);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
}

struct PartialCorrelation {
  double r = 0.0;
  double p = 1.0;
  double df = 0.0;
  std::size_t n = 0;
};

/// Least-squares residualizer against [1, Z]. Built once per covariate matrix.
class Residualizer {
 public:
  explicit Residualizer(const Matrix& Z) {
    const Eigen::Index n = Z.rows();
    design_.resize(n, Z.cols() + 1);
    design_.col(0).setOnes();
    if (Z.cols() > 0) design_.rightCols(Z.cols()) = Z;
    qr_.compute(design_);
    if (qr_.rank() < design_.cols())
      fail_validation("partial correlation: covariate matrix [1, Z] is rank deficient (rank " +
                      std::to_string(qr_.rank()) + " of " + std::to_string(design_.cols()) + ")");
  }

  Vector residual(const Vector& v) const {
    if (design_.cols() == 1) return (v.array() - v.mean()).matrix();
    return v - design_ * qr_.solve(v);
  }

  Eigen::Index covariates() const { return design_.cols() - 1; }
  Eigen::Index rows() const { return design_.rows(); }

 private:
  Matrix design_;
  Eigen::ColPivHouseholderQR<Matrix> qr_;
};

inline Matrix rank_columns(const Matrix& Z) {
  Matrix out(Z.rows(), Z.cols());
  for (Eigen::Index c = 0; c < Z.cols(); ++c)
    out.col(c) = average_ranks({Z.col(c).data(), static_cast<std::size_t>(Z.rows())});
  return out;
}

namespace detail {

// Residuals whose norm is lost in rounding count as zero: the variable lies
// in the span of the covariates.
inline bool numerically_zero(const Vector& residual, const Vector& original) {
  double scale = (original.array() - original.mean()).matrix().norm();
  return residual.norm() <= 1e-10 * std::max(scale, 1e-300);
}

inline PartialCorrelation correlate_residuals(const Vector& x, const Vector& y, const Residualizer& res) {
  PartialCorrelation out;
  out.n = static_cast<std::size_t>(x.size());
  out.df = static_cast<double>(x.size()) - 2.0 - static_cast<double>(res.covariates());
  if (out.df < 1) fail_validation("partial correlation: n - 2 - |Z| must be >= 1");
  Vector rx = res.residual(x);
  Vector ry = res.residual(y);
  if (numerically_zero(rx, x) || numerically_zero(ry, y)) {
    out.r = 0.0;
    out.p = 1.0;
    return out;
  }
  out.r = std::clamp(rx.dot(ry) / (rx.norm() * ry.norm()), -1.0, 1.0);
  out.p = correlation_p_value(out.r, out.df);
  return out;
}

}  // namespace detail

/// Correlation of x and y after regressing both on [1, Z]; for spearman every
/// variable including the covariates is rank transformed first. The p-value
/// is a two-tailed t-test on n - 2 - |Z| degrees of freedom.
inline PartialCorrelation partial_corr(const Vector& x, const Vector& y, const Matrix& Z,
                                       Method method = Method::pearson) {
  if (x.size() != y.size() || x.size() != Z.rows()) fail_validation("partial_corr: rows not aligned");
  if (x.size() < 3) fail_validation("partial_corr: need at least 3 observations");
  if (is_constant(as_span(x))) fail_validation("partial_corr: x is a constant vector");
  if (is_constant(as_span(y))) fail_validation("partial_corr: y is a constant vector");
  if (method == Method::spearman) {
    Residualizer res(rank_columns(Z));
    return detail::correlate_residuals(average_ranks(as_span(x)), average_ranks(as_span(y)), res);
  }
  Residualizer res(Z);
  return detail::correlate_residuals(x, y, res);
}

inline PartialCorrelation correlation_test(const Vector& x, const Vector& y, Method method = Method::pearson) {
  return partial_corr(x, y, Matrix(x.size(), 0), method);
}

inline double bonferroni_threshold(double alpha, std::size_t family_size) {
  if (family_size < 1) fail_validation("bonferroni_threshold: family_size must be >= 1");
  return alpha / static_cast<double>(family_size);
}

// ---------------------------------------------------------------------------
// Covariate encoding

struct ControlColumn {
  std::string name;
  std::vector<std::string> values;
};

struct EncodedControls {
  Matrix values;
  std::vector<std::string> names;
};

/// Numeric columns pass through; anything else is one-hot encoded over its
/// sorted levels with the first level dropped.
inline EncodedControls encode_controls(const std::vector<ControlColumn>& cols, std::size_t n_rows) {
  EncodedControls out;
  std::vector<Vector> columns;
  for (const auto& c : cols) {
    if (c.values.size() != n_rows) fail_validation("control " + c.name + ": row count mismatch");
    bool numeric = true;
    Vector v(static_cast<Eigen::Index>(n_rows));
    for (std::size_t i = 0; i < n_rows && numeric; ++i) {
      try {
        v(static_cast<Eigen::Index>(i)) = parse_double(c.values[i], c.name);
      } catch (const Error&) {
        numeric = false;
      }
    }
    if (numeric) {
      columns.push_back(v);
      out.names.push_back(c.name);
      continue;
    }
    std::set<std::string> levels(c.values.begin(), c.values.end());
    for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
      Vector d(static_cast<Eigen::Index>(n_rows));
      for (std::size_t i = 0; i < n_rows; ++i) d(static_cast<Eigen::Index>(i)) = c.values[i] == *it ? 1.0 : 0.0;
      columns.push_back(d);
      out.names.push_back(c.name + "=" + *it);
    }
  }
  out.values.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) out.values.col(static_cast<Eigen::Index>(j)) = columns[j];
  return out;
}

// ---------------------------------------------------------------------------
// Differential language analysis

struct DlaResult {
  std::string feature;
  double r = 0.0;
  double p = 1.0;
  bool significant = false;
  std::size_t family_size = 0;
  Method method = Method::pearson;
  std::vector<std::string> controls;
};

struct DlaReport {
  std::vector<DlaResult> results;  // by |r| descending, then feature name
  std::vector<std::string> skipped_constant;
  std::size_t family_size = 0;
  double threshold = 0.0;
};

struct DlaOptions {
  double alpha = 0.01;
  Method method = Method::pearson;
  std::vector<std::string> control_names;
};

inline DlaReport dla(const features::FeatureMatrix& X, const Vector& outcome, const Matrix& controls,
                     const DlaOptions& opts = {}) {
  if (static_cast<std::size_t>(outcome.size()) != X.rows() || controls.rows() != outcome.size())
    fail_validation("dla: rows of features, outcome and controls are not aligned");
  if (is_constant(as_span(outcome))) fail_validation("dla: outcome is constant");
  DlaReport report;
  std::vector<Eigen::Index> tested;
  for (std::size_t j = 0; j < X.cols(); ++j) {
    const auto& col = X.values.col(static_cast<Eigen::Index>(j));
    if (is_constant({col.data(), static_cast<std::size_t>(col.size())}))
      report.skipped_constant.push_back(X.names[j]);
    else
      tested.push_back(static_cast<Eigen::Index>(j));
  }
  report.family_size = tested.size();
  if (tested.empty()) return report;
  report.threshold = bonferroni_threshold(opts.alpha, report.family_size);

  const bool ranked = opts.method == Method::spearman;
  Residualizer res(ranked ? rank_columns(controls) : controls);
  Vector y = ranked ? average_ranks(as_span(outcome)) : outcome;
  for (Eigen::Index j : tested) {
    Vector x = X.values.col(j);
    if (ranked) x = average_ranks(as_span(x));
    auto pc = detail::correlate_residuals(x, y, res);
    DlaResult d;
    d.feature = X.names[static_cast<std::size_t>(j)];
    d.r = pc.r;
    d.p = pc.p;
    d.significant = pc.p < report.threshold;
    d.family_size = report.family_size;
    d.method = opts.method;
    d.controls = opts.control_names;
    report.results.push_back(std::move(d));
  }
  std::sort(report.results.begin(), report.results.end(), [](const DlaResult& a, const DlaResult& b) {
    double aa = std::abs(a.r), bb = std::abs(b.r);
    return aa != bb ? aa > bb : a.feature < b.feature;
  });
  return report;
}

inline void write_dla_csv(std::ostream& out, const DlaReport& report) {
  csv::write_row(out, {"feature", "r", "p", "significant", "family_size", "method"});
  for (const auto& d : report.results)
    csv::write_row(out, {d.feature, format_double(d.r), format_double(d.p), d.significant ? "true" : "false",
                         std::to_string(d.family_size), to_string(d.method)});
}

// ---------------------------------------------------------------------------
// Platform contrast

struct ContrastPoint {
  std::string feature;
  double r_outcome = 0.0;
  double p_outcome = 1.0;
  double r_platform = 0.0;  // positive: more frequent on platform A
  double p_platform = 1.0;
  bool kept = false;
};

struct ContrastResult {
  std::vector<ContrastPoint> points;  // sorted by feature name
  std::vector<std::string> excluded_rows;
  std::vector<std::string> skipped_constant;
  std::size_t family_size = 0;
  double threshold = 0.0;
};

struct ContrastOptions {
  Method method = Method::spearman;
  double alpha = 0.01;
  double min_abs_rho = 0.05;
};

/// Stacks the same users' A rows (indicator 1) over their B rows (indicator 0)
/// and correlates every feature with the outcome and with the indicator. A
/// point is kept when either coordinate is Bonferroni significant with
/// |rho| above min_abs_rho.
inline ContrastResult platform_contrast(const features::FeatureMatrix& A, const features::FeatureMatrix& B,
                                        const std::map<std::string, double>& outcome,
                                        const ContrastOptions& opts = {}) {
  ContrastResult out;
  std::map<std::string, Eigen::Index> rows_a, rows_b;
  for (std::size_t i = 0; i < A.rows(); ++i) rows_a.emplace(A.row_ids[i], static_cast<Eigen::Index>(i));
  for (std::size_t i = 0; i < B.rows(); ++i) rows_b.emplace(B.row_ids[i], static_cast<Eigen::Index>(i));
  std::vector<std::string> shared;
  std::set<std::string> all_ids;
  for (const auto& [id, _] : rows_a) all_ids.insert(id);
  for (const auto& [id, _] : rows_b) all_ids.insert(id);
  for (const auto& id : all_ids) {
    if (rows_a.count(id) && rows_b.count(id) && outcome.count(id)) shared.push_back(id);
    else out.excluded_rows.push_back(id);
  }
  std::set<std::string> names(A.names.begin(), A.names.end());
  names.insert(B.names.begin(), B.names.end());
  const auto n = static_cast<Eigen::Index>(shared.size());
  Vector y(2 * n), platform(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = y(n + i) = outcome.at(shared[static_cast<std::size_t>(i)]);
    platform(i) = 1.0;
    platform(n + i) = 0.0;
  }
  std::vector<std::pair<std::string, Vector>> stacked;
  for (const auto& name : names) {
    Vector v = Vector::Zero(2 * n);
    auto ca = A.column(name), cb = B.column(name);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& id = shared[static_cast<std::size_t>(i)];
      if (ca >= 0) v(i) = A.values(rows_a.at(id), ca);
      if (cb >= 0) v(n + i) = B.values(rows_b.at(id), cb);
    }
    if (is_constant(as_span(v))) out.skipped_constant.push_back(name);
    else stacked.emplace_back(name, std::move(v));
  }
  out.family_size = stacked.size();
  if (stacked.empty()) return out;
  out.threshold = bonferroni_threshold(opts.alpha, out.family_size);
  const bool outcome_varies = !is_constant(as_span(y));
  for (auto& [name, v] : stacked) {
    ContrastPoint pt;
    pt.feature = name;
    if (outcome_varies) {
      auto t = correlation_test(v, y, opts.method);
      pt.r_outcome = t.r;
      pt.p_outcome = t.p;
    }
    auto t = correlation_test(v, platform, opts.method);
    pt.r_platform = t.r;
    pt.p_platform = t.p;
    pt.kept = (pt.p_outcome < out.threshold && std::abs(pt.r_outcome) > opts.min_abs_rho) ||
              (pt.p_platform < out.threshold && std::abs(pt.r_platform) > opts.min_abs_rho);
    out.points.push_back(std::move(pt));
  }
  return out;
}

inline void write_contrast_csv(std::ostream& out, const ContrastResult& c, bool kept_only = true) {
  csv::write_row(out, {"feature", "r_outcome", "p_outcome", "r_platform", "p_platform", "kept"});
  for (const auto& p : c.points) {
    if (kept_only && !p.kept) continue;
    csv::write_row(out, {p.feature, format_double(p.r_outcome), format_double(p.p_outcome),
                         format_double(p.r_platform), format_double(p.p_platform), p.kept ? "true" : "false"});
  }
}

}  // namespace stressmeter::stats
