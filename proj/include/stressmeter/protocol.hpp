#pragma once

// Out-of-fold evaluation protocols: within-platform, cross-platform without
// adaptation, pooled training, EasyAdapt and TCA. Every protocol uses the same
// outer folds so their r values are directly comparable.

#include "adapt.hpp"
#include "common.hpp"
#include "features.hpp"
#include "model.hpp"

#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace stressmeter::protocol {

enum class Adaptation { none, easyadapt, tca };

inline std::string to_string(Adaptation a) {
  switch (a) {
    case Adaptation::none: return "none";
    case Adaptation::easyadapt: return "easyadapt";
    case Adaptation::tca: return "tca";
  }
  return "none";
}

inline Adaptation parse_adaptation(std::string_view s) {
  if (s == "none") return Adaptation::none;
  if (s == "easyadapt") return Adaptation::easyadapt;
  if (s == "tca") return Adaptation::tca;
  fail_validation("unknown adaptation method '" + std::string(s) + "' (none, easyadapt, tca)");
}

struct Options {
  model::Grid grid = model::Grid::defaults();
  model::CvOptions cv;
  adapt::TcaOptions tca;
  // Fit TCA on the target rows of every user (labels are never read) rather
  // than only on the training users of the fold.
  bool transductive_tca = true;
  std::optional<Vector> sample_weights;
};

/// Labeled users with features on two platforms, rows aligned by user.
struct Dataset {
  features::FeatureMatrix source;
  features::FeatureMatrix target;
  Vector y;
  std::vector<int> folds;
  int k = 5;

  void validate() const {
    source.validate();
    target.validate();
    if (source.row_ids != target.row_ids) fail_validation("protocol: source and target rows are not the same users");
    if (source.names != target.names) fail_validation("protocol: source and target feature columns differ");
    if (static_cast<std::size_t>(y.size()) != source.rows() || folds.size() != source.rows())
      fail_validation("protocol: labels, folds and features are not aligned");
  }
};

struct Result {
  std::string protocol;
  double r = 0.0;
  Vector oof_predictions;
  std::vector<model::Hyperparameters> chosen;
};

namespace detail {

inline std::vector<std::string> column_names(Eigen::Index p) {
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < p; ++j) names.push_back("c" + std::to_string(j));
  return names;
}

inline std::optional<Vector> subset(const std::optional<Vector>& w, const std::vector<Eigen::Index>& idx) {
  if (!w) return std::nullopt;
  return Vector((*w)(idx));
}

struct FoldData {
  Matrix train_X;
  Vector train_y;
  std::optional<Vector> train_w;
  Matrix test_X;
};

/// Shared outer loop: nested selection on the fold's training rows, refit,
/// predict the held-out rows, pool.
template <class Build>
Result run(const std::string& name, const Vector& y, std::span<const int> folds, int k, const Options& opts, Build build) {
  Result out;
  out.protocol = name;
  out.oof_predictions = Vector::Zero(y.size());
  for (const auto& split : model::splits_from(folds, k)) {
    if (split.test.empty()) fail_validation("protocol " + name + ": empty fold");
    FoldData d = build(split);
    auto sel = model::select_hyperparameters(d.train_X, d.train_y, opts.grid, opts.cv, d.train_w);
    auto m = model::fit_elastic_net(d.train_X, column_names(d.train_X.cols()), d.train_y, sel.hyper, d.train_w, opts.cv.fit);
    Vector pred = model::predict_aligned(m, d.test_X);
    for (std::size_t i = 0; i < split.test.size(); ++i) out.oof_predictions(split.test[i]) = pred(static_cast<Eigen::Index>(i));
    out.chosen.push_back(sel.hyper);
  }
  out.r = model::pooled_r(out.oof_predictions, y);
  return out;
}

}  // namespace detail

/// Train and test on the same platform.
inline Result within(const features::FeatureMatrix& X, const Vector& y, std::span<const int> folds, int k,
                     const Options& opts = {}, const std::string& name = "within") {
  X.validate();
  return detail::run(name, y, folds, k, opts, [&](const model::FoldSplit& s) {
    return detail::FoldData{X.values(s.train, Eigen::all), y(s.train), detail::subset(opts.sample_weights, s.train),
                            X.values(s.test, Eigen::all)};
  });
}

/// Train on source features of training users, test on target features of
/// held-out users, optionally adapting between the platforms.
inline Result cross_domain(const Dataset& data, Adaptation method, const Options& opts = {}) {
  data.validate();
  const Matrix& S = data.source.values;
  const Matrix& T = data.target.values;
  switch (method) {
    case Adaptation::none:
      return detail::run("cross_domain", data.y, data.folds, data.k, opts, [&](const model::FoldSplit& s) {
        return detail::FoldData{S(s.train, Eigen::all), data.y(s.train), detail::subset(opts.sample_weights, s.train),
                                T(s.test, Eigen::all)};
      });
    case Adaptation::easyadapt:
      // Labeled source and target rows of the training users, augmented; the
      // held-out users are seen only through their target-augmented rows.
      return detail::run("easyadapt", data.y, data.folds, data.k, opts, [&](const model::FoldSplit& s) {
        const auto n = static_cast<Eigen::Index>(s.train.size());
        detail::FoldData d;
        d.train_X.resize(2 * n, 3 * S.cols());
        d.train_X.topRows(n) = adapt::easyadapt_augment(Matrix(S(s.train, Eigen::all)), adapt::Domain::source);
        d.train_X.bottomRows(n) = adapt::easyadapt_augment(Matrix(T(s.train, Eigen::all)), adapt::Domain::target);
        d.train_y.resize(2 * n);
        d.train_y << data.y(s.train), data.y(s.train);
        if (opts.sample_weights) {
          Vector w = (*opts.sample_weights)(s.train);
          d.train_w = Vector(2 * n);
          *d.train_w << w, w;
        }
        d.test_X = adapt::easyadapt_augment(Matrix(T(s.test, Eigen::all)), adapt::Domain::target);
        return d;
      });
    case Adaptation::tca:
      return detail::run("tca", data.y, data.folds, data.k, opts, [&](const model::FoldSplit& s) {
        Matrix XS = S(s.train, Eigen::all);
        Matrix XT = opts.transductive_tca ? T : Matrix(T(s.train, Eigen::all));
        adapt::TcaOptions to = opts.tca;
        to.m = std::min<int>(to.m, static_cast<int>(XS.rows() + XT.rows() - 1));
        auto t = adapt::tca_fit(XS, XT, to, data.source.names);
        Matrix emb = adapt::tca_training_embedding(t);
        return detail::FoldData{emb.topRows(XS.rows()), data.y(s.train), detail::subset(opts.sample_weights, s.train),
                                adapt::tca_transform(t, Matrix(T(s.test, Eigen::all)))};
      });
  }
  fail_validation("unknown adaptation method");
}

/// Train on both platforms of the training users, test on the target platform.
inline Result pooled(const Dataset& data, const Options& opts = {}) {
  data.validate();
  const Matrix& S = data.source.values;
  const Matrix& T = data.target.values;
  return detail::run("pooled", data.y, data.folds, data.k, opts, [&](const model::FoldSplit& s) {
    const auto n = static_cast<Eigen::Index>(s.train.size());
    detail::FoldData d;
    d.train_X.resize(2 * n, S.cols());
    d.train_X.topRows(n) = S(s.train, Eigen::all);
    d.train_X.bottomRows(n) = T(s.train, Eigen::all);
    d.train_y.resize(2 * n);
    d.train_y << data.y(s.train), data.y(s.train);
    if (opts.sample_weights) {
      Vector w = (*opts.sample_weights)(s.train);
      d.train_w = Vector(2 * n);
      *d.train_w << w, w;
    }
    d.test_X = T(s.test, Eigen::all);
    return d;
  });
}

// ---------------------------------------------------------------------------
// Reports: one row per feature set, one column per protocol.

struct Report {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> rows;

  void add(const std::string& feature, std::vector<std::optional<double>> values) {
    if (values.size() != columns.size()) fail_validation("report row width differs from its columns");
    rows.emplace_back(feature, std::move(values));
  }
};

inline void write_report_csv(std::ostream& out, const Report& r) {
  std::vector<std::string> header{"feature"};
  header.insert(header.end(), r.columns.begin(), r.columns.end());
  csv::write_row(out, header);
  for (const auto& [feature, values] : r.rows) {
    std::vector<std::string> row{feature};
    for (const auto& v : values) row.push_back(v ? format_double(*v) : "NA");
    csv::write_row(out, row);
  }
}

/// Fixed-width rendering for terminals, r to three decimals.
inline std::string render(const Report& r) {
  std::size_t w0 = 7;
  for (const auto& [f, _] : r.rows) w0 = std::max(w0, f.size());
  std::string out = r.title.empty() ? "" : r.title + "\n";
  auto pad = [](std::string s, std::size_t w) { return s.size() < w ? s + std::string(w - s.size(), ' ') : s; };
  out += pad("feature", w0);
  for (const auto& c : r.columns) out += "  " + pad(c, std::max<std::size_t>(c.size(), 6));
  out += "\n";
  for (const auto& [feature, values] : r.rows) {
    out += pad(feature, w0);
    for (std::size_t j = 0; j < values.size(); ++j) {
      char buf[32];
      if (values[j]) std::snprintf(buf, sizeof buf, "%.3f", *values[j]);
      else std::snprintf(buf, sizeof buf, "NA");
      out += "  " + pad(buf, std::max<std::size_t>(r.columns[j].size(), 6));
    }
    out += "\n";
  }
  return out;
}

}  // namespace stressmeter::protocol
