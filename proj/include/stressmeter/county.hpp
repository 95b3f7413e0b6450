#pragma once

#include "adapt.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "csv.hpp"
#include "features.hpp"
#include "model.hpp"
#include "stats.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stressmeter::county {

/// Keyed reduction of geotagged posts to per-county word distributions. Posts
/// may arrive from several files in any order; finish() is order independent.
class CountyAggregator {
 public:
  explicit CountyAggregator(const text::Tokenizer& tok = text::default_tokenizer()) : tok_(&tok) {}

  // Returns false (and records a reject) for posts without a valid fips.
  bool add(const PostRecord& p, std::size_t line = 0) {
    if (!valid_fips(p.fips)) {
      rejects_.push_back({line, "malformed fips '" + p.fips + "' for user " + p.user_id});
      return false;
    }
    auto& counts = users_[p.fips][p.user_id];
    tokens_.clear();
    tok_->tokenize_into(p.text, tokens_);
    for (const auto& t : tokens_) ++counts[t.surface];
    return true;
  }

  const std::vector<Reject>& rejects() const { return rejects_; }

  /// Each user's relative word frequencies, averaged uniformly over the
  /// county's distinct users.
  std::vector<CountyLanguage> finish() const {
    std::vector<CountyLanguage> out;
    for (const auto& [fips, users] : users_) {
      CountyLanguage c;
      c.fips = fips;
      std::int64_t contributors = 0;
      for (const auto& [user, counts] : users) {
        std::int64_t total = 0;
        for (const auto& [w, n] : counts) total += n;
        if (total == 0) continue;
        ++contributors;
        c.total_words += total;
        for (const auto& [w, n] : counts) c.word_freq[w] += static_cast<double>(n) / static_cast<double>(total);
      }
      if (contributors == 0) continue;
      c.contributor_count = contributors;
      for (auto& [w, f] : c.word_freq) f /= static_cast<double>(contributors);
      out.push_back(std::move(c));
    }
    return out;
  }

 private:
  const text::Tokenizer* tok_;
  // fips -> user -> word -> count; ordered maps keep the reduction deterministic
  std::map<std::string, std::map<std::string, std::map<std::string, std::int64_t>>> users_;
  std::vector<Reject> rejects_;
  std::vector<text::Token> tokens_;
};

struct Aggregated {
  std::vector<CountyLanguage> counties;
  std::vector<Reject> rejects;
};

inline Aggregated aggregate_county_language(const std::vector<PostRecord>& posts,
                                            const text::Tokenizer& tok = text::default_tokenizer()) {
  CountyAggregator agg(tok);
  for (std::size_t i = 0; i < posts.size(); ++i) agg.add(posts[i], i + 1);
  return {agg.finish(), agg.rejects()};
}

/// Keeps counties with at least min_words tokens (inclusive).
inline std::vector<CountyLanguage> filter_counties(const std::vector<CountyLanguage>& counties,
                                                   std::int64_t min_words = 100000) {
  std::vector<CountyLanguage> out;
  for (const auto& c : counties)
    if (c.total_words >= min_words) out.push_back(c);
  return out;
}

inline std::vector<features::RowLanguage> county_rows(const std::vector<CountyLanguage>& counties) {
  std::vector<features::RowLanguage> rows;
  rows.reserve(counties.size());
  for (const auto& c : counties) rows.push_back(features::language_of(c));
  return rows;
}

struct CountyScore {
  std::string fips;
  double predicted = 0.0;
  std::int64_t total_words = 0;
  std::int64_t contributor_count = 0;
  std::string model_fingerprint;
};

using CountyFeaturizer = std::function<features::FeatureMatrix(const std::vector<features::RowLanguage>&)>;

/// featurize -> optional TCA embedding (or EasyAdapt target augmentation when
/// the model was trained that way) -> predict.
inline std::vector<CountyScore> score_counties(const std::vector<CountyLanguage>& counties,
                                               const model::LinearModel& m, const CountyFeaturizer& featurize,
                                               const adapt::TcaTransform* transform = nullptr) {
  if (counties.empty()) return {};
  auto X = featurize(county_rows(counties));
  if (m.adaptation == "tca") {
    if (!transform) fail_validation("score_counties: model was trained on TCA components but no transform was given");
    if (!m.transform_fingerprint.empty() && m.transform_fingerprint != transform->fingerprint)
      fail_validation("score_counties: transform fingerprint does not match the model");
    X = adapt::tca_transform(*transform, X);
  } else if (transform) {
    fail_validation("score_counties: a transform was given but the model was not trained with TCA");
  } else if (m.adaptation == "easyadapt") {
    X = adapt::easyadapt_augment(X, adapt::Domain::target);
  }
  Vector pred = model::predict(m, X);
  Fnv1a h;
  for (const auto& name : m.feature_names) h.update(name + "\x1f");
  for (Eigen::Index j = 0; j < m.weights.size(); ++j) h.update(m.weights(j));
  h.update(m.intercept);
  std::vector<CountyScore> out;
  for (std::size_t i = 0; i < counties.size(); ++i)
    out.push_back({counties[i].fips, pred(static_cast<Eigen::Index>(i)), counties[i].total_words,
                   counties[i].contributor_count, h.hex()});
  return out;
}

// ---------------------------------------------------------------------------
// Validation against outcome tables

/// A control column, optionally log transformed ("log(median_income)").
struct ControlSpec {
  std::string column;
  bool log = false;

  static ControlSpec parse(std::string_view s) {
    s = trim(s);
    if (s.size() > 5 && s.substr(0, 4) == "log(" && s.back() == ')') return {std::string(s.substr(4, s.size() - 5)), true};
    return {std::string(s), false};
  }

  std::string label() const { return log ? "log(" + column + ")" : column; }
};

struct ValidationRow {
  std::string outcome;
  std::optional<stats::PartialCorrelation> plain;
  std::optional<stats::PartialCorrelation> controlled;
  std::string error;  // set when the outcome could not be tested
};

inline std::vector<ValidationRow> validate_counties(const std::vector<CountyScore>& scores,
                                                    const CountyOutcomes& outcomes,
                                                    const std::vector<std::string>& outcome_columns,
                                                    const std::optional<std::vector<ControlSpec>>& controls = std::nullopt,
                                                    std::size_t min_n = 10) {
  std::vector<std::size_t> control_cols;
  if (controls)
    for (const auto& c : *controls) {
      auto idx = outcomes.column(c.column);
      if (idx < 0) fail_validation("validate_counties: unknown control column " + c.column);
      control_cols.push_back(static_cast<std::size_t>(idx));
    }
  std::vector<ValidationRow> out;
  for (const auto& name : outcome_columns) {
    ValidationRow row;
    row.outcome = name;
    auto oc = outcomes.column(name);
    if (oc < 0) fail_validation("validate_counties: unknown outcome column " + name);
    auto run = [&](bool with_controls) -> std::optional<stats::PartialCorrelation> {
      std::vector<double> x, y;
      std::vector<std::vector<double>> z;
      for (const auto& s : scores) {
        auto v = outcomes.get(s.fips, static_cast<std::size_t>(oc));
        if (!v) continue;
        std::vector<double> zr;
        bool complete = true;
        if (with_controls)
          for (std::size_t k = 0; k < control_cols.size(); ++k) {
            auto c = outcomes.get(s.fips, control_cols[k]);
            if (!c || ((*controls)[k].log && !(*c > 0))) {
              complete = false;
              break;
            }
            zr.push_back((*controls)[k].log ? std::log(*c) : *c);
          }
        if (!complete) continue;
        x.push_back(s.predicted);
        y.push_back(*v);
        z.push_back(std::move(zr));
      }
      if (x.size() < min_n) {
        row.error = "only " + std::to_string(x.size()) + " counties after join (need " + std::to_string(min_n) + ")";
        return std::nullopt;
      }
      const auto n = static_cast<Eigen::Index>(x.size());
      Vector xv = Eigen::Map<Vector>(x.data(), n), yv = Eigen::Map<Vector>(y.data(), n);
      Matrix Z(n, with_controls ? static_cast<Eigen::Index>(control_cols.size()) : 0);
      for (Eigen::Index i = 0; i < Z.rows(); ++i)
        for (Eigen::Index k = 0; k < Z.cols(); ++k) Z(i, k) = z[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      try {
        return stats::partial_corr(xv, yv, Z);
      } catch (const Error& e) {
        row.error = e.what();
        return std::nullopt;
      }
    };
    row.plain = run(false);
    if (controls) row.controlled = run(true);
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_validation_csv(std::ostream& out, const std::vector<ValidationRow>& rows, bool with_controls) {
  std::vector<std::string> header{"outcome", "r_no_controls", "p_no_controls", "n_no_controls"};
  if (with_controls)
    for (const char* c : {"r_with_controls", "p_with_controls", "n_with_controls"}) header.emplace_back(c);
  header.emplace_back("note");
  csv::write_row(out, header);
  auto cells = [](const std::optional<stats::PartialCorrelation>& pc, std::vector<std::string>& row) {
    if (pc) {
      row.push_back(format_double(pc->r));
      row.push_back(format_double(pc->p));
      row.push_back(std::to_string(pc->n));
    } else {
      row.insert(row.end(), {"NA", "NA", "NA"});
    }
  };
  for (const auto& r : rows) {
    std::vector<std::string> row{r.outcome};
    cells(r.plain, row);
    if (with_controls) cells(r.controlled, row);
    row.push_back(r.error);
    csv::write_row(out, row);
  }
}

// ---------------------------------------------------------------------------
// Choropleth export

inline void export_choropleth(std::ostream& out, const std::vector<CountyScore>& scores) {
  csv::write_row(out, {"fips", "score", "total_words", "contributors"});
  for (const auto& s : scores)
    csv::write_row(out, {s.fips, format_double(s.predicted), std::to_string(s.total_words),
                         std::to_string(s.contributor_count)});
}

inline void export_choropleth(const std::string& path, const std::vector<CountyScore>& scores) {
  auto out = csv::open_output(path);
  export_choropleth(out, scores);
  if (!out) fail_input("failed writing " + path);
}

inline std::vector<CountyScore> load_choropleth(const csv::Table& t, const std::string& source) {
  auto f = t.require_column("fips", source);
  auto s = t.require_column("score", source);
  auto w = t.require_column("total_words", source);
  auto c = t.require_column("contributors", source);
  std::vector<CountyScore> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::string ctx = source + " line " + std::to_string(t.line_numbers[r]);
    out.push_back({row[f], parse_double(row[s], ctx), parse_int(row[w], ctx), parse_int(row[c], ctx), {}});
  }
  return out;
}

inline std::vector<CountyScore> load_choropleth(const std::string& path) {
  return load_choropleth(csv::read_file(path), path);
}

}  // namespace stressmeter::county
