#pragma once

#include "common.hpp"
#include "corpus.hpp"
#include "csv.hpp"
#include "text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace stressmeter::features {

/// Users (or counties) by named features. Columns are kept in sorted name order.
struct FeatureMatrix {
  std::vector<std::string> row_ids;
  std::vector<std::string> names;
  Matrix values;
  std::string fingerprint;

  std::size_t rows() const { return row_ids.size(); }
  std::size_t cols() const { return names.size(); }

  std::ptrdiff_t column(std::string_view name) const {
    auto it = std::lower_bound(names.begin(), names.end(), name);
    if (it != names.end() && *it == name) return it - names.begin();
    // fall back to a linear scan for matrices built in custom order
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  }

  std::ptrdiff_t row(std::string_view id) const {
    for (std::size_t i = 0; i < row_ids.size(); ++i)
      if (row_ids[i] == id) return static_cast<std::ptrdiff_t>(i);
    return -1;
  }

  void validate() const {
    if (static_cast<std::size_t>(values.rows()) != row_ids.size() ||
        static_cast<std::size_t>(values.cols()) != names.size())
      fail_validation("feature matrix shape does not match its labels");
    std::set<std::string> seen(names.begin(), names.end());
    if (seen.size() != names.size()) fail_validation("feature matrix has duplicate column names");
    for (Eigen::Index r = 0; r < values.rows(); ++r)
      for (Eigen::Index c = 0; c < values.cols(); ++c)
        if (!std::isfinite(values(r, c)))
          fail_validation("non-finite feature value at row " + row_ids[static_cast<std::size_t>(r)] + ", column " +
                          names[static_cast<std::size_t>(c)]);
  }

  /// Rows in the given id order; unknown ids are an error.
  FeatureMatrix select_rows(const std::vector<std::string>& ids) const {
    std::unordered_map<std::string, Eigen::Index> pos;
    for (std::size_t i = 0; i < row_ids.size(); ++i) pos.emplace(row_ids[i], static_cast<Eigen::Index>(i));
    FeatureMatrix out;
    out.row_ids = ids;
    out.names = names;
    out.fingerprint = fingerprint;
    out.values.resize(static_cast<Eigen::Index>(ids.size()), values.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto it = pos.find(ids[i]);
      if (it == pos.end()) fail_validation("row " + ids[i] + " not in feature matrix");
      out.values.row(static_cast<Eigen::Index>(i)) = values.row(it->second);
    }
    return out;
  }
};

inline FeatureMatrix hconcat(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.row_ids != b.row_ids) fail_validation("hconcat: row ids differ");
  std::vector<std::pair<std::string, std::pair<int, Eigen::Index>>> cols;
  for (std::size_t i = 0; i < a.names.size(); ++i) cols.push_back({a.names[i], {0, static_cast<Eigen::Index>(i)}});
  for (std::size_t i = 0; i < b.names.size(); ++i) cols.push_back({b.names[i], {1, static_cast<Eigen::Index>(i)}});
  std::sort(cols.begin(), cols.end());
  FeatureMatrix out;
  out.row_ids = a.row_ids;
  out.values.resize(a.values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (j && cols[j].first == cols[j - 1].first) fail_validation("hconcat: duplicate column " + cols[j].first);
    out.names.push_back(cols[j].first);
    const auto& src = cols[j].second.first == 0 ? a.values : b.values;
    out.values.col(static_cast<Eigen::Index>(j)) = src.col(cols[j].second.second);
  }
  out.fingerprint = fingerprint(a.fingerprint + "+" + b.fingerprint);
  return out;
}

inline void write_csv(std::ostream& out, const FeatureMatrix& m) {
  std::vector<std::string> header{"row_id"};
  header.insert(header.end(), m.names.begin(), m.names.end());
  csv::write_row(out, header);
  std::vector<std::string> row;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    row.clear();
    row.push_back(m.row_ids[r]);
    for (std::size_t c = 0; c < m.cols(); ++c)
      row.push_back(format_double(m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))));
    csv::write_row(out, row);
  }
}

inline void write_csv(const std::string& path, const FeatureMatrix& m) {
  auto out = csv::open_output(path);
  write_csv(out, m);
}

inline FeatureMatrix read_csv(const csv::Table& t, const std::string& source) {
  if (t.header.empty() || t.header[0] != "row_id") fail_validation(source + ": first column must be row_id");
  FeatureMatrix m;
  m.names.assign(t.header.begin() + 1, t.header.end());
  m.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(m.names.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::string ctx = source + " line " + std::to_string(t.line_numbers[r]);
    if (row.size() != t.header.size()) fail_validation(ctx + ": expected " + std::to_string(t.header.size()) + " fields");
    m.row_ids.push_back(row[0]);
    for (std::size_t c = 1; c < row.size(); ++c)
      m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) = parse_double(row[c], ctx);
  }
  m.validate();
  return m;
}

inline FeatureMatrix read_csv(const std::string& path) { return read_csv(csv::read_file(path), path); }

// ---------------------------------------------------------------------------
// Row language: per-order n-gram relative frequencies, sorted by n-gram.

struct RowLanguage {
  std::string id;
  std::vector<std::vector<std::pair<std::string, double>>> freq;  // index = order - 1
  std::int64_t token_count = 0;

  std::span<const std::pair<std::string, double>> unigrams() const {
    if (freq.empty()) return {};
    return freq[0];
  }
};

/// A row that owns no posts: a view over the posts of one user on one platform.
struct PostRow {
  std::string id;
  std::span<const PostRecord> posts;
};

inline std::vector<PostRow> platform_rows(const std::vector<UserProfile>& cohort, Platform p) {
  std::vector<PostRow> rows;
  rows.reserve(cohort.size());
  for (const auto& u : cohort) rows.push_back({u.user_id, u.posts[index(p)]});
  return rows;
}

inline RowLanguage language_of(const PostRow& row, int n_max = 3,
                               const text::Tokenizer& tok = text::default_tokenizer()) {
  text::NgramCounts counts;
  std::vector<text::Token> tokens;
  std::int64_t n_tokens = 0;
  for (const auto& p : row.posts) {
    tokens.clear();
    tok.tokenize_into(p.text, tokens);
    n_tokens += static_cast<std::int64_t>(tokens.size());
    text::accumulate_ngrams(tokens, n_max, counts);
  }
  RowLanguage out;
  out.id = row.id;
  out.token_count = n_tokens;
  out.freq.resize(static_cast<std::size_t>(n_max));
  std::vector<std::int64_t> totals(static_cast<std::size_t>(n_max), 0);
  for (const auto& [gram, c] : counts) totals[static_cast<std::size_t>(text::ngram_order(gram) - 1)] += c;
  for (const auto& [gram, c] : counts) {
    auto k = static_cast<std::size_t>(text::ngram_order(gram) - 1);
    out.freq[k].emplace_back(gram, static_cast<double>(c) / static_cast<double>(totals[k]));
  }
  for (auto& v : out.freq) std::sort(v.begin(), v.end());
  return out;
}

inline std::vector<RowLanguage> language_of(const std::vector<PostRow>& rows, int n_max = 3,
                                            const text::Tokenizer& tok = text::default_tokenizer()) {
  std::vector<RowLanguage> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(language_of(r, n_max, tok));
  return out;
}

inline RowLanguage language_of(const CountyLanguage& c) {
  RowLanguage out;
  out.id = c.fips;
  out.token_count = c.total_words;
  out.freq.resize(1);
  out.freq[0].assign(c.word_freq.begin(), c.word_freq.end());
  return out;
}

enum class Transform { none, sqrt, anscombe };

inline std::string to_string(Transform t) {
  switch (t) {
    case Transform::none: return "none";
    case Transform::sqrt: return "sqrt";
    case Transform::anscombe: return "anscombe";
  }
  return "none";
}

inline Transform parse_transform(std::string_view s) {
  if (s == "none") return Transform::none;
  if (s == "sqrt") return Transform::sqrt;
  if (s == "anscombe") return Transform::anscombe;
  fail_validation("unknown transform '" + std::string(s) + "'");
}

inline double apply(Transform t, double v) {
  switch (t) {
    case Transform::none: return v;
    case Transform::sqrt: return std::sqrt(v);
    case Transform::anscombe: return 2.0 * std::sqrt(v + 3.0 / 8.0);
  }
  return v;
}

// ---------------------------------------------------------------------------
// n-grams

struct NgramOptions {
  int n_max = 3;
  double min_row_fraction = 0.05;
  std::optional<std::size_t> max_vocab;
  Transform transform = Transform::none;
  // When set, these columns are used as-is and the coverage filter is skipped.
  // Lets rows featurized later (held-out users, counties) share a vocabulary.
  std::optional<std::vector<std::string>> vocabulary;

  std::string describe() const {
    std::string d = "ngrams;n_max=" + std::to_string(n_max) + ";min_row_fraction=" + format_double(min_row_fraction) +
                    ";max_vocab=" + (max_vocab ? std::to_string(*max_vocab) : "none") + ";transform=" + to_string(transform);
    if (vocabulary) {
      Fnv1a h;
      for (const auto& v : *vocabulary) h.update(v + "\x1f");
      d += ";vocabulary=" + h.hex();
    }
    return d;
  }
};

/// Open-vocabulary n-gram relative frequencies. A column survives if at least
/// min_row_fraction of rows use it; max_vocab keeps the widest-coverage grams
/// (ties lexicographic). Cells are count / total count of that n-gram order.
inline std::vector<std::string> ngram_vocabulary(const std::vector<RowLanguage>& rows, const NgramOptions& opts = {}) {
  std::unordered_map<std::string, std::size_t> coverage;
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.freq.size() && static_cast<int>(k) < opts.n_max; ++k)
      for (const auto& [gram, f] : r.freq[k])
        if (f > 0) ++coverage[gram];
  const double need = opts.min_row_fraction * static_cast<double>(rows.size());
  std::vector<std::pair<std::size_t, std::string>> kept;
  for (const auto& [gram, cov] : coverage)
    if (static_cast<double>(cov) >= need) kept.emplace_back(cov, gram);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  if (opts.max_vocab && kept.size() > *opts.max_vocab) kept.resize(*opts.max_vocab);
  if (kept.empty())
    fail_validation("ngram_features: empty vocabulary after filtering (min_row_fraction=" +
                    format_double(opts.min_row_fraction) + ", max_vocab=" +
                    (opts.max_vocab ? std::to_string(*opts.max_vocab) : "none") + ", rows=" +
                    std::to_string(rows.size()) + ")");
  std::vector<std::string> vocab;
  for (auto& [cov, gram] : kept) vocab.push_back(gram);
  std::sort(vocab.begin(), vocab.end());
  return vocab;
}

inline FeatureMatrix ngram_features(const std::vector<RowLanguage>& rows, const NgramOptions& opts = {}) {
  FeatureMatrix m;
  if (opts.vocabulary) {
    m.names = *opts.vocabulary;
    std::sort(m.names.begin(), m.names.end());
    m.names.erase(std::unique(m.names.begin(), m.names.end()), m.names.end());
    if (m.names.empty()) fail_validation("ngram_features: fixed vocabulary is empty");
  } else {
    m.names = ngram_vocabulary(rows, opts);
  }
  std::unordered_map<std::string, Eigen::Index> col;
  for (std::size_t j = 0; j < m.names.size(); ++j) col.emplace(m.names[j], static_cast<Eigen::Index>(j));
  m.values = Matrix::Constant(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.names.size()),
                              apply(opts.transform, 0.0));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.row_ids.push_back(rows[i].id);
    for (std::size_t k = 0; k < rows[i].freq.size() && static_cast<int>(k) < opts.n_max; ++k)
      for (const auto& [gram, f] : rows[i].freq[k]) {
        auto it = col.find(gram);
        if (it != col.end()) m.values(static_cast<Eigen::Index>(i), it->second) = apply(opts.transform, f);
      }
  }
  m.fingerprint = fingerprint(opts.describe());
  return m;
}

// ---------------------------------------------------------------------------
// Dictionary categories

struct Lexicon {
  std::string name;
  std::vector<std::pair<std::string, std::vector<std::string>>> categories;

  void validate() const {
    std::set<std::string> seen;
    for (const auto& [cat, terms] : categories) {
      if (cat.empty()) fail_validation("lexicon " + name + ": empty category name");
      if (!seen.insert(cat).second) fail_validation("lexicon " + name + ": duplicate category " + cat);
      for (const auto& t : terms) {
        if (t.empty() || t == "*") fail_validation("lexicon " + name + ": empty term in category " + cat);
        auto star = t.find('*');
        if (star != std::string::npos && star != t.size() - 1)
          fail_validation("lexicon " + name + ": wildcard not in final position in '" + t + "'");
      }
    }
  }

  std::string digest() const {
    Fnv1a h;
    h.update(name);
    for (const auto& [cat, terms] : categories) {
      h.update("\x1f" + cat);
      for (const auto& t : terms) h.update("\x1e" + t);
    }
    return h.hex();
  }
};

/// Category lists from `category,term` rows; category order follows first appearance.
inline Lexicon load_lexicon_csv(const csv::Table& t, const std::string& source) {
  auto cat_col = t.require_column("category", source);
  auto term_col = t.require_column("term", source);
  Lexicon lex;
  lex.name = source;
  std::map<std::string, std::size_t> pos;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.header.size())
      fail_validation(source + " line " + std::to_string(t.line_numbers[r]) + ": wrong field count");
    std::string cat(trim(row[cat_col]));
    std::string term = text::detail::lower_ascii(trim(row[term_col]));
    auto [it, inserted] = pos.try_emplace(cat, lex.categories.size());
    if (inserted) lex.categories.push_back({cat, {}});
    lex.categories[it->second].second.push_back(term);
  }
  lex.validate();
  return lex;
}

inline Lexicon load_lexicon_csv(const std::string& path) { return load_lexicon_csv(csv::read_file(path), path); }

/// LIWC-style .dic: a `%`-delimited id/name table, then `term<TAB>id[,id...]`.
inline Lexicon load_dic(std::istream& in, const std::string& source) {
  Lexicon lex;
  lex.name = source;
  std::string line;
  std::size_t line_no = 0;
  int percent_lines = 0;
  std::map<long long, std::size_t> by_id;
  auto split_ids = [](std::string_view s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
      if (c == ',' || c == '\t' || c == ' ') {
        if (!cur.empty()) parts.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) parts.push_back(cur);
    return parts;
  };
  while (std::getline(in, line)) {
    ++line_no;
    auto s = trim(line);
    if (s.empty()) continue;
    std::string ctx = source + " line " + std::to_string(line_no);
    if (s == "%") {
      ++percent_lines;
      continue;
    }
    if (percent_lines == 0) fail_validation(ctx + ": expected '%' header delimiter");
    if (percent_lines == 1) {
      auto parts = split_ids(s);
      if (parts.size() < 2) fail_validation(ctx + ": expected '<id> <category>'");
      long long id = parse_int(parts[0], ctx);
      std::string cat = parts[1];
      for (std::size_t i = 2; i < parts.size(); ++i) cat += " " + parts[i];
      if (!by_id.emplace(id, lex.categories.size()).second) fail_validation(ctx + ": duplicate category id");
      lex.categories.push_back({cat, {}});
      continue;
    }
    std::string term;
    std::string rest;
    auto tab = s.find('\t');
    if (tab == std::string_view::npos) tab = s.find(' ');
    if (tab == std::string_view::npos) fail_validation(ctx + ": term without category ids");
    term = text::detail::lower_ascii(trim(s.substr(0, tab)));
    for (const auto& id_str : split_ids(s.substr(tab + 1))) {
      long long id = parse_int(id_str, ctx);
      auto it = by_id.find(id);
      if (it == by_id.end()) fail_validation(ctx + ": unknown category id " + id_str);
      lex.categories[it->second].second.push_back(term);
    }
  }
  if (percent_lines < 2) fail_validation(source + ": missing closing '%' delimiter");
  lex.validate();
  return lex;
}

inline Lexicon load_dic(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_input("cannot open " + path);
  return load_dic(in, path);
}

inline Lexicon load_lexicon(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".dic") == 0) return load_dic(path);
  return load_lexicon_csv(path);
}

/// Exact and trailing-wildcard lookup from token to the ids attached to it.
class TermMatcher {
 public:
  void add(const std::string& term, int id) {
    if (!term.empty() && term.back() == '*') {
      auto prefix = term.substr(0, term.size() - 1);
      prefix_[prefix].push_back(id);
      max_prefix_ = std::max(max_prefix_, prefix.size());
    } else {
      exact_[term].push_back(id);
    }
  }

  // Every id whose term matches the token, each at most once, ascending.
  void matches(const std::string& token, std::vector<int>& out) const {
    out.clear();
    if (auto it = exact_.find(token); it != exact_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
    std::string prefix;
    for (std::size_t len = 1; len <= std::min(max_prefix_, token.size()); ++len) {
      prefix.assign(token, 0, len);
      if (auto it = prefix_.find(prefix); it != prefix_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }

  // Exact entry first, otherwise the longest matching prefix.
  std::optional<int> best(const std::string& token) const {
    if (auto it = exact_.find(token); it != exact_.end()) return it->second.front();
    std::string prefix;
    for (std::size_t len = std::min(max_prefix_, token.size()); len >= 1; --len) {
      prefix.assign(token, 0, len);
      if (auto it = prefix_.find(prefix); it != prefix_.end()) return it->second.front();
    }
    return std::nullopt;
  }

 private:
  std::unordered_map<std::string, std::vector<int>> exact_;
  std::unordered_map<std::string, std::vector<int>> prefix_;
  std::size_t max_prefix_ = 0;
};

struct LexiconOptions {
  Transform transform = Transform::none;
};

/// Share of a row's tokens matched by each category.
inline FeatureMatrix lexicon_features(const std::vector<RowLanguage>& rows, const Lexicon& lex,
                                      const LexiconOptions& opts = {}) {
  lex.validate();
  std::vector<std::size_t> order(lex.categories.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return lex.categories[a].first < lex.categories[b].first; });
  std::vector<int> col_of(lex.categories.size());
  FeatureMatrix m;
  for (std::size_t j = 0; j < order.size(); ++j) {
    col_of[order[j]] = static_cast<int>(j);
    m.names.push_back(lex.categories[order[j]].first);
  }
  TermMatcher matcher;
  for (std::size_t c = 0; c < lex.categories.size(); ++c)
    for (const auto& t : lex.categories[c].second) matcher.add(t, col_of[c]);
  m.values = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.names.size()));
  std::vector<int> hits;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    m.row_ids.push_back(r.id);
    auto uni = r.unigrams();
    if (uni.empty() || r.token_count == 0) fail_validation("lexicon_features: row " + r.id + " has zero tokens");
    for (const auto& [term, f] : uni) {
      matcher.matches(term, hits);
      for (int c : hits) m.values(static_cast<Eigen::Index>(i), c) += f;
    }
    if (opts.transform != Transform::none)
      for (Eigen::Index c = 0; c < m.values.cols(); ++c)
        m.values(static_cast<Eigen::Index>(i), c) = apply(opts.transform, m.values(static_cast<Eigen::Index>(i), c));
  }
  m.fingerprint = fingerprint("lexicon;" + lex.digest() + ";transform=" + to_string(opts.transform));
  return m;
}

// ---------------------------------------------------------------------------
// Topics

struct TopicEntry {
  std::string term;
  std::string topic;
  double weight = 0.0;
};

struct TopicTable {
  std::vector<TopicEntry> entries;

  void validate() const {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : entries) {
      if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
        fail_validation("topic table: negative or non-finite weight for (" + e.term + ", " + e.topic + ")");
      if (!seen.insert({e.term, e.topic}).second)
        fail_validation("topic table: duplicate (term, topic) pair (" + e.term + ", " + e.topic + ")");
    }
  }

  std::vector<std::string> topics() const {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.topic);
    return {s.begin(), s.end()};
  }

  std::string digest() const {
    Fnv1a h;
    for (const auto& e : entries) {
      h.update(e.term + "\x1f" + e.topic + "\x1f");
      h.update(e.weight);
    }
    return h.hex();
  }
};

inline TopicTable load_topics(const csv::Table& t, const std::string& source) {
  auto term = t.require_column("term", source);
  auto topic = t.require_column("topic_id", source);
  auto weight = t.require_column("weight", source);
  TopicTable tt;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::string ctx = source + " line " + std::to_string(t.line_numbers[r]);
    if (row.size() != t.header.size()) fail_validation(ctx + ": wrong field count");
    tt.entries.push_back({text::detail::lower_ascii(trim(row[term])), std::string(trim(row[topic])),
                          parse_double(row[weight], ctx)});
  }
  tt.validate();
  return tt;
}

inline TopicTable load_topics(const std::string& path) { return load_topics(csv::read_file(path), path); }

/// loading(row, t) = sum over words of p(w | row) * weight(t, w).
inline FeatureMatrix topic_features(const std::vector<RowLanguage>& rows, const TopicTable& topics) {
  topics.validate();
  FeatureMatrix m;
  m.names = topics.topics();
  std::unordered_map<std::string, Eigen::Index> col;
  for (std::size_t j = 0; j < m.names.size(); ++j) col.emplace(m.names[j], static_cast<Eigen::Index>(j));
  std::unordered_map<std::string, std::vector<std::pair<Eigen::Index, double>>> by_term;
  for (const auto& e : topics.entries) by_term[e.term].push_back({col.at(e.topic), e.weight});
  m.values = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    m.row_ids.push_back(r.id);
    auto uni = r.unigrams();
    if (uni.empty() || r.token_count == 0) fail_validation("topic_features: row " + r.id + " has zero tokens");
    for (const auto& [term, f] : uni) {
      auto it = by_term.find(term);
      if (it == by_term.end()) continue;
      for (const auto& [c, w] : it->second) m.values(static_cast<Eigen::Index>(i), c) += f * w;
    }
  }
  m.fingerprint = fingerprint("topics;" + topics.digest());
  return m;
}

// ---------------------------------------------------------------------------
// Stress / relaxation valence

struct ValenceLexicon {
  std::vector<std::pair<std::string, int>> entries;  // strength in [-5,-1] or [1,5]

  void validate() const {
    for (const auto& [term, s] : entries) {
      if (term.empty()) fail_validation("valence lexicon: empty term");
      if (s == 0 || s < -5 || s > 5) fail_validation("valence lexicon: strength " + std::to_string(s) + " for '" + term + "' outside [-5,-1] u [1,5]");
      auto star = term.find('*');
      if (star != std::string::npos && star != term.size() - 1)
        fail_validation("valence lexicon: wildcard not in final position in '" + term + "'");
    }
  }

  std::string digest() const {
    Fnv1a h;
    for (const auto& [t, s] : entries) h.update(t + "\x1f" + std::to_string(s) + "\x1e");
    return h.hex();
  }
};

inline ValenceLexicon load_valence(const csv::Table& t, const std::string& source) {
  auto term = t.require_column("term", source);
  auto strength = t.require_column("strength", source);
  ValenceLexicon v;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::string ctx = source + " line " + std::to_string(t.line_numbers[r]);
    if (row.size() != t.header.size()) fail_validation(ctx + ": wrong field count");
    v.entries.push_back({text::detail::lower_ascii(trim(row[term])), static_cast<int>(parse_int(row[strength], ctx))});
  }
  v.validate();
  return v;
}

inline ValenceLexicon load_valence(const std::string& path) { return load_valence(csv::read_file(path), path); }

enum class SentenceRule { max_magnitude, mean_of_matches };

/// Per-sentence stress (largest |strength| among negative matches) and relax
/// (largest positive strength) scores, averaged over every sentence of a row.
inline FeatureMatrix valence_features(const std::vector<PostRow>& rows, const ValenceLexicon& vlex,
                                      SentenceRule rule = SentenceRule::max_magnitude,
                                      const text::Tokenizer& tok = text::default_tokenizer()) {
  vlex.validate();
  TermMatcher matcher;
  for (std::size_t i = 0; i < vlex.entries.size(); ++i) matcher.add(vlex.entries[i].first, static_cast<int>(i));
  FeatureMatrix m;
  m.names = {"mean_relax", "mean_stress"};
  m.values = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.row_ids.push_back(rows[i].id);
    double stress_sum = 0.0, relax_sum = 0.0;
    std::size_t sentences = 0;
    for (const auto& p : rows[i].posts) {
      for (const auto& sentence : tok.split_sentences(p.text)) {
        ++sentences;
        double stress = 0.0, relax = 0.0, stress_total = 0.0, relax_total = 0.0;
        int n_stress = 0, n_relax = 0;
        for (const auto& t : tok.tokenize(sentence)) {
          auto hit = matcher.best(t.surface);
          if (!hit) continue;
          int s = vlex.entries[static_cast<std::size_t>(*hit)].second;
          if (s < 0) {
            stress = std::max(stress, static_cast<double>(-s));
            stress_total += -s;
            ++n_stress;
          } else {
            relax = std::max(relax, static_cast<double>(s));
            relax_total += s;
            ++n_relax;
          }
        }
        if (rule == SentenceRule::mean_of_matches) {
          stress = n_stress ? stress_total / n_stress : 0.0;
          relax = n_relax ? relax_total / n_relax : 0.0;
        }
        stress_sum += stress;
        relax_sum += relax;
      }
    }
    if (sentences == 0) fail_validation("valence_features: row " + rows[i].id + " has zero sentences");
    m.values(static_cast<Eigen::Index>(i), 0) = relax_sum / static_cast<double>(sentences);
    m.values(static_cast<Eigen::Index>(i), 1) = stress_sum / static_cast<double>(sentences);
  }
  m.fingerprint = fingerprint("valence;" + vlex.digest() + ";rule=" +
                              (rule == SentenceRule::max_magnitude ? "max" : "mean"));
  return m;
}

// ---------------------------------------------------------------------------
// Engagement

/// Posting-behaviour features. Hours are read in one fixed UTC offset.
inline FeatureMatrix engagement_features(const std::vector<PostRow>& rows, int utc_offset_minutes = 0,
                                         const text::Tokenizer& tok = text::default_tokenizer()) {
  FeatureMatrix m;
  m.names = {"mean_post_len_tokens", "n_hashtags", "n_posts", "n_posts_00_06", "n_urls"};
  m.values = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.row_ids.push_back(rows[i].id);
    double n_posts = 0, night = 0, tokens = 0, urls = 0, tags = 0;
    for (const auto& p : rows[i].posts) {
      ++n_posts;
      auto local = p.created_at + std::chrono::minutes(utc_offset_minutes);
      auto since_midnight = local - std::chrono::floor<std::chrono::days>(local);
      if (std::chrono::duration_cast<std::chrono::hours>(since_midnight).count() < 6) ++night;
      for (const auto& t : tok.tokenize(p.text)) {
        ++tokens;
        if (t.kind == text::TokenKind::url) ++urls;
        if (t.kind == text::TokenKind::hashtag) ++tags;
      }
    }
    auto r = static_cast<Eigen::Index>(i);
    m.values(r, 0) = n_posts > 0 ? tokens / n_posts : 0.0;
    m.values(r, 1) = tags;
    m.values(r, 2) = n_posts;
    m.values(r, 3) = night;
    m.values(r, 4) = urls;
  }
  m.fingerprint = fingerprint("engagement;utc_offset_minutes=" + std::to_string(utc_offset_minutes));
  return m;
}

}  // namespace stressmeter::features
