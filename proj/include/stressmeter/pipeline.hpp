#pragma once

// Feature-family selection shared by the CLI, the evaluation protocols and
// county scoring: one spec featurizes users and counties identically.

#include "common.hpp"
#include "corpus.hpp"
#include "features.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace stressmeter::pipeline {

enum class Family { ngrams, lexicon, topics, valence, engagement };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::ngrams: return "ngrams";
    case Family::lexicon: return "lexicon";
    case Family::topics: return "topics";
    case Family::valence: return "valence";
    case Family::engagement: return "engagement";
  }
  return "ngrams";
}

inline Family parse_family(std::string_view s) {
  for (Family f : {Family::ngrams, Family::lexicon, Family::topics, Family::valence, Family::engagement})
    if (s == to_string(f)) return f;
  if (s == "liwc") return Family::lexicon;
  fail_validation("unknown feature family '" + std::string(s) + "' (ngrams, lexicon, topics, valence, engagement)");
}

struct FeatureSpec {
  std::vector<Family> families{Family::lexicon};
  features::NgramOptions ngram;
  std::optional<features::Lexicon> lexicon;
  features::LexiconOptions lexicon_options;
  std::optional<features::TopicTable> topics;
  std::optional<features::ValenceLexicon> valence;
  features::SentenceRule sentence_rule = features::SentenceRule::max_magnitude;
  int utc_offset_minutes = 0;

  bool has(Family f) const { return std::find(families.begin(), families.end(), f) != families.end(); }

  void validate() const {
    if (families.empty()) fail_validation("no feature families selected");
    if (has(Family::lexicon) && !lexicon) fail_validation("lexicon features requested but no lexicon was given");
    if (has(Family::topics) && !topics) fail_validation("topic features requested but no topic table was given");
    if (has(Family::valence) && !valence) fail_validation("valence features requested but no valence lexicon was given");
  }

  /// True when every family can be computed from a word distribution alone.
  bool language_only() const { return !has(Family::valence) && !has(Family::engagement); }

  /// Freezes data-dependent choices (the n-gram vocabulary) on these rows.
  void fit(const std::vector<features::RowLanguage>& rows) {
    if (has(Family::ngrams) && !ngram.vocabulary) ngram.vocabulary = features::ngram_vocabulary(rows, ngram);
  }
};

/// Self-contained JSON: dictionaries and the frozen n-gram vocabulary are
/// embedded so a model bundle can featurize new rows without other files.
inline nlohmann::ordered_json to_json(const FeatureSpec& s) {
  nlohmann::ordered_json j;
  std::vector<std::string> fams;
  for (Family f : s.families) fams.push_back(to_string(f));
  j["families"] = fams;
  j["ngram"] = {{"n_max", s.ngram.n_max},
                {"min_row_fraction", s.ngram.min_row_fraction},
                {"max_vocab", s.ngram.max_vocab ? nlohmann::ordered_json(*s.ngram.max_vocab) : nlohmann::ordered_json()},
                {"transform", features::to_string(s.ngram.transform)}};
  j["ngram"]["vocabulary"] = s.ngram.vocabulary ? nlohmann::ordered_json(*s.ngram.vocabulary) : nlohmann::ordered_json();
  if (s.lexicon) {
    nlohmann::ordered_json cats = nlohmann::ordered_json::array();
    for (const auto& [c, terms] : s.lexicon->categories) cats.push_back({{"category", c}, {"terms", terms}});
    j["lexicon"] = {{"name", s.lexicon->name}, {"categories", cats}};
  } else {
    j["lexicon"] = nullptr;
  }
  j["lexicon_transform"] = features::to_string(s.lexicon_options.transform);
  if (s.topics) {
    nlohmann::ordered_json e = nlohmann::ordered_json::array();
    for (const auto& t : s.topics->entries) e.push_back({t.term, t.topic, t.weight});
    j["topics"] = e;
  } else {
    j["topics"] = nullptr;
  }
  if (s.valence) {
    nlohmann::ordered_json e = nlohmann::ordered_json::array();
    for (const auto& [t, v] : s.valence->entries) e.push_back({t, v});
    j["valence"] = e;
  } else {
    j["valence"] = nullptr;
  }
  j["sentence_rule"] = s.sentence_rule == features::SentenceRule::max_magnitude ? "max" : "mean";
  j["utc_offset_minutes"] = s.utc_offset_minutes;
  return j;
}

inline features::SentenceRule parse_sentence_rule(std::string_view s) {
  if (s == "max") return features::SentenceRule::max_magnitude;
  if (s == "mean") return features::SentenceRule::mean_of_matches;
  fail_validation("unknown sentence rule '" + std::string(s) + "' (max, mean)");
}

inline FeatureSpec feature_spec_from_json(const nlohmann::json& j) {
  try {
    FeatureSpec s;
    s.families.clear();
    for (const auto& f : j.at("families")) s.families.push_back(parse_family(f.get<std::string>()));
    const auto& ng = j.at("ngram");
    s.ngram.n_max = ng.at("n_max").get<int>();
    s.ngram.min_row_fraction = ng.at("min_row_fraction").get<double>();
    if (!ng.at("max_vocab").is_null()) s.ngram.max_vocab = ng.at("max_vocab").get<std::size_t>();
    s.ngram.transform = features::parse_transform(ng.at("transform").get<std::string>());
    if (!ng.at("vocabulary").is_null()) s.ngram.vocabulary = ng.at("vocabulary").get<std::vector<std::string>>();
    if (!j.at("lexicon").is_null()) {
      features::Lexicon lex;
      lex.name = j["lexicon"].at("name").get<std::string>();
      for (const auto& c : j["lexicon"].at("categories"))
        lex.categories.emplace_back(c.at("category").get<std::string>(), c.at("terms").get<std::vector<std::string>>());
      lex.validate();
      s.lexicon = std::move(lex);
    }
    s.lexicon_options.transform = features::parse_transform(j.at("lexicon_transform").get<std::string>());
    if (!j.at("topics").is_null()) {
      features::TopicTable t;
      for (const auto& e : j["topics"])
        t.entries.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>(), e.at(2).get<double>()});
      t.validate();
      s.topics = std::move(t);
    }
    if (!j.at("valence").is_null()) {
      features::ValenceLexicon v;
      for (const auto& e : j["valence"]) v.entries.emplace_back(e.at(0).get<std::string>(), e.at(1).get<int>());
      v.validate();
      s.valence = std::move(v);
    }
    s.sentence_rule = parse_sentence_rule(j.at("sentence_rule").get<std::string>());
    s.utc_offset_minutes = j.at("utc_offset_minutes").get<int>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail_validation(std::string("malformed feature spec JSON: ") + e.what());
  }
}

namespace detail {

inline features::FeatureMatrix prefixed(features::FeatureMatrix m, const std::string& prefix) {
  for (auto& n : m.names) n = prefix + n;
  return m;
}

inline features::FeatureMatrix concat_all(std::vector<features::FeatureMatrix> parts) {
  features::FeatureMatrix out = std::move(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) out = features::hconcat(out, parts[i]);
  return out;
}

inline features::FeatureMatrix language_family(Family f, const std::vector<features::RowLanguage>& lang,
                                               const FeatureSpec& spec) {
  switch (f) {
    case Family::ngrams: return prefixed(features::ngram_features(lang, spec.ngram), "ng:");
    case Family::lexicon: return prefixed(features::lexicon_features(lang, *spec.lexicon, spec.lexicon_options), "lex:");
    case Family::topics: return prefixed(features::topic_features(lang, *spec.topics), "topic:");
    default: break;
  }
  fail_validation("feature family " + to_string(f) + " needs posts, not a word distribution");
}

}  // namespace detail

/// Column names carry a family prefix (lex:, topic:, ng:, val:, eng:) so that
/// families never collide when concatenated.
inline features::FeatureMatrix featurize(const std::vector<features::PostRow>& rows, const FeatureSpec& spec,
                                         const text::Tokenizer& tok = text::default_tokenizer()) {
  spec.validate();
  std::vector<features::RowLanguage> lang;
  bool need_lang = std::any_of(spec.families.begin(), spec.families.end(),
                               [](Family f) { return f == Family::ngrams || f == Family::lexicon || f == Family::topics; });
  if (need_lang) lang = features::language_of(rows, spec.has(Family::ngrams) ? spec.ngram.n_max : 1, tok);
  std::vector<features::FeatureMatrix> parts;
  for (Family f : spec.families) {
    if (f == Family::valence)
      parts.push_back(detail::prefixed(features::valence_features(rows, *spec.valence, spec.sentence_rule, tok), "val:"));
    else if (f == Family::engagement)
      parts.push_back(detail::prefixed(features::engagement_features(rows, spec.utc_offset_minutes, tok), "eng:"));
    else
      parts.push_back(detail::language_family(f, lang, spec));
  }
  return detail::concat_all(std::move(parts));
}

/// County rows (or any precomputed word distribution).
inline features::FeatureMatrix featurize(const std::vector<features::RowLanguage>& rows, const FeatureSpec& spec) {
  spec.validate();
  if (!spec.language_only())
    fail_validation("valence and engagement features need posts and cannot be computed for word distributions");
  std::vector<features::FeatureMatrix> parts;
  for (Family f : spec.families) parts.push_back(detail::language_family(f, rows, spec));
  return detail::concat_all(std::move(parts));
}

/// Source and target features of the same users over one shared column set.
struct TwoDomain {
  features::FeatureMatrix source;
  features::FeatureMatrix target;
  FeatureSpec spec;  // as fitted; featurizes new target rows the same way
};

inline TwoDomain featurize_two_domains(const std::vector<UserProfile>& cohort, Platform source, Platform target,
                                       FeatureSpec spec, const text::Tokenizer& tok = text::default_tokenizer()) {
  auto rs = features::platform_rows(cohort, source);
  auto rt = features::platform_rows(cohort, target);
  if (spec.has(Family::ngrams) && !spec.ngram.vocabulary) {
    auto lang = features::language_of(rs, spec.ngram.n_max, tok);
    auto lt = features::language_of(rt, spec.ngram.n_max, tok);
    lang.insert(lang.end(), lt.begin(), lt.end());
    spec.fit(lang);
  }
  auto fs = featurize(rs, spec, tok);
  auto ft = featurize(rt, spec, tok);
  return {std::move(fs), std::move(ft), std::move(spec)};
}

}  // namespace stressmeter::pipeline
