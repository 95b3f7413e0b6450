#pragma once

// Seeded synthetic population: users with a latent stress trait, PSS surveys,
// posts on two platforms and county membership. Language follows a log-linear
// word model so that the trait signal, platform-specific vocabulary and
// county structure are known exactly.
//
// Vocabulary groups
//   neutral   no trait link
//   stress    rate grows with the trait on both platforms
//   relax     rate shrinks with the trait on both platforms
//   slang     trait-linked on the source platform only; on the target platform
//             it is `slang_shift` times more frequent and driven by an
//             unrelated per-user factor instead

#include "common.hpp"
#include "corpus.hpp"
#include "features.hpp"
#include "rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace stressmeter::synth {

struct Config {
  std::uint64_t seed = 7;
  int n_users = 5000;
  int n_labeled = 400;       // users with a survey and posts on both platforms
  int n_counties = 60;
  double county_mean_sd = 0.8;
  double county_size_sigma = 0.6;  // log-normal spread of county populations
  int labeled_posts = 90;    // per platform
  int unlabeled_posts = 110;  // target platform only
  int min_post_words = 6;
  int max_post_words = 20;
  double signal = 0.07;        // log-rate slope of stress/relax words per trait unit
  double slang_signal = 0.2;   // source-platform slope of slang words
  double slang_shift = 3.0;    // target/source rate ratio of slang words
  double slang_noise = 0.8;    // sd of the unrelated target-platform slang factor
  double item_noise = 0.7;
  Platform source = Platform::facebook;
  Platform target = Platform::twitter;

  Platform other(Platform p) const { return p == source ? target : source; }
};

struct Vocabulary {
  std::vector<std::string> neutral, stress, relax, slang;
};

inline const Vocabulary& vocabulary() {
  static const Vocabulary v{
      {"the",     "a",      "and",    "to",     "of",      "i",       "it",     "is",     "in",      "that",
       "you",     "for",    "on",     "my",     "this",    "with",    "be",     "at",     "was",     "so",
       "just",    "have",   "me",     "but",    "we",      "are",     "not",    "all",    "what",    "day",
       "get",     "out",    "up",     "go",     "one",     "now",     "like",   "time",   "today",   "good",
       "new",     "people", "see",    "got",    "back",    "know",    "going",  "can",    "night",   "week",
       "friends", "home",   "work",   "school", "game",    "food",    "music",  "movie",  "dinner",  "coffee",
       "weekend", "summer", "car",    "phone",  "book",    "team",    "city",   "house",  "dog",     "cat",
       "morning", "lunch",  "shop",   "class",  "show",    "birthday", "party", "family", "kids",    "mom",
       "dad",     "brother", "sister", "church", "store",  "news",    "weather", "rain",  "sun",     "park",
       "walk",    "drive",  "watch",  "play",   "read",    "cook",    "eat",    "drink",  "sleep",   "talk",
       "call",    "text",   "pic",    "video",  "song",    "year",    "month",  "hour",   "minute",  "place"},
      {"tired", "exhausted", "stressed", "anxious", "hurt", "sick", "overwhelmed", "deadline", "worried", "headache"},
      {"relaxing", "grateful", "blessed", "chill", "peaceful", "vacation", "calm", "enjoy", "smile", "beach"},
      {"lol", "omg", "haha", "smh", "tbh", "lmao", "idk", "ikr", "ugh", "wtf"}};
  return v;
}

/// Demo dictionary over the synthetic vocabulary, in the category,term layout.
/// Neutral categories carry no trait signal.
inline features::Lexicon demo_lexicon() {
  const auto& v = vocabulary();
  features::Lexicon lex;
  lex.name = "demo";
  lex.categories = {
      {"negemo", v.stress},
      {"posemo", v.relax},
      {"netspeak", v.slang},
      {"anx", {"anxious", "worried", "stressed", "overwhelmed"}},
      {"sad", {"hurt", "tired", "exhausted"}},
      {"health", {"sick", "headache", "hurt", "tired"}},
      {"body", {"headache", "hurt"}},
      {"bio", {"eat", "drink", "sleep", "sick", "headache", "food"}},
      {"work", {"work", "school", "class", "deadline", "team"}},
      {"relax_time", {"vacation", "beach", "weekend", "summer", "park"}},
      {"article", {"the", "a"}},
      {"conj", {"and", "but", "so"}},
      {"prep", {"to", "of", "in", "for", "on", "with", "at"}},
      {"pronoun", {"i", "it", "you", "me", "my", "we", "this", "that"}},
      {"i", {"i", "me", "my"}},
      {"we", {"we"}},
      {"you", {"you"}},
      {"ipron", {"it", "this", "that", "what"}},
      {"negate", {"not"}},
      {"verb", {"is", "be", "was", "have", "are", "get", "go", "see", "got", "know", "going", "can", "like"}},
      {"auxverb", {"is", "be", "was", "have", "are", "can"}},
      {"focuspast", {"was", "got"}},
      {"focuspresent", {"is", "are", "know", "can", "now", "today"}},
      {"focusfuture", {"going"}},
      {"adverb", {"just", "now", "so"}},
      {"quant", {"all", "one"}},
      {"social", {"friends", "people", "party", "talk", "call", "text"}},
      {"family", {"family", "kids", "mom", "dad", "brother", "sister"}},
      {"time", {"day", "today", "night", "week", "morning", "year", "month", "hour", "minute", "time"}},
      {"relativ", {"up", "out", "back", "at", "in", "on"}},
      {"motion", {"go", "going", "drive", "walk"}},
      {"space", {"up", "out", "in", "home", "city", "place"}},
      {"leisure", {"game", "music", "movie", "show", "play", "watch", "read", "song", "video"}},
      {"home", {"home", "house", "dog", "cat"}},
      {"ingest", {"food", "dinner", "coffee", "lunch", "cook", "eat", "drink"}},
      {"see", {"see", "watch", "pic", "video"}},
      {"hear", {"music", "song", "talk", "call"}},
      {"money", {"shop", "store", "car"}},
      {"religion", {"church"}},
      {"school", {"school", "class", "book", "read"}},
      {"cogproc", {"know", "not", "what", "like"}},
      {"assent", {"good"}},
      {"nature", {"weather", "rain", "sun", "summer", "park"}},
      {"tech", {"phone", "text", "pic", "video", "news"}},
      {"sports", {"game", "team"}},
  };
  return lex;
}

/// Topic table over the same vocabulary: three groups plus two mixed topics.
inline features::TopicTable demo_topics() {
  const auto& v = vocabulary();
  features::TopicTable t;
  auto add = [&](const std::vector<std::string>& words, const std::string& topic, double w) {
    for (const auto& word : words) t.entries.push_back({word, topic, w});
  };
  add(v.stress, "t_strain", 0.1);
  add(v.relax, "t_ease", 0.1);
  add(v.slang, "t_chat", 0.1);
  add({v.neutral.begin(), v.neutral.begin() + 40}, "t_everyday", 0.025);
  add({v.neutral.begin() + 40, v.neutral.end()}, "t_life", 0.0125);
  return t;
}

/// Valence terms: stress words negative, relax words positive.
inline features::ValenceLexicon demo_valence() {
  const auto& v = vocabulary();
  features::ValenceLexicon vl;
  for (std::size_t i = 0; i < v.stress.size(); ++i) vl.entries.emplace_back(v.stress[i], -static_cast<int>(2 + i % 4));
  for (std::size_t i = 0; i < v.relax.size(); ++i) vl.entries.emplace_back(v.relax[i], static_cast<int>(2 + i % 4));
  return vl;
}

struct County {
  std::string fips;
  double trait_mean = 0.0;
  int n_users = 0;
  // SES covariates, loosely tied to the trait mean
  double median_income = 0.0;
  double pct_college = 0.0;
  double median_age = 0.0;
  double pct_female = 0.0;
  // synthetic outcomes
  double gallup_stress = 0.0;
  double pct_physically_inactive = 0.0;
};

struct User {
  std::string id;
  std::string fips;
  double trait = 0.0;
  bool labeled = false;
};

struct Population {
  Config config;
  std::vector<County> counties;
  std::vector<User> users;
  std::vector<PostRecord> posts;  // every post, each with its user's fips
  std::vector<SurveyResponse> surveys;

  std::vector<double> labeled_traits() const {
    std::vector<double> t;
    for (const auto& u : users)
      if (u.labeled) t.push_back(u.trait);
    return t;
  }

  CountyOutcomes outcomes() const {
    CountyOutcomes o;
    o.columns = {"true_stress", "gallup_stress", "pct_physically_inactive", "median_income", "pct_college",
                 "median_age", "pct_female"};
    for (const auto& c : counties)
      o.rows[c.fips] = {c.trait_mean, c.gallup_stress, c.pct_physically_inactive, c.median_income, c.pct_college,
                        c.median_age, c.pct_female};
    return o;
  }
};

namespace detail {

struct WordModel {
  std::vector<const std::string*> words;
  std::vector<double> base;
};

// Zipf-like base rates for the neutral block, fixed rates for the rest.
inline WordModel base_model() {
  const auto& v = vocabulary();
  WordModel m;
  for (std::size_t i = 0; i < v.neutral.size(); ++i) {
    m.words.push_back(&v.neutral[i]);
    m.base.push_back(1.0 / std::pow(static_cast<double>(i) + 5.0, 0.9));
  }
  double neutral_total = 0.0;
  for (double b : m.base) neutral_total += b;
  auto add = [&](const std::vector<std::string>& ws, double share) {
    for (const auto& w : ws) {
      m.words.push_back(&w);
      m.base.push_back(neutral_total * share / static_cast<double>(ws.size()));
    }
  };
  add(v.stress, 0.05);
  add(v.relax, 0.05);
  add(v.slang, 0.04);
  return m;
}

inline std::string user_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "u%05d", i);
  return buf;
}

}  // namespace detail

inline Population generate(const Config& cfg) {
  if (cfg.n_users < 1 || cfg.n_counties < 1 || cfg.n_labeled < 0 || cfg.n_labeled > cfg.n_users)
    fail_validation("synth: inconsistent population sizes");
  if (cfg.min_post_words < 1 || cfg.max_post_words < cfg.min_post_words) fail_validation("synth: bad post length range");
  RandomStreams streams(cfg.seed);
  Population pop;
  pop.config = cfg;

  // Counties: trait means, populations and covariates.
  {
    auto rng = streams.stream("counties");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> weight;
    for (int c = 0; c < cfg.n_counties; ++c) {
      County county;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%02d%03d", 1 + c / 20, 1 + 2 * (c % 20));
      county.fips = buf;
      county.trait_mean = cfg.county_mean_sd * gauss(rng);
      weight.push_back(std::exp(cfg.county_size_sigma * gauss(rng)));
      double ses = -0.5 * county.trait_mean + gauss(rng);
      county.median_income = std::exp(10.8 + 0.25 * ses + 0.05 * gauss(rng));
      county.pct_college = std::clamp(28.0 + 7.0 * ses + 2.0 * gauss(rng), 5.0, 70.0);
      county.median_age = std::clamp(39.0 + 2.5 * gauss(rng), 25.0, 60.0);
      county.pct_female = std::clamp(50.5 + 1.0 * gauss(rng), 45.0, 56.0);
      county.gallup_stress = 0.35 + 0.04 * county.trait_mean + 0.03 * gauss(rng);
      county.pct_physically_inactive = 24.0 + 2.0 * county.trait_mean - 1.5 * ses + 1.5 * gauss(rng);
      pop.counties.push_back(county);
    }
    // Deal users to counties in proportion to the weights (largest remainder).
    double total = 0.0;
    for (double w : weight) total += w;
    int assigned = 0;
    std::vector<std::pair<double, int>> rem;
    for (int c = 0; c < cfg.n_counties; ++c) {
      double exact = cfg.n_users * weight[static_cast<std::size_t>(c)] / total;
      int n = static_cast<int>(std::floor(exact));
      pop.counties[static_cast<std::size_t>(c)].n_users = n;
      assigned += n;
      rem.emplace_back(exact - n, c);
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (int i = 0; i < cfg.n_users - assigned; ++i) ++pop.counties[static_cast<std::size_t>(rem[static_cast<std::size_t>(i)].second)].n_users;
  }

  // Users: trait around the county mean; labeled users spread evenly over the roster.
  {
    auto rng = streams.stream("traits");
    std::normal_distribution<double> gauss(0.0, 1.0);
    int next = 0;
    for (const auto& c : pop.counties)
      for (int i = 0; i < c.n_users; ++i) pop.users.push_back({detail::user_id(next++), c.fips, c.trait_mean + gauss(rng), false});
    // The roster is county-ordered; pick labeled users by a seeded shuffle.
    std::vector<std::size_t> order(pop.users.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto pick = streams.stream("labeled");
    std::shuffle(order.begin(), order.end(), pick);
    for (int i = 0; i < cfg.n_labeled; ++i) pop.users[order[static_cast<std::size_t>(i)]].labeled = true;
  }

  // Surveys: items centred at 2 and moving with the trait; reverse-coded items
  // move the other way so the scored total rises with the trait.
  {
    auto rng = streams.stream("survey");
    std::normal_distribution<double> noise(0.0, cfg.item_noise);
    std::uniform_int_distribution<int> age(18, 70);
    const std::array<const char*, 5> races{"white", "black", "asian", "hispanic", "other"};
    const std::array<const char*, 4> edu{"high_school", "some_college", "bachelor", "graduate"};
    const std::array<const char*, 3> income{"low", "middle", "high"};
    PssScale scale;
    for (const auto& u : pop.users) {
      if (!u.labeled) continue;
      SurveyResponse s;
      s.user_id = u.id;
      for (int i = 0; i < kPssItems; ++i) {
        double dir = scale.reverse[static_cast<std::size_t>(i)] ? -1.0 : 1.0;
        double raw = 2.0 + dir * 0.9 * u.trait + noise(rng);
        s.items[static_cast<std::size_t>(i)] = static_cast<int>(std::clamp(std::lround(raw), 0L, 4L));
      }
      s.age = age(rng);
      s.gender = (rng() & 1) ? "female" : "male";
      s.race = races[rng() % races.size()];
      s.education = edu[rng() % edu.size()];
      s.income = income[rng() % income.size()];
      pop.surveys.push_back(std::move(s));
    }
  }

  // Posts.
  {
    auto rng = streams.stream("posts");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> length(cfg.min_post_words, cfg.max_post_words);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::int64_t> second(0, 365LL * 86400 - 1);
    const auto epoch = std::chrono::sys_days{std::chrono::year{2016} / 1 / 1};
    const auto model = detail::base_model();
    const auto& v = vocabulary();
    const std::size_t n_neutral = v.neutral.size(), n_shared = v.stress.size() + v.relax.size();
    const std::array<const char*, 6> emoticons{":)", ":(", ":D", ";)", "<3", ":/"};
    std::vector<double> w(model.base.size());
    for (const auto& u : pop.users) {
      for (Platform p : kPlatforms) {
        if (!u.labeled && p != cfg.target) continue;
        const bool source = p == cfg.source;
        const double factor = source ? cfg.slang_signal * u.trait : cfg.slang_noise * gauss(rng);
        for (std::size_t j = 0; j < w.size(); ++j) {
          double slope = 0.0;
          if (j >= n_neutral && j < n_neutral + v.stress.size()) slope = cfg.signal;
          else if (j >= n_neutral + v.stress.size() && j < n_neutral + n_shared) slope = -cfg.signal;
          double lw = slope * u.trait;
          if (j >= n_neutral + n_shared) lw = factor + (source ? 0.0 : std::log(cfg.slang_shift));
          w[j] = model.base[j] * std::exp(lw);
        }
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        const int n_posts = u.labeled ? cfg.labeled_posts : cfg.unlabeled_posts;
        const double tag_rate = source ? 0.03 : 0.15, url_rate = source ? 0.05 : 0.12;
        for (int k = 0; k < n_posts; ++k) {
          std::string text;
          int n = length(rng);
          for (int t = 0; t < n; ++t) {
            const std::string& word = *model.words[pick(rng)];
            if (!text.empty()) text += ' ';
            if (t == 0 && word.size() > 1 && unit(rng) < 0.5) {
              text += static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
              text.append(word, 1);
            } else {
              text += word;
            }
          }
          double r = unit(rng);
          if (r < 0.35) text += '.';
          else if (r < 0.5) text += '!';
          if (unit(rng) < 0.08) text += std::string(" ") + emoticons[rng() % emoticons.size()];
          if (unit(rng) < tag_rate) text += " #" + v.neutral[rng() % 60];
          if (unit(rng) < url_rate) text += " http://t.co/x" + std::to_string(rng() % 100000);
          PostRecord rec;
          rec.user_id = u.id;
          rec.platform = p;
          rec.created_at = epoch + std::chrono::seconds(second(rng));
          rec.text = std::move(text);
          rec.fips = u.fips;
          pop.posts.push_back(std::move(rec));
        }
      }
    }
  }
  return pop;
}

/// Per-county mean of the realized user traits (what a perfect model could see).
inline std::map<std::string, double> realized_county_means(const Population& pop) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& u : pop.users) {
    auto& a = acc[u.fips];
    a.first += u.trait;
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [f, a] : acc) out[f] = a.first / a.second;
  return out;
}

// ---------------------------------------------------------------------------
// Writers for the on-disk fixture used by the CLI.

inline void write_lexicon_csv(std::ostream& out, const features::Lexicon& lex) {
  csv::write_row(out, {"category", "term"});
  for (const auto& [cat, terms] : lex.categories)
    for (const auto& t : terms) csv::write_row(out, {cat, t});
}

inline void write_topics_csv(std::ostream& out, const features::TopicTable& t) {
  csv::write_row(out, {"term", "topic_id", "weight"});
  for (const auto& e : t.entries) csv::write_row(out, {e.term, e.topic, format_double(e.weight)});
}

inline void write_valence_csv(std::ostream& out, const features::ValenceLexicon& v) {
  csv::write_row(out, {"term", "strength"});
  for (const auto& [term, s] : v.entries) csv::write_row(out, {term, std::to_string(s)});
}

inline void write_outcomes_csv(std::ostream& out, const CountyOutcomes& o) {
  std::vector<std::string> header{"fips"};
  header.insert(header.end(), o.columns.begin(), o.columns.end());
  csv::write_row(out, header);
  for (const auto& [fips, values] : o.rows) {
    std::vector<std::string> row{fips};
    for (const auto& v : values) row.push_back(v ? format_double(*v) : "NA");
    csv::write_row(out, row);
  }
}

}  // namespace stressmeter::synth
