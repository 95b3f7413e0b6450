#pragma once

#include "common.hpp"
#include "csv.hpp"
#include "text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace stressmeter {

enum class Platform { facebook = 0, twitter = 1 };
inline constexpr std::array<Platform, 2> kPlatforms = {Platform::facebook, Platform::twitter};

inline std::string to_string(Platform p) { return p == Platform::facebook ? "facebook" : "twitter"; }

inline std::optional<Platform> parse_platform(std::string_view s) {
  if (s == "facebook") return Platform::facebook;
  if (s == "twitter") return Platform::twitter;
  return std::nullopt;
}

template <class T>
using PerPlatform = std::array<T, 2>;

inline std::size_t index(Platform p) { return static_cast<std::size_t>(p); }

using Timestamp = std::chrono::sys_seconds;

/// Parses YYYY-MM-DD[THH:MM[:SS[.fff]]][Z|+HH:MM|-HH:MM] into UTC seconds.
inline std::optional<Timestamp> parse_iso8601(std::string_view s) {
  auto digits = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9') return false;
      v = v * 10 + (s[i] - '0');
    }
    out = v;
    return true;
  };
  int y, mo, d, h = 0, mi = 0, sec = 0;
  if (!digits(0, 4, y) || s.size() < 10 || s[4] != '-' || !digits(5, 2, mo) || s[7] != '-' || !digits(8, 2, d))
    return std::nullopt;
  std::size_t pos = 10;
  long offset_seconds = 0;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != ' ') return std::nullopt;
    if (!digits(pos + 1, 2, h) || pos + 3 >= s.size() || s[pos + 3] != ':' || !digits(pos + 4, 2, mi))
      return std::nullopt;
    pos += 6;
    if (pos < s.size() && s[pos] == ':') {
      if (!digits(pos + 1, 2, sec)) return std::nullopt;
      pos += 3;
      if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
      }
    }
    if (pos < s.size()) {
      if (s[pos] == 'Z' && pos + 1 == s.size()) {
        pos = s.size();
      } else if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
        int oh, om;
        if (!digits(pos + 1, 2, oh) || !digits(pos + 4, 2, om)) return std::nullopt;
        offset_seconds = (oh * 3600L + om * 60L) * (s[pos] == '+' ? 1 : -1);
        pos = s.size();
      } else {
        return std::nullopt;
      }
    }
  }
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  auto tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec} - seconds{offset_seconds};
  return time_point_cast<seconds>(tp);
}

inline std::string format_iso8601(Timestamp t) {
  using namespace std::chrono;
  auto day_point = floor<days>(t);
  year_month_day ymd{day_point};
  auto tod = t - day_point;
  long secs = static_cast<long>(tod.count());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), secs / 3600,
                (secs / 60) % 60, secs % 60);
  return buf;
}

struct PostRecord {
  std::string user_id;
  Platform platform = Platform::facebook;
  Timestamp created_at{};
  std::string text;
  std::string fips;  // only for county-level posts
};

struct Reject {
  std::size_t line = 0;
  std::string reason;
};

struct LoadReport {
  std::size_t accepted = 0;
  std::vector<Reject> rejects;
};

struct PostParseOptions {
  bool require_fips = false;
};

inline bool valid_fips(std::string_view f) {
  return f.size() == 5 && std::all_of(f.begin(), f.end(), [](char c) { return c >= '0' && c <= '9'; });
}

/// Streams posts.jsonl in file order. Bad lines become rejects with their line
/// number; only an unreadable stream is fatal.
inline LoadReport for_each_post(std::istream& in, const std::function<void(PostRecord&&)>& sink,
                                PostParseOptions opts = {}) {
  LoadReport report;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto reject = [&](std::string why) { report.rejects.push_back({line_no, std::move(why)}); };
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      reject("malformed JSON");
      continue;
    }
    if (!obj.is_object()) {
      reject("not a JSON object");
      continue;
    }
    auto get_string = [&](const char* key) -> std::optional<std::string> {
      auto it = obj.find(key);
      if (it == obj.end() || !it->is_string()) return std::nullopt;
      return it->get<std::string>();
    };
    auto user = get_string("user_id");
    auto platform = get_string("platform");
    auto created = get_string("created_at");
    auto body = get_string("text");
    if (!user || user->empty()) { reject("missing user_id"); continue; }
    if (!platform) { reject("missing platform"); continue; }
    auto p = parse_platform(*platform);
    if (!p) { reject("unknown platform '" + *platform + "'"); continue; }
    if (!created) { reject("missing created_at"); continue; }
    auto ts = parse_iso8601(*created);
    if (!ts) { reject("unparseable created_at '" + *created + "'"); continue; }
    if (!body || trim(*body).empty()) { reject("empty text"); continue; }
    PostRecord rec{*user, *p, *ts, std::move(*body), {}};
    if (opts.require_fips) {
      auto f = get_string("fips");
      if (!f || !valid_fips(*f)) { reject("malformed fips"); continue; }
      rec.fips = *f;
    }
    ++report.accepted;
    sink(std::move(rec));
  }
  if (in.bad()) fail_input("read error after line " + std::to_string(line_no));
  return report;
}

struct LoadedPosts {
  std::vector<PostRecord> posts;
  LoadReport report;
};

inline LoadedPosts load_posts(std::istream& in, PostParseOptions opts = {}) {
  LoadedPosts out;
  out.report = for_each_post(in, [&](PostRecord&& r) { out.posts.push_back(std::move(r)); }, opts);
  return out;
}

inline LoadedPosts load_posts(const std::string& path, PostParseOptions opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_input("cannot open " + path);
  return load_posts(in, opts);
}

inline void write_rejects(const std::string& path, const LoadReport& report) {
  auto out = csv::open_output(path);
  csv::write_row(out, {"line", "reason"});
  for (const auto& r : report.rejects) csv::write_row(out, {std::to_string(r.line), r.reason});
}

inline void write_posts_jsonl(std::ostream& out, const std::vector<PostRecord>& posts) {
  for (const auto& p : posts) {
    nlohmann::ordered_json obj;
    obj["user_id"] = p.user_id;
    obj["platform"] = to_string(p.platform);
    obj["created_at"] = format_iso8601(p.created_at);
    obj["text"] = p.text;
    if (!p.fips.empty()) obj["fips"] = p.fips;
    out << obj.dump() << '\n';
  }
}

/// Drops repeated (user, platform, text) posts, keeping the earliest.
inline std::vector<PostRecord> drop_exact_duplicates(std::vector<PostRecord> posts) {
  std::stable_sort(posts.begin(), posts.end(), [](const PostRecord& a, const PostRecord& b) {
    return std::tie(a.user_id, a.platform, a.text, a.created_at) < std::tie(b.user_id, b.platform, b.text, b.created_at);
  });
  auto last = std::unique(posts.begin(), posts.end(), [](const PostRecord& a, const PostRecord& b) {
    return a.user_id == b.user_id && a.platform == b.platform && a.text == b.text;
  });
  posts.erase(last, posts.end());
  return posts;
}

// ---------------------------------------------------------------------------
// Survey

inline constexpr int kPssItems = 10;

struct SurveyResponse {
  std::string user_id;
  std::array<int, kPssItems> items{};
  double age = 0.0;
  std::string gender;
  std::string race;
  std::string education;
  std::string income;
};

/// Which items are reverse coded (1-based positions). Defaults to the
/// standard 10-item ordering: items 4, 5, 7 and 8.
struct PssScale {
  std::array<bool, kPssItems> reverse{};

  PssScale() : PssScale(std::vector<int>{4, 5, 7, 8}) {}
  explicit PssScale(const std::vector<int>& reverse_items) {
    for (int item : reverse_items) {
      if (item < 1 || item > kPssItems) fail_validation("reverse item index out of range: " + std::to_string(item));
      reverse[static_cast<std::size_t>(item - 1)] = true;
    }
  }
};

inline int score_pss(const SurveyResponse& r, const PssScale& scale = {}) {
  int total = 0;
  for (std::size_t i = 0; i < r.items.size(); ++i) {
    int v = r.items[i];
    if (v < 0 || v > 4)
      fail_validation("user " + r.user_id + ": PSS item " + std::to_string(i + 1) + " response " +
                      std::to_string(v) + " outside [0,4]");
    total += scale.reverse[i] ? 4 - v : v;
  }
  return total;
}

inline std::vector<SurveyResponse> load_surveys(const csv::Table& t, const std::string& source) {
  std::array<std::size_t, kPssItems> item_col{};
  for (int i = 0; i < kPssItems; ++i)
    item_col[static_cast<std::size_t>(i)] = t.require_column("pss_" + std::to_string(i + 1), source);
  auto uid = t.require_column("user_id", source);
  auto age = t.require_column("age", source);
  auto gender = t.require_column("gender", source);
  auto race = t.require_column("race", source);
  auto edu = t.require_column("education", source);
  auto income = t.require_column("income", source);
  std::vector<SurveyResponse> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::string ctx = source + " line " + std::to_string(t.line_numbers[r]);
    if (row.size() != t.header.size()) fail_validation(ctx + ": expected " + std::to_string(t.header.size()) + " fields");
    SurveyResponse s;
    s.user_id = row[uid];
    for (int i = 0; i < kPssItems; ++i) {
      long long v = parse_int(row[item_col[static_cast<std::size_t>(i)]], ctx + " pss_" + std::to_string(i + 1));
      if (v < 0 || v > 4)
        fail_validation(ctx + ": pss_" + std::to_string(i + 1) + " response " + std::to_string(v) + " outside [0,4]");
      s.items[static_cast<std::size_t>(i)] = static_cast<int>(v);
    }
    s.age = parse_double(row[age], ctx + " age");
    s.gender = row[gender];
    s.race = row[race];
    s.education = row[edu];
    s.income = row[income];
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<SurveyResponse> load_surveys(const std::string& path) {
  return load_surveys(csv::read_file(path), path);
}

inline void write_surveys(std::ostream& out, const std::vector<SurveyResponse>& surveys) {
  std::vector<std::string> header{"user_id"};
  for (int i = 1; i <= kPssItems; ++i) header.push_back("pss_" + std::to_string(i));
  for (const char* c : {"age", "gender", "race", "education", "income"}) header.emplace_back(c);
  csv::write_row(out, header);
  for (const auto& s : surveys) {
    std::vector<std::string> row{s.user_id};
    for (int v : s.items) row.push_back(std::to_string(v));
    row.push_back(format_double(s.age));
    row.push_back(s.gender);
    row.push_back(s.race);
    row.push_back(s.education);
    row.push_back(s.income);
    csv::write_row(out, row);
  }
}

// ---------------------------------------------------------------------------
// Cohort

struct UserProfile {
  std::string user_id;
  PerPlatform<std::vector<PostRecord>> posts;  // each sorted by (created_at, text)
  SurveyResponse survey;
  int pss_score = 0;
  PerPlatform<std::int64_t> word_count{};
};

struct CohortOptions {
  std::int64_t min_words_per_platform = 900;
  std::vector<Platform> required_platforms{Platform::facebook, Platform::twitter};
  std::optional<std::pair<Timestamp, Timestamp>> window;  // inclusive
  bool drop_duplicates = false;
  PssScale scale;
};

inline std::int64_t count_tokens(const text::Tokenizer& tok, std::string_view s) {
  return static_cast<std::int64_t>(tok.tokenize(s).size());
}

/// Users with a survey and strictly more than min_words tokens on every
/// required platform. Output is sorted by user_id and independent of input order.
inline std::vector<UserProfile> build_cohort(const std::vector<PostRecord>& posts,
                                             const std::vector<SurveyResponse>& surveys,
                                             const CohortOptions& opts = {},
                                             const text::Tokenizer& tok = text::default_tokenizer()) {
  std::map<std::string, UserProfile> users;
  for (const auto& s : surveys) {
    auto [it, inserted] = users.try_emplace(s.user_id);
    if (!inserted) fail_validation("duplicate survey for user " + s.user_id);
    it->second.user_id = s.user_id;
    it->second.survey = s;
    it->second.pss_score = score_pss(s, opts.scale);
  }
  std::vector<PostRecord> kept;
  kept.reserve(posts.size());
  for (const auto& p : posts) {
    if (!users.count(p.user_id)) continue;
    if (opts.window && (p.created_at < opts.window->first || p.created_at > opts.window->second)) continue;
    kept.push_back(p);
  }
  if (opts.drop_duplicates) kept = drop_exact_duplicates(std::move(kept));
  for (auto& p : kept) {
    auto& u = users[p.user_id];
    u.word_count[index(p.platform)] += count_tokens(tok, p.text);
    u.posts[index(p.platform)].push_back(std::move(p));
  }
  std::vector<UserProfile> out;
  for (auto& [id, u] : users) {
    bool ok = true;
    for (Platform pl : opts.required_platforms) ok = ok && u.word_count[index(pl)] > opts.min_words_per_platform;
    if (!ok) continue;
    for (auto& v : u.posts)
      std::sort(v.begin(), v.end(), [](const PostRecord& a, const PostRecord& b) {
        return std::tie(a.created_at, a.text) < std::tie(b.created_at, b.text);
      });
    out.push_back(std::move(u));
  }
  return out;
}

struct PlatformUsage {
  std::size_t users = 0;
  double mean_posts_per_user = 0.0;
  double mean_words_per_post = 0.0;
  double median_words_per_post = 0.0;
};

struct UsageStats {
  PerPlatform<PlatformUsage> platform;

  std::string report() const {
    const auto& fb = platform[index(Platform::facebook)];
    const auto& tw = platform[index(Platform::twitter)];
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(0);
    os << "Users had an average of " << fb.mean_posts_per_user << " Facebook and " << tw.mean_posts_per_user
       << " Twitter posts. ";
    os.precision(1);
    os << "The mean number of words per post was " << fb.mean_words_per_post << " on Facebook and "
       << tw.mean_words_per_post << " on Twitter, ";
    os << "with medians of " << fb.median_words_per_post << " and " << tw.median_words_per_post << ".";
    return os.str();
  }
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline UsageStats usage_stats(const std::vector<UserProfile>& cohort,
                              const text::Tokenizer& tok = text::default_tokenizer()) {
  if (cohort.empty()) fail_validation("usage_stats: empty cohort");
  UsageStats st;
  for (Platform pl : kPlatforms) {
    std::vector<double> lengths;
    std::size_t users_with_posts = 0;
    for (const auto& u : cohort) {
      const auto& ps = u.posts[index(pl)];
      if (!ps.empty()) ++users_with_posts;
      for (const auto& p : ps) lengths.push_back(static_cast<double>(count_tokens(tok, p.text)));
    }
    auto& out = st.platform[index(pl)];
    out.users = users_with_posts;
    out.mean_posts_per_user = static_cast<double>(lengths.size()) / static_cast<double>(cohort.size());
    if (!lengths.empty()) {
      double sum = 0.0;
      for (double l : lengths) sum += l;
      out.mean_words_per_post = sum / static_cast<double>(lengths.size());
      out.median_words_per_post = median_of(lengths);
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// County tables

struct CountyLanguage {
  std::string fips;
  std::map<std::string, double> word_freq;  // sums to 1
  std::int64_t total_words = 0;
  std::int64_t contributor_count = 0;
};

/// Named numeric columns keyed by fips; missing cells are nullopt.
struct CountyOutcomes {
  std::vector<std::string> columns;
  std::map<std::string, std::vector<std::optional<double>>> rows;

  std::ptrdiff_t column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  }

  std::optional<double> get(const std::string& fips, std::size_t col) const {
    auto it = rows.find(fips);
    if (it == rows.end()) return std::nullopt;
    return it->second[col];
  }
};

inline bool is_missing_marker(std::string_view s) {
  s = trim(s);
  return s.empty() || s == "NA" || s == "na" || s == "N/A" || s == "NaN" || s == "nan" || s == "null" || s == ".";
}

inline CountyOutcomes load_county_outcomes(const csv::Table& t, const std::string& source) {
  if (t.header.empty() || t.header[0] != "fips") fail_validation(source + ": first column must be 'fips'");
  CountyOutcomes out;
  out.columns.assign(t.header.begin() + 1, t.header.end());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::string ctx = source + " line " + std::to_string(t.line_numbers[r]);
    if (row.size() != t.header.size()) fail_validation(ctx + ": expected " + std::to_string(t.header.size()) + " fields");
    if (!valid_fips(row[0])) fail_validation(ctx + ": malformed fips '" + row[0] + "'");
    std::vector<std::optional<double>> values;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (is_missing_marker(row[c])) {
        values.push_back(std::nullopt);
      } else {
        double v = parse_double(row[c], ctx + " " + t.header[c]);
        if (!std::isfinite(v)) values.push_back(std::nullopt);
        else values.push_back(v);
      }
    }
    if (!out.rows.emplace(row[0], std::move(values)).second) fail_validation(ctx + ": duplicate fips " + row[0]);
  }
  return out;
}

inline CountyOutcomes load_county_outcomes(const std::string& path) {
  return load_county_outcomes(csv::read_file(path), path);
}

}  // namespace stressmeter
