#pragma once

#include "common.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace stressmeter::text {

enum class TokenKind { word, emoticon, hashtag, mention, url, punct };

struct Token {
  std::string surface;
  TokenKind kind = TokenKind::word;

  bool operator==(const Token&) const = default;
};

inline const std::vector<std::string>& default_emoticons() {
  static const std::vector<std::string> list = {
      ":)",  ":-)", ":(",  ":-(", ":D",  ":-D", ":P",  ":-P", ":p",  ":-p", ";)",  ";-)",
      ";(",  ":/",  ":-/", ":\\", ":'(", ":'-(", ":')", ":O",  ":o",  ":-O", ":-o", ":|",
      ":-|", ":*",  ":-*", ":]",  ":[",  ":3",  ":S",  ":s",  ":$",  ":@",  "=)",  "=(",
      "=D",  "=P",  "=/",  "=]",  "=[",  ">:(", ">:)", ">:-(", "D:",  "XD",  "xD",  "X-D",
      "-_-", "-.-", "^_^", "^^",  "^.^", ">.<", ">_<", "T_T", "T.T", ";_;", "o_O", "O_o",
      "o.O", "O.o", "<3",  "</3", "<33", "(:",  "):",  "(;",  "8)",  "B)",  "8-)", "B-)",
      ":-))", ":((", ":))", "=))", "xP",  "XP",  "u_u", "._.", "-__-", "\\o/",
  };
  return list;
}

/// Emoticon inventory with longest-match lookup.
class EmoticonSet {
 public:
  EmoticonSet() : EmoticonSet(default_emoticons()) {}

  explicit EmoticonSet(const std::vector<std::string>& items) {
    for (const auto& raw : items) add(raw);
  }

  void add(std::string_view raw) {
    auto e = trim(raw);
    if (e.empty()) return;
    set_.emplace(e);
    max_len_ = std::max(max_len_, e.size());
  }

  static EmoticonSet load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_input("cannot open emoticon list " + path);
    EmoticonSet s(std::vector<std::string>{});
    std::string line;
    while (std::getline(in, line)) s.add(line);
    return s;
  }

  // Length of the longest emoticon starting at pos, 0 if none. An emoticon
  // whose edge character is alphanumeric must not touch another word character.
  std::size_t match(std::string_view text, std::size_t pos) const;

  std::size_t size() const { return set_.size(); }
  bool contains(std::string_view e) const { return set_.count(std::string(e)) > 0; }

 private:
  std::unordered_set<std::string> set_;
  std::size_t max_len_ = 0;
};

namespace detail {

inline bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
inline bool is_alnum(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'); }
inline bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
// Non-ASCII bytes are treated as word material (UTF-8 letters).
inline bool is_word_byte(unsigned char c) { return is_alnum(c) || c == '_' || c >= 0x80; }

// U+2019 right single quotation mark, common in mobile-typed contractions
inline bool is_curly_apostrophe(std::string_view s, std::size_t i) {
  return i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
         static_cast<unsigned char>(s[i + 1]) == 0x80 && static_cast<unsigned char>(s[i + 2]) == 0x99;
}

inline bool starts_with_ci(std::string_view s, std::size_t pos, std::string_view prefix) {
  if (s.size() - pos < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    char c = s[pos + i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c != prefix[i]) return false;
  }
  return true;
}

inline bool is_url_start(std::string_view s, std::size_t pos) {
  return starts_with_ci(s, pos, "http://") || starts_with_ci(s, pos, "https://") ||
         starts_with_ci(s, pos, "www.");
}

// URL runs to whitespace; trailing sentence punctuation is left outside.
inline std::size_t url_length(std::string_view s, std::size_t pos) {
  std::size_t end = pos;
  while (end < s.size() && !is_space(static_cast<unsigned char>(s[end]))) ++end;
  while (end > pos + 4 && std::string_view(".,!?;:)'\"").find(s[end - 1]) != std::string_view::npos) --end;
  return end - pos;
}

inline std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

}  // namespace detail

inline std::size_t EmoticonSet::match(std::string_view text, std::size_t pos) const {
  const std::size_t avail = text.size() - pos;
  for (std::size_t len = std::min(max_len_, avail); len >= 1; --len) {
    std::string candidate(text.substr(pos, len));
    if (!set_.count(candidate)) continue;
    auto first = static_cast<unsigned char>(candidate.front());
    auto last = static_cast<unsigned char>(candidate.back());
    if (detail::is_alnum(first) && pos > 0 && detail::is_word_byte(static_cast<unsigned char>(text[pos - 1])))
      continue;
    if (detail::is_alnum(last) && pos + len < text.size() &&
        detail::is_word_byte(static_cast<unsigned char>(text[pos + len])))
      continue;
    return len;
  }
  return 0;
}

/// Social-media-aware tokenizer. Rule order at each token start:
/// URL, mention, emoticon, hashtag, then word or punctuation.
class Tokenizer {
 public:
  Tokenizer() = default;
  explicit Tokenizer(EmoticonSet emoticons) : emoticons_(std::move(emoticons)) {}

  const EmoticonSet& emoticons() const { return emoticons_; }

  std::vector<Token> tokenize(std::string_view text) const {
    std::vector<Token> out;
    tokenize_into(text, out);
    return out;
  }

  void tokenize_into(std::string_view s, std::vector<Token>& out) const {
    using namespace detail;
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
      auto c = static_cast<unsigned char>(s[i]);
      if (is_space(c)) {
        ++i;
        continue;
      }
      if (is_url_start(s, i)) {
        i += url_length(s, i);
        out.push_back({"<URL>", TokenKind::url});
        continue;
      }
      if (c == '@' && i + 1 < n && (is_alnum(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '_')) {
        ++i;
        while (i < n && (is_alnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
        out.push_back({"<USER>", TokenKind::mention});
        continue;
      }
      if (std::size_t len = emoticons_.match(s, i)) {
        out.push_back({std::string(s.substr(i, len)), TokenKind::emoticon});
        i += len;
        continue;
      }
      if (c == '#' && i + 1 < n && is_word_byte(static_cast<unsigned char>(s[i + 1]))) {
        std::size_t j = i + 1;
        while (j < n && is_word_byte(static_cast<unsigned char>(s[j]))) ++j;
        out.push_back({lower_ascii(s.substr(i, j - i)), TokenKind::hashtag});
        i = j;
        continue;
      }
      if (is_curly_apostrophe(s, i)) {
        out.push_back({"'", TokenKind::punct});
        i += 3;
        continue;
      }
      if (is_word_byte(c)) {
        out.push_back({read_word(s, i), TokenKind::word});
        continue;
      }
      // punctuation: a run of one repeated character is one token ("...", "!!!")
      std::size_t j = i + 1;
      if (c < 0x80)
        while (j < n && s[j] == s[i]) ++j;
      out.push_back({std::string(s.substr(i, j - i)), TokenKind::punct});
      i = j;
    }
  }

  /// Splits on '.', '!', '?' and line breaks. Terminators inside emoticons,
  /// URLs or decimal numbers do not split.
  std::vector<std::string> split_sentences(std::string_view s) const {
    using namespace detail;
    std::vector<std::string> out;
    std::size_t start = 0;
    std::size_t i = 0;
    const std::size_t n = s.size();
    auto close = [&](std::size_t end) {
      auto piece = trim(s.substr(start, end - start));
      if (!piece.empty()) out.emplace_back(piece);
    };
    while (i < n) {
      char c = s[i];
      bool token_start = i == 0 || is_space(static_cast<unsigned char>(s[i - 1]));
      if (token_start && is_url_start(s, i)) {
        i += url_length(s, i);
        continue;
      }
      if (std::size_t len = emoticons_.match(s, i)) {
        i += len;
        continue;
      }
      if (c == '\n' || c == '\r') {
        close(i);
        while (i < n && (s[i] == '\n' || s[i] == '\r')) ++i;
        start = i;
        continue;
      }
      if (c == '.' || c == '!' || c == '?') {
        if (c == '.' && i > 0 && i + 1 < n && is_digit(static_cast<unsigned char>(s[i - 1])) &&
            is_digit(static_cast<unsigned char>(s[i + 1]))) {
          ++i;
          continue;
        }
        close(i);
        while (i < n && (s[i] == '.' || s[i] == '!' || s[i] == '?')) ++i;
        start = i;
        continue;
      }
      ++i;
    }
    close(n);
    return out;
  }

 private:
  // Words keep internal apostrophes and hyphens ("i'm", "don't", "well-being").
  static std::string read_word(std::string_view s, std::size_t& i) {
    using namespace detail;
    std::string word;
    const std::size_t n = s.size();
    while (i < n) {
      auto c = static_cast<unsigned char>(s[i]);
      if (is_curly_apostrophe(s, i)) {
        if (i + 3 < n && is_alnum(static_cast<unsigned char>(s[i + 3])) && !word.empty()) {
          word.push_back('\'');
          i += 3;
          continue;
        }
        break;
      }
      if (is_word_byte(c)) {
        word.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
        ++i;
        continue;
      }
      if ((c == '\'' || c == '-') && i + 1 < n && is_alnum(static_cast<unsigned char>(s[i + 1]))) {
        word.push_back(static_cast<char>(c));
        ++i;
        continue;
      }
      break;
    }
    return word;
  }

  EmoticonSet emoticons_;
};

inline const Tokenizer& default_tokenizer() {
  static const Tokenizer t;
  return t;
}

inline std::vector<Token> tokenize(std::string_view s) { return default_tokenizer().tokenize(s); }

inline std::vector<std::string> split_sentences(std::string_view s) { return default_tokenizer().split_sentences(s); }

using NgramCounts = std::unordered_map<std::string, std::int64_t>;

/// Adds the 1..n_max-grams of one post to counts. Call once per post so that
/// no n-gram spans a post boundary.
inline void accumulate_ngrams(std::span<const Token> tokens, int n_max, NgramCounts& counts) {
  if (n_max < 1) fail_validation("n_max must be >= 1");
  std::string gram;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    gram.clear();
    for (int n = 1; n <= n_max && i + static_cast<std::size_t>(n) <= tokens.size(); ++n) {
      if (n > 1) gram.push_back(' ');
      gram += tokens[i + static_cast<std::size_t>(n) - 1].surface;
      ++counts[gram];
    }
  }
}

inline NgramCounts extract_ngrams(std::span<const Token> tokens, int n_max = 3) {
  NgramCounts counts;
  accumulate_ngrams(tokens, n_max, counts);
  return counts;
}

inline int ngram_order(std::string_view gram) {
  return 1 + static_cast<int>(std::count(gram.begin(), gram.end(), ' '));
}

}  // namespace stressmeter::text
