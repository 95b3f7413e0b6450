#pragma once

// Run configuration (TOML) and run manifests.
//
// Every knob has a default, may be set in the TOML file and may be overridden
// by a command-line flag; flags win. Unknown keys are rejected so a typo never
// silently falls back to a default.

#include "common.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

namespace stressmeter::config {

struct Paths {
  std::string posts, surveys, lexicon, topics, valence, emoticons, county_posts, outcomes;
};

struct FeatureSettings {
  std::vector<std::string> families{"lexicon"};
  int ngram_n_max = 3;
  double ngram_min_row_fraction = 0.05;
  std::int64_t ngram_max_vocab = 0;  // 0 = no cap
  std::string transform = "none";
  std::string sentence_rule = "max";
  int utc_offset_minutes = 0;
};

struct CohortSettings {
  std::int64_t min_words = 900;
  std::vector<std::string> platforms{"facebook", "twitter"};
  std::string window_start, window_end;  // ISO 8601, inclusive; empty = open
  bool drop_duplicates = false;
  std::vector<int> reverse_items{4, 5, 7, 8};
};

struct CvSettings {
  int folds = 5;
  int inner_folds = 3;
  std::vector<double> lambdas;  // empty = default grid
  std::vector<double> l1_ratios;
  double tol = 1e-7;
  int max_iter = 10000;
  std::string sample_weights;  // empty = uniform; else CSV user_id,weight
};

struct AdaptSettings {
  std::string method = "none";
  std::string kernel = "linear";
  double bandwidth = 0.0;  // rbf only; 0 = median heuristic
  int m = 30;
  double mu = 1.0;
  bool transductive = true;
};

struct DlaSettings {
  double alpha = 0.01;
  std::string method = "pearson";
  std::vector<std::string> controls{"age", "gender"};
};

struct CountySettings {
  std::int64_t min_words = 100000;
  std::string platform = "twitter";
  std::vector<std::string> outcomes;
  std::vector<std::string> controls{"log(median_income)", "pct_college", "median_age", "pct_female"};
  double min_n = 10;
};

struct ContrastSettings {
  std::string method = "spearman";
  double alpha = 0.01;
  double min_abs_r = 0.05;
};

// Population size and platform shift of the `synth` fixture.
struct SynthSettings {
  int users = 5000;
  int labeled = 400;
  int counties = 60;
  double slang_shift = 3.0;
};

struct RunConfig {
  std::uint64_t seed = 42;
  Paths paths;
  FeatureSettings features;
  CohortSettings cohort;
  CvSettings cv;
  AdaptSettings adapt;
  DlaSettings dla;
  CountySettings county;
  ContrastSettings contrast;
  SynthSettings synth;

  nlohmann::ordered_json to_json() const;
  std::string fingerprint() const { return stressmeter::fingerprint(to_json().dump()); }
};

namespace detail {

class Reader {
 public:
  Reader(const toml::table& t, std::string source) : root_(t), source_(std::move(source)) {}

  const toml::table* section(const std::string& name) {
    used_[""].insert(name);
    auto node = root_.get(name);
    if (!node) return nullptr;
    if (!node->is_table()) fail_validation(source_ + ": '" + name + "' must be a table");
    return node->as_table();
  }

  template <class T>
  void get(const toml::table* t, const std::string& sect, const std::string& key, T& out) {
    used_[sect].insert(key);
    if (!t) return;
    auto node = t->get(key);
    if (!node) return;
    read(*node, sect.empty() ? key : sect + "." + key, out);
  }

  /// Any key not consumed by get() is an error.
  void reject_unknown() {
    auto check = [&](const toml::table& t, const std::string& sect) {
      for (const auto& [k, _] : t) {
        std::string key(k.str());
        if (!used_[sect].count(key))
          fail_validation(source_ + ": unknown config key '" + (sect.empty() ? key : sect + "." + key) + "'");
      }
    };
    check(root_, "");
    for (const auto& [k, node] : root_)
      if (node.is_table()) check(*node.as_table(), std::string(k.str()));
  }

 private:
  [[noreturn]] void type_error(const std::string& key, const char* want) {
    fail_validation(source_ + ": config key '" + key + "' must be " + want);
  }

  void read(const toml::node& n, const std::string& key, std::string& out) {
    if (auto v = n.value<std::string>(); v && n.is_string()) out = *v;
    else type_error(key, "a string");
  }
  void read(const toml::node& n, const std::string& key, bool& out) {
    if (!n.is_boolean()) type_error(key, "a boolean");
    out = *n.value<bool>();
  }
  void read(const toml::node& n, const std::string& key, double& out) {
    if (!n.is_number()) type_error(key, "a number");
    out = *n.value<double>();
  }
  void read(const toml::node& n, const std::string& key, int& out) {
    if (!n.is_integer()) type_error(key, "an integer");
    out = static_cast<int>(*n.value<std::int64_t>());
  }
  void read(const toml::node& n, const std::string& key, std::int64_t& out) {
    if (!n.is_integer()) type_error(key, "an integer");
    out = *n.value<std::int64_t>();
  }
  void read(const toml::node& n, const std::string& key, std::uint64_t& out) {
    if (!n.is_integer() || *n.value<std::int64_t>() < 0) type_error(key, "a non-negative integer");
    out = static_cast<std::uint64_t>(*n.value<std::int64_t>());
  }
  template <class T>
  void read(const toml::node& n, const std::string& key, std::vector<T>& out) {
    if (!n.is_array()) type_error(key, "an array");
    out.clear();
    for (const auto& el : *n.as_array()) {
      T v{};
      read(el, key, v);
      out.push_back(v);
    }
  }

  const toml::table& root_;
  std::string source_;
  std::map<std::string, std::set<std::string>> used_;
};

}  // namespace detail

inline RunConfig parse_toml(std::string_view text, const std::string& source) {
  toml::table t;
  try {
    t = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    fail_validation(source + ": " + std::string(e.description()) + " at line " +
                    std::to_string(e.source().begin.line));
  }
  RunConfig c;
  detail::Reader r(t, source);
  r.get(&t, "", "seed", c.seed);
  auto p = r.section("paths");
  r.get(p, "paths", "posts", c.paths.posts);
  r.get(p, "paths", "surveys", c.paths.surveys);
  r.get(p, "paths", "lexicon", c.paths.lexicon);
  r.get(p, "paths", "topics", c.paths.topics);
  r.get(p, "paths", "valence", c.paths.valence);
  r.get(p, "paths", "emoticons", c.paths.emoticons);
  r.get(p, "paths", "county_posts", c.paths.county_posts);
  r.get(p, "paths", "outcomes", c.paths.outcomes);
  auto f = r.section("features");
  r.get(f, "features", "families", c.features.families);
  r.get(f, "features", "ngram_n_max", c.features.ngram_n_max);
  r.get(f, "features", "ngram_min_row_fraction", c.features.ngram_min_row_fraction);
  r.get(f, "features", "ngram_max_vocab", c.features.ngram_max_vocab);
  r.get(f, "features", "transform", c.features.transform);
  r.get(f, "features", "sentence_rule", c.features.sentence_rule);
  r.get(f, "features", "utc_offset_minutes", c.features.utc_offset_minutes);
  auto co = r.section("cohort");
  r.get(co, "cohort", "min_words", c.cohort.min_words);
  r.get(co, "cohort", "platforms", c.cohort.platforms);
  r.get(co, "cohort", "window_start", c.cohort.window_start);
  r.get(co, "cohort", "window_end", c.cohort.window_end);
  r.get(co, "cohort", "drop_duplicates", c.cohort.drop_duplicates);
  r.get(co, "cohort", "reverse_items", c.cohort.reverse_items);
  auto cv = r.section("cv");
  r.get(cv, "cv", "folds", c.cv.folds);
  r.get(cv, "cv", "inner_folds", c.cv.inner_folds);
  r.get(cv, "cv", "lambdas", c.cv.lambdas);
  r.get(cv, "cv", "l1_ratios", c.cv.l1_ratios);
  r.get(cv, "cv", "tol", c.cv.tol);
  r.get(cv, "cv", "max_iter", c.cv.max_iter);
  r.get(cv, "cv", "sample_weights", c.cv.sample_weights);
  auto a = r.section("adapt");
  r.get(a, "adapt", "method", c.adapt.method);
  r.get(a, "adapt", "kernel", c.adapt.kernel);
  r.get(a, "adapt", "bandwidth", c.adapt.bandwidth);
  r.get(a, "adapt", "m", c.adapt.m);
  r.get(a, "adapt", "mu", c.adapt.mu);
  r.get(a, "adapt", "transductive", c.adapt.transductive);
  auto d = r.section("dla");
  r.get(d, "dla", "alpha", c.dla.alpha);
  r.get(d, "dla", "method", c.dla.method);
  r.get(d, "dla", "controls", c.dla.controls);
  auto cs = r.section("county");
  r.get(cs, "county", "min_words", c.county.min_words);
  r.get(cs, "county", "platform", c.county.platform);
  r.get(cs, "county", "outcomes", c.county.outcomes);
  r.get(cs, "county", "controls", c.county.controls);
  r.get(cs, "county", "min_n", c.county.min_n);
  auto ct = r.section("contrast");
  r.get(ct, "contrast", "method", c.contrast.method);
  r.get(ct, "contrast", "alpha", c.contrast.alpha);
  r.get(ct, "contrast", "min_abs_r", c.contrast.min_abs_r);
  auto sy = r.section("synth");
  r.get(sy, "synth", "users", c.synth.users);
  r.get(sy, "synth", "labeled", c.synth.labeled);
  r.get(sy, "synth", "counties", c.synth.counties);
  r.get(sy, "synth", "slang_shift", c.synth.slang_shift);
  r.reject_unknown();
  return c;
}

inline RunConfig load_toml(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_input("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_toml(text, path);
}

inline nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["paths"] = {{"posts", paths.posts},         {"surveys", paths.surveys},   {"lexicon", paths.lexicon},
                {"topics", paths.topics},       {"valence", paths.valence},   {"emoticons", paths.emoticons},
                {"county_posts", paths.county_posts}, {"outcomes", paths.outcomes}};
  j["features"] = {{"families", features.families},
                   {"ngram_n_max", features.ngram_n_max},
                   {"ngram_min_row_fraction", features.ngram_min_row_fraction},
                   {"ngram_max_vocab", features.ngram_max_vocab},
                   {"transform", features.transform},
                   {"sentence_rule", features.sentence_rule},
                   {"utc_offset_minutes", features.utc_offset_minutes}};
  j["cohort"] = {{"min_words", cohort.min_words},         {"platforms", cohort.platforms},
                 {"window_start", cohort.window_start},   {"window_end", cohort.window_end},
                 {"drop_duplicates", cohort.drop_duplicates}, {"reverse_items", cohort.reverse_items}};
  j["cv"] = {{"folds", cv.folds}, {"inner_folds", cv.inner_folds}, {"lambdas", cv.lambdas}, {"l1_ratios", cv.l1_ratios},
             {"tol", cv.tol},     {"max_iter", cv.max_iter},       {"sample_weights", cv.sample_weights}};
  j["adapt"] = {{"method", adapt.method}, {"kernel", adapt.kernel}, {"bandwidth", adapt.bandwidth},
                {"m", adapt.m},           {"mu", adapt.mu},         {"transductive", adapt.transductive}};
  j["dla"] = {{"alpha", dla.alpha}, {"method", dla.method}, {"controls", dla.controls}};
  j["county"] = {{"min_words", county.min_words}, {"platform", county.platform}, {"outcomes", county.outcomes},
                 {"controls", county.controls},   {"min_n", county.min_n}};
  j["contrast"] = {{"method", contrast.method}, {"alpha", contrast.alpha}, {"min_abs_r", contrast.min_abs_r}};
  j["synth"] = {{"users", synth.users}, {"labeled", synth.labeled}, {"counties", synth.counties},
                {"slang_shift", synth.slang_shift}};
  return j;
}

// ---------------------------------------------------------------------------
// Manifests

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_input("cannot open " + path);
  Fnv1a h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

/// Sidecar written next to every primary artifact. Holds no timestamps, so
/// identical runs produce identical manifests.
struct Manifest {
  std::string command;
  std::vector<std::string> args;  // argv after the program name, verbatim
  RunConfig config;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
  std::vector<std::pair<std::string, std::string>> outputs;

  void add_input(const std::string& path) {
    if (path.empty()) return;
    for (const auto& [p, _] : inputs)
      if (p == path) return;
    inputs.emplace_back(path, file_digest(path));
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tool"] = "stressmeter";
    j["version"] = STRESSMETER_VERSION;
    j["command"] = command;
    j["args"] = args;
    j["seed"] = config.seed;
    j["config_fingerprint"] = config.fingerprint();
    j["config"] = config.to_json();
    nlohmann::ordered_json in = nlohmann::ordered_json::object(), out = nlohmann::ordered_json::object();
    for (const auto& [p, d] : inputs) in[p] = d;
    for (const auto& [p, d] : outputs) out[p] = d;
    j["inputs"] = in;
    j["outputs"] = out;
    return j;
  }
};

inline std::string manifest_path(const std::string& artifact) { return artifact + ".manifest.json"; }

/// Digests the outputs, then writes one sidecar per output.
inline void write_manifests(Manifest m, const std::vector<std::string>& artifacts) {
  for (const auto& a : artifacts) m.outputs.emplace_back(a, file_digest(a));
  const std::string text = m.to_json().dump(2) + "\n";
  for (const auto& a : artifacts) {
    std::ofstream out(manifest_path(a), std::ios::binary);
    if (!out) fail_input("cannot write " + manifest_path(a));
    out << text;
  }
}

/// TOML text for a resolved config as stored in a manifest. Going through the
/// TOML reader keeps one validation path for both sources.
inline std::string json_to_toml(const nlohmann::json& j) {
  auto scalar = [](const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.dump();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_float()) {
      std::string s = format_double(v.get<double>());
      if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
      return s;
    }
    if (v.is_number()) return v.dump();
    fail_validation("manifest config: unsupported value " + v.dump());
  };
  auto value = [&](const nlohmann::json& v) {
    if (!v.is_array()) return scalar(v);
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + scalar(v[i]);
    return s + "]";
  };
  std::string top, tables;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_object()) {
      top += k + " = " + value(v) + "\n";
      continue;
    }
    tables += "\n[" + k + "]\n";
    for (const auto& [k2, v2] : v.items()) tables += k2 + " = " + value(v2) + "\n";
  }
  return top + tables;
}

inline nlohmann::json read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_input("cannot open manifest " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail_validation("malformed manifest " + path + ": " + e.what());
  }
}

inline RunConfig manifest_config(const std::string& path) {
  auto j = read_manifest(path);
  if (!j.contains("config") || !j["config"].is_object()) fail_validation("manifest " + path + " has no config");
  return parse_toml(json_to_toml(j["config"]), path + " (config)");
}

inline std::vector<std::string> manifest_args(const std::string& path) {
  auto j = read_manifest(path);
  try {
    return j.at("args").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail_validation("malformed manifest " + path + ": " + e.what());
  }
}

}  // namespace stressmeter::config
