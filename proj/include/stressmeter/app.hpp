#pragma once

// Command implementations behind the stressmeter executable. They live in a
// header so tests can drive whole pipelines in-process through run().

#include "adapt.hpp"
#include "common.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "county.hpp"
#include "csv.hpp"
#include "features.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "protocol.hpp"
#include "stats.hpp"
#include "synth.hpp"
#include "text.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

namespace stressmeter::app {

// ---------------------------------------------------------------------------
// Model bundles: what `train` and `adapt` write and `county score` reads.

struct Bundle {
  pipeline::FeatureSpec features;
  model::LinearModel model;
  std::optional<adapt::TcaTransform> transform;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = "stressmeter_model";
    j["features"] = pipeline::to_json(features);
    j["model"] = model.to_json();
    j["transform"] = transform ? transform->to_json() : nlohmann::ordered_json();
    return j;
  }

  static Bundle from_json(const nlohmann::json& j) {
    try {
      if (j.at("kind").get<std::string>() != "stressmeter_model") fail_validation("not a stressmeter model bundle");
      Bundle b;
      b.features = pipeline::feature_spec_from_json(j.at("features"));
      b.model = model::LinearModel::from_json(j.at("model"));
      if (!j.at("transform").is_null()) b.transform = adapt::TcaTransform::from_json(j.at("transform"));
      if (b.model.adaptation == "tca" && !b.transform) fail_validation("bundle: TCA model without its transform");
      return b;
    } catch (const nlohmann::json::exception& e) {
      fail_validation(std::string("malformed model bundle: ") + e.what());
    }
  }
};

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_input("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail_validation(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const nlohmann::ordered_json& j) {
  auto out = csv::open_output(path);
  out << j.dump(2) << '\n';
  if (!out) fail_input("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Shared plumbing

struct Context {
  config::RunConfig cfg;
  config::Manifest manifest;
  std::ostream& out;
  std::ostream& err;
  text::Tokenizer tok;
  std::vector<std::string> outputs;

  /// Declared input: must be named and must exist. Recorded in the manifest.
  const std::string& input(const std::string& path, const std::string& what) {
    if (path.empty()) fail_input("no " + what + " path given");
    if (!std::filesystem::exists(path)) fail_input("missing input: " + path);
    manifest.add_input(path);
    return path;
  }

  const std::string& output(const std::string& path) {
    if (path.empty()) fail_validation("no output path given (--out)");
    outputs.push_back(path);
    return path;
  }

  void finish() { config::write_manifests(manifest, outputs); }
};

inline Platform platform_arg(const std::string& s) {
  auto p = parse_platform(s);
  if (!p) fail_validation("unknown platform '" + s + "' (facebook, twitter)");
  return *p;
}

inline pipeline::FeatureSpec feature_spec(Context& c, const std::vector<std::string>& families) {
  const auto& f = c.cfg.features;
  pipeline::FeatureSpec s;
  s.families.clear();
  for (const auto& name : families) {
    auto fam = pipeline::parse_family(name);
    if (!s.has(fam)) s.families.push_back(fam);
  }
  s.ngram.n_max = f.ngram_n_max;
  s.ngram.min_row_fraction = f.ngram_min_row_fraction;
  if (f.ngram_max_vocab > 0) s.ngram.max_vocab = static_cast<std::size_t>(f.ngram_max_vocab);
  s.ngram.transform = features::parse_transform(f.transform);
  s.lexicon_options.transform = s.ngram.transform;
  if (s.has(pipeline::Family::lexicon)) s.lexicon = features::load_lexicon(c.input(c.cfg.paths.lexicon, "lexicon"));
  if (s.has(pipeline::Family::topics)) s.topics = features::load_topics(c.input(c.cfg.paths.topics, "topics"));
  if (s.has(pipeline::Family::valence)) s.valence = features::load_valence(c.input(c.cfg.paths.valence, "valence"));
  s.sentence_rule = pipeline::parse_sentence_rule(f.sentence_rule);
  s.utc_offset_minutes = f.utc_offset_minutes;
  s.validate();
  return s;
}

inline void report_rejects(Context& c, const std::string& path, const LoadReport& r) {
  if (r.rejects.empty()) return;
  c.err << path << ": skipped " << r.rejects.size() << " malformed line(s); first at line " << r.rejects.front().line
        << ": " << r.rejects.front().reason << "\n";
}

inline std::vector<UserProfile> load_cohort(Context& c) {
  const auto& posts_path = c.input(c.cfg.paths.posts, "posts");
  const auto& survey_path = c.input(c.cfg.paths.surveys, "surveys");
  auto loaded = load_posts(posts_path);
  report_rejects(c, posts_path, loaded.report);
  auto surveys = load_surveys(survey_path);
  const auto& cs = c.cfg.cohort;
  CohortOptions o;
  o.min_words_per_platform = cs.min_words;
  o.required_platforms.clear();
  for (const auto& p : cs.platforms) o.required_platforms.push_back(platform_arg(p));
  if (!cs.window_start.empty() || !cs.window_end.empty()) {
    auto bound = [](const std::string& s, Timestamp dflt) {
      if (s.empty()) return dflt;
      auto t = parse_iso8601(s);
      if (!t) fail_validation("cannot parse cohort window bound '" + s + "'");
      return *t;
    };
    o.window = {bound(cs.window_start, Timestamp::min()), bound(cs.window_end, Timestamp::max())};
  }
  o.drop_duplicates = cs.drop_duplicates;
  o.scale = PssScale(cs.reverse_items);
  auto cohort = build_cohort(loaded.posts, surveys, o, c.tok);
  if (cohort.empty()) fail_validation("empty cohort: no surveyed user passes the word threshold on every required platform");
  return cohort;
}

inline Vector pss_labels(const std::vector<UserProfile>& cohort) {
  Vector y(static_cast<Eigen::Index>(cohort.size()));
  for (std::size_t i = 0; i < cohort.size(); ++i) y(static_cast<Eigen::Index>(i)) = cohort[i].pss_score;
  return y;
}

inline std::vector<int> cohort_folds(const Context& c, const std::vector<UserProfile>& cohort) {
  std::vector<model::StratRow> rows;
  std::vector<std::string> ids;
  for (const auto& u : cohort) {
    rows.push_back({u.user_id, u.survey.age, u.survey.gender});
    ids.push_back(u.user_id);
  }
  return model::stratified_folds(rows, c.cfg.cv.folds, c.cfg.seed).for_rows(ids);
}

inline std::optional<Vector> sample_weights(Context& c, const std::vector<UserProfile>& cohort) {
  if (c.cfg.cv.sample_weights.empty()) return std::nullopt;
  const auto& path = c.input(c.cfg.cv.sample_weights, "sample weights");
  auto t = csv::read_file(path);
  auto uid = t.require_column("user_id", path);
  auto wc = t.require_column("weight", path);
  std::map<std::string, double> w;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::string ctx = path + " line " + std::to_string(t.line_numbers[r]);
    double v = parse_double(t.rows[r][wc], ctx);
    if (!(v >= 0.0) || !std::isfinite(v)) fail_validation(ctx + ": weight must be finite and >= 0");
    w[t.rows[r][uid]] = v;
  }
  Vector out(static_cast<Eigen::Index>(cohort.size()));
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    auto it = w.find(cohort[i].user_id);
    if (it == w.end()) fail_validation(path + ": no weight for user " + cohort[i].user_id);
    out(static_cast<Eigen::Index>(i)) = it->second;
  }
  return out;
}

inline adapt::TcaOptions tca_options(const Context& c) {
  adapt::TcaOptions t;
  t.kernel.kind = adapt::parse_kernel(c.cfg.adapt.kernel);
  t.kernel.bandwidth = c.cfg.adapt.bandwidth;
  t.m = c.cfg.adapt.m;
  t.mu = c.cfg.adapt.mu;
  return t;
}

inline protocol::Options protocol_options(Context& c, const std::vector<UserProfile>& cohort) {
  protocol::Options o;
  if (!c.cfg.cv.lambdas.empty()) o.grid.lambdas = c.cfg.cv.lambdas;
  if (!c.cfg.cv.l1_ratios.empty()) o.grid.l1_ratios = c.cfg.cv.l1_ratios;
  o.cv.inner_k = c.cfg.cv.inner_folds;
  o.cv.fit.tol = c.cfg.cv.tol;
  o.cv.fit.max_iter = c.cfg.cv.max_iter;
  o.tca = tca_options(c);
  o.transductive_tca = c.cfg.adapt.transductive;
  o.sample_weights = sample_weights(c, cohort);
  return o;
}

/// Featurizes rows, freezing the n-gram vocabulary on them first.
inline features::FeatureMatrix featurize_fitted(const std::vector<features::PostRow>& rows, pipeline::FeatureSpec& spec,
                                               const text::Tokenizer& tok) {
  if (spec.has(pipeline::Family::ngrams) && !spec.ngram.vocabulary)
    spec.fit(features::language_of(rows, spec.ngram.n_max, tok));
  return pipeline::featurize(rows, spec, tok);
}

inline Vector stack(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

inline std::optional<Vector> stack(const std::optional<Vector>& a) {
  if (!a) return std::nullopt;
  return stack(*a, *a);
}

inline model::LinearModel fit_selected(Context& c, const Matrix& X, const std::vector<std::string>& names,
                                       const Vector& y, const protocol::Options& o,
                                       const std::optional<Vector>& w) {
  auto sel = model::select_hyperparameters(X, y, o.grid, o.cv, w);
  auto m = model::fit_elastic_net(X, names, y, sel.hyper, w, o.cv.fit);
  m.training_fingerprint = c.cfg.fingerprint();
  m.seed = c.cfg.seed;
  if (w) m.sample_weight_policy = "file:" + config::file_digest(c.cfg.cv.sample_weights);
  c.err << "selected lambda=" << format_double(sel.hyper.lambda) << " l1_ratio=" << format_double(sel.hyper.l1_ratio)
        << " (inner mse " << format_double(sel.inner_mse) << ")\n";
  return m;
}

// ---------------------------------------------------------------------------
// Commands

struct Local {
  std::string out;
  std::string platform = "facebook";
  std::string source = "facebook";
  std::string target = "twitter";
  std::string model;
  std::string scores;
  std::string out_dir = ".";
  std::string manifest;
  std::vector<std::string> methods;
};

inline void cmd_cohort(Context& c, const Local& l) {
  auto cohort = load_cohort(c);
  auto out = csv::open_output(c.output(l.out));
  csv::write_row(out, {"user_id", "pss", "age", "gender", "posts_facebook", "posts_twitter", "words_facebook",
                       "words_twitter"});
  for (const auto& u : cohort)
    csv::write_row(out, {u.user_id, std::to_string(u.pss_score), format_double(u.survey.age), u.survey.gender,
                         std::to_string(u.posts[index(Platform::facebook)].size()),
                         std::to_string(u.posts[index(Platform::twitter)].size()),
                         std::to_string(u.word_count[index(Platform::facebook)]),
                         std::to_string(u.word_count[index(Platform::twitter)])});
  out.close();
  c.out << cohort.size() << " users in cohort. " << usage_stats(cohort, c.tok).report() << "\n";
}

inline void cmd_featurize(Context& c, const Local& l) {
  auto cohort = load_cohort(c);
  auto spec = feature_spec(c, c.cfg.features.families);
  auto X = featurize_fitted(features::platform_rows(cohort, platform_arg(l.platform)), spec, c.tok);
  features::write_csv(c.output(l.out), X);
  c.out << X.rows() << " rows x " << X.cols() << " features\n";
}

inline stats::EncodedControls survey_controls(const std::vector<UserProfile>& cohort,
                                              const std::vector<std::string>& names) {
  std::vector<stats::ControlColumn> cols;
  for (const auto& name : names) {
    stats::ControlColumn col{name, {}};
    for (const auto& u : cohort) {
      const auto& s = u.survey;
      if (name == "age") col.values.push_back(format_double(s.age));
      else if (name == "gender") col.values.push_back(s.gender);
      else if (name == "race") col.values.push_back(s.race);
      else if (name == "education") col.values.push_back(s.education);
      else if (name == "income") col.values.push_back(s.income);
      else fail_validation("unknown control '" + name + "' (age, gender, race, education, income)");
    }
    cols.push_back(std::move(col));
  }
  return stats::encode_controls(cols, cohort.size());
}

inline void cmd_dla(Context& c, const Local& l) {
  auto cohort = load_cohort(c);
  const auto rows = features::platform_rows(cohort, platform_arg(l.platform));
  auto controls = survey_controls(cohort, c.cfg.dla.controls);
  Vector y = pss_labels(cohort);
  stats::DlaOptions o;
  o.alpha = c.cfg.dla.alpha;
  o.method = stats::parse_method(c.cfg.dla.method);
  o.control_names = controls.names;
  stats::DlaReport merged;
  // Each family is its own Bonferroni family.
  for (const auto& fam : c.cfg.features.families) {
    auto spec = feature_spec(c, {fam});
    auto X = featurize_fitted(rows, spec, c.tok);
    auto rep = stats::dla(X, y, controls.values, o);
    std::size_t sig = 0;
    for (const auto& r : rep.results) sig += r.significant;
    c.out << fam << ": " << sig << " of " << rep.family_size << " features significant at p < "
          << format_double(rep.threshold) << "\n";
    merged.results.insert(merged.results.end(), rep.results.begin(), rep.results.end());
  }
  auto out = csv::open_output(c.output(l.out));
  stats::write_dla_csv(out, merged);
}

inline void cmd_train(Context& c, const Local& l) {
  auto cohort = load_cohort(c);
  auto spec = feature_spec(c, c.cfg.features.families);
  auto X = featurize_fitted(features::platform_rows(cohort, platform_arg(l.platform)), spec, c.tok);
  Vector y = pss_labels(cohort);
  auto o = protocol_options(c, cohort);
  Bundle b{spec, fit_selected(c, X.values, X.names, y, o, o.sample_weights), std::nullopt};
  write_json(c.output(l.out), b.to_json());
  c.out << "trained on " << X.rows() << " users, " << X.cols() << " features\n";
}

inline void cmd_adapt(Context& c, const Local& l) {
  auto cohort = load_cohort(c);
  Platform src = platform_arg(l.source), tgt = platform_arg(l.target);
  if (src == tgt) fail_validation("adapt: source and target platforms are the same");
  auto method = protocol::parse_adaptation(c.cfg.adapt.method);
  auto td = pipeline::featurize_two_domains(cohort, src, tgt, feature_spec(c, c.cfg.features.families), c.tok);
  Vector y = pss_labels(cohort);
  auto o = protocol_options(c, cohort);
  Bundle b{td.spec, {}, std::nullopt};
  switch (method) {
    case protocol::Adaptation::none:
      b.model = fit_selected(c, td.source.values, td.source.names, y, o, o.sample_weights);
      break;
    case protocol::Adaptation::easyadapt: {
      const auto n = td.source.values.rows();
      Matrix X(2 * n, 3 * td.source.values.cols());
      X.topRows(n) = adapt::easyadapt_augment(td.source.values, adapt::Domain::source);
      X.bottomRows(n) = adapt::easyadapt_augment(td.target.values, adapt::Domain::target);
      b.model = fit_selected(c, X, adapt::augmented_names(td.source.names), stack(y, y), o, stack(o.sample_weights));
      b.model.adaptation = "easyadapt";
      break;
    }
    case protocol::Adaptation::tca: {
      auto to = o.tca;
      to.m = std::min<int>(to.m, static_cast<int>(2 * td.source.values.rows() - 1));
      auto t = adapt::tca_fit(td.source, td.target, to);
      Matrix emb = adapt::tca_training_embedding(t);
      b.model = fit_selected(c, emb.topRows(t.n_source), t.component_names(), y, o, o.sample_weights);
      b.model.adaptation = "tca";
      b.model.transform_fingerprint = t.fingerprint;
      b.transform = std::move(t);
      break;
    }
  }
  write_json(c.output(l.out), b.to_json());
  c.out << "adapted " << to_string(src) << " -> " << to_string(tgt) << " with " << protocol::to_string(method) << " on "
        << y.size() << " users\n";
}

inline void cmd_evaluate(Context& c, const Local& l) {
  auto cohort = load_cohort(c);
  Platform train = platform_arg(l.source), test = platform_arg(l.target);
  Vector y = pss_labels(cohort);
  auto folds = cohort_folds(c, cohort);
  const int k = c.cfg.cv.folds;
  auto o = protocol_options(c, cohort);

  std::vector<std::string> methods = l.methods;
  if (methods.empty()) methods = train == test ? std::vector<std::string>{"within"}
                                               : std::vector<std::string>{"within", "none", "pooled", "easyadapt", "tca"};
  for (const auto& m : methods)
    if (m != "within" && m != "none" && m != "pooled" && m != "easyadapt" && m != "tca")
      fail_validation("unknown evaluation method '" + m + "' (within, none, pooled, easyadapt, tca)");
  if (train == test && methods != std::vector<std::string>{"within"})
    fail_validation("evaluate: only 'within' applies when train and test platforms are the same");

  std::vector<std::vector<std::string>> sets;
  for (const auto& f : c.cfg.features.families) sets.push_back({f});
  if (sets.size() > 1) sets.push_back(c.cfg.features.families);

  protocol::Report rep;
  rep.title = "Trained on " + to_string(train) + ", tested on " + to_string(test) + ": out-of-fold Pearson r, " +
              std::to_string(cohort.size()) + " users, " + std::to_string(k) + " folds";
  rep.columns = methods;
  for (const auto& set : sets) {
    std::string label;
    for (const auto& f : set) label += (label.empty() ? "" : "+") + f;
    auto td = pipeline::featurize_two_domains(cohort, train, test, feature_spec(c, set), c.tok);
    protocol::Dataset data{td.source, td.target, y, folds, k};
    std::vector<std::optional<double>> row;
    for (const auto& m : methods) {
      protocol::Result r;
      if (m == "within") r = protocol::within(td.target, y, folds, k, o);
      else if (m == "pooled") r = protocol::pooled(data, o);
      else r = protocol::cross_domain(data, protocol::parse_adaptation(m), o);
      row.push_back(r.r);
    }
    rep.add(label, row);
  }
  auto out = csv::open_output(c.output(l.out));
  protocol::write_report_csv(out, rep);
  c.out << protocol::render(rep);
}

inline void cmd_county_score(Context& c, const Local& l) {
  auto bundle = Bundle::from_json(read_json(c.input(l.model, "model")));
  const auto& posts_path = c.input(c.cfg.paths.county_posts, "county posts");
  Platform platform = platform_arg(c.cfg.county.platform);
  std::ifstream in(posts_path, std::ios::binary);
  if (!in) fail_input("cannot open " + posts_path);
  county::CountyAggregator agg(c.tok);
  std::size_t used = 0;
  auto report = for_each_post(
      in,
      [&](PostRecord&& p) {
        if (p.platform != platform) return;
        agg.add(p);
        ++used;
      },
      {true});
  report_rejects(c, posts_path, report);
  auto all = agg.finish();
  auto kept = county::filter_counties(all, c.cfg.county.min_words);
  if (kept.empty())
    c.err << "warning: no county reaches " << c.cfg.county.min_words << " words; writing an empty score file\n";
  auto scores = county::score_counties(
      kept, bundle.model, [&](const std::vector<features::RowLanguage>& rows) { return pipeline::featurize(rows, bundle.features); },
      bundle.transform ? &*bundle.transform : nullptr);
  county::export_choropleth(c.output(l.out), scores);
  c.out << "scored " << scores.size() << " of " << all.size() << " counties (>= " << c.cfg.county.min_words
        << " words) from " << used << " " << to_string(platform) << " posts\n";
}

inline void cmd_county_validate(Context& c, const Local& l) {
  auto scores = county::load_choropleth(c.input(l.scores, "county scores"));
  auto outcomes = load_county_outcomes(c.input(c.cfg.paths.outcomes, "outcomes"));
  std::optional<std::vector<county::ControlSpec>> controls;
  for (const auto& s : c.cfg.county.controls) {
    if (trim(s).empty()) continue;  // `--controls ""` switches controls off
    if (!controls) controls.emplace();
    controls->push_back(county::ControlSpec::parse(s));
  }
  auto columns = c.cfg.county.outcomes;
  if (columns.empty())
    for (const auto& col : outcomes.columns) {
      bool is_control = controls && std::any_of(controls->begin(), controls->end(),
                                                [&](const county::ControlSpec& s) { return s.column == col; });
      if (!is_control) columns.push_back(col);
    }
  if (!(c.cfg.county.min_n >= 1)) fail_validation("county.min_n must be >= 1");
  auto rows = county::validate_counties(scores, outcomes, columns, controls, static_cast<std::size_t>(c.cfg.county.min_n));
  auto out = csv::open_output(c.output(l.out));
  county::write_validation_csv(out, rows, controls.has_value());
  for (const auto& r : rows) {
    c.out << r.outcome << ": ";
    if (r.plain) c.out << "r=" << format_double(r.plain->r) << " (n=" << r.plain->n << ")";
    if (r.controlled) c.out << ", with controls r=" << format_double(r.controlled->r);
    if (!r.error.empty()) c.out << " [" << r.error << "]";
    c.out << "\n";
  }
}

inline void cmd_contrast(Context& c, const Local& l) {
  auto cohort = load_cohort(c);
  Platform a = platform_arg(l.source), b = platform_arg(l.target);
  if (a == b) fail_validation("contrast: the two platforms are the same");
  auto td = pipeline::featurize_two_domains(cohort, a, b, feature_spec(c, c.cfg.features.families), c.tok);
  std::map<std::string, double> outcome;
  for (const auto& u : cohort) outcome[u.user_id] = u.pss_score;
  stats::ContrastOptions o;
  o.method = stats::parse_method(c.cfg.contrast.method);
  o.alpha = c.cfg.contrast.alpha;
  o.min_abs_rho = c.cfg.contrast.min_abs_r;
  auto res = stats::platform_contrast(td.source, td.target, outcome, o);
  auto out = csv::open_output(c.output(l.out));
  stats::write_contrast_csv(out, res, false);
  std::size_t kept = 0;
  for (const auto& p : res.points) kept += p.kept;
  c.out << kept << " of " << res.points.size() << " features kept (" << to_string(a) << " vs " << to_string(b) << ")\n";
}

/// Writes a complete synthetic fixture plus a config pointing at it.
inline void cmd_synth(Context& c, const Local& l) {
  synth::Config sc;
  sc.seed = c.cfg.seed;
  sc.n_users = c.cfg.synth.users;
  sc.n_labeled = c.cfg.synth.labeled;
  sc.n_counties = c.cfg.synth.counties;
  sc.slang_shift = c.cfg.synth.slang_shift;
  auto pop = synth::generate(sc);
  std::filesystem::path dir(l.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail_input("cannot create " + dir.string());
  auto file = [&](const char* name) { return c.output((dir / name).string()); };
  {
    auto out = csv::open_output(file("posts.jsonl"));
    write_posts_jsonl(out, pop.posts);
  }
  {
    auto out = csv::open_output(file("surveys.csv"));
    write_surveys(out, pop.surveys);
  }
  {
    auto out = csv::open_output(file("lexicon.csv"));
    synth::write_lexicon_csv(out, synth::demo_lexicon());
  }
  {
    auto out = csv::open_output(file("topics.csv"));
    synth::write_topics_csv(out, synth::demo_topics());
  }
  {
    auto out = csv::open_output(file("valence.csv"));
    synth::write_valence_csv(out, synth::demo_valence());
  }
  {
    auto out = csv::open_output(file("outcomes.csv"));
    synth::write_outcomes_csv(out, pop.outcomes());
  }
  {
    auto out = csv::open_output(file("stressmeter.toml"));
    auto p = [&](const char* name) { return (dir / name).string(); };
    out << "seed = " << c.cfg.seed << "\n\n[paths]\n"
        << "posts = \"" << p("posts.jsonl") << "\"\n"
        << "surveys = \"" << p("surveys.csv") << "\"\n"
        << "lexicon = \"" << p("lexicon.csv") << "\"\n"
        << "topics = \"" << p("topics.csv") << "\"\n"
        << "valence = \"" << p("valence.csv") << "\"\n"
        << "county_posts = \"" << p("posts.jsonl") << "\"\n"
        << "outcomes = \"" << p("outcomes.csv") << "\"\n";
  }
  c.out << "wrote " << pop.users.size() << " users (" << pop.surveys.size() << " surveyed), " << pop.posts.size()
        << " posts, " << pop.counties.size() << " counties to " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// Argument parsing

/// Flags that override RunConfig fields. A flag is applied only when given,
/// after the config file is loaded, so flags always win.
class Knobs {
 public:
  template <class Get>
  CLI::Option* add(CLI::App* app, const std::string& flag, Get get, const std::string& desc) {
    using T = std::remove_reference_t<decltype(get(std::declval<config::RunConfig&>()))>;
    auto slot = std::make_shared<T>();
    CLI::Option* o = app->add_option(flag, *slot, desc);
    if constexpr (is_vector<T>::value) o->delimiter(',');
    apply_.push_back([slot, get, o](config::RunConfig& c) {
      if (o->count() > 0) get(c) = *slot;
    });
    return o;
  }

  void apply(config::RunConfig& c) const {
    for (const auto& f : apply_) f(c);
  }

 private:
  template <class T>
  struct is_vector : std::false_type {};
  template <class T>
  struct is_vector<std::vector<T>> : std::true_type {};

  std::vector<std::function<void(config::RunConfig&)>> apply_;
};

#define SM_KNOB(app, flag, field, desc) knobs.add(app, flag, [](config::RunConfig& c) -> auto& { return c.field; }, desc)

/// Parses argv (without the program name), runs one command and returns its
/// exit code. Errors are reported on err, never thrown.
/// A replay passes the manifest's resolved config as base; the config file
/// and environment are then ignored.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr,
               const config::RunConfig* base = nullptr) {
  CLI::App app{"Measure perceived stress from social-media language.", "stressmeter"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", STRESSMETER_VERSION);
  std::string config_path;
  app.add_option("--config", config_path, "TOML run configuration (default: $STRESSMETER_CONFIG)");
  Knobs knobs;
  Local l;
  SM_KNOB(&app, "--seed", seed, "Seed for every random stream");

  auto input_knobs = [&](CLI::App* s) {
    SM_KNOB(s, "--posts", paths.posts, "posts.jsonl");
    SM_KNOB(s, "--surveys", paths.surveys, "Survey CSV");
    SM_KNOB(s, "--emoticons", paths.emoticons, "Emoticon list, one per line");
    SM_KNOB(s, "--min-words", cohort.min_words, "Words a user needs on every required platform (strictly more)");
    SM_KNOB(s, "--require-platforms", cohort.platforms, "Platforms every cohort user must have");
    SM_KNOB(s, "--window-start", cohort.window_start, "Drop posts before this ISO 8601 time");
    SM_KNOB(s, "--window-end", cohort.window_end, "Drop posts after this ISO 8601 time");
    SM_KNOB(s, "--drop-duplicates", cohort.drop_duplicates, "Drop exact duplicate posts (true/false)");
    SM_KNOB(s, "--reverse-items", cohort.reverse_items, "Reverse-coded PSS items, 1-based");
  };
  auto feature_knobs = [&](CLI::App* s) {
    SM_KNOB(s, "--features", features.families, "Feature families: ngrams, lexicon, topics, valence, engagement");
    SM_KNOB(s, "--lexicon", paths.lexicon, "Dictionary (.dic or category,term CSV)");
    SM_KNOB(s, "--topics", paths.topics, "Topic table CSV (term,topic_id,weight)");
    SM_KNOB(s, "--valence", paths.valence, "Valence lexicon CSV (term,strength)");
    SM_KNOB(s, "--ngram-n", features.ngram_n_max, "Largest n-gram order");
    SM_KNOB(s, "--ngram-min-fraction", features.ngram_min_row_fraction, "Share of rows an n-gram must appear in");
    SM_KNOB(s, "--ngram-max-vocab", features.ngram_max_vocab, "Cap on n-gram columns (0: none)");
    SM_KNOB(s, "--transform", features.transform, "Frequency transform: none, sqrt, anscombe");
    SM_KNOB(s, "--sentence-rule", features.sentence_rule, "Valence per sentence: max or mean");
    SM_KNOB(s, "--utc-offset", features.utc_offset_minutes, "Fixed timezone offset in minutes");
  };
  auto cv_knobs = [&](CLI::App* s) {
    SM_KNOB(s, "--folds", cv.folds, "Outer folds");
    SM_KNOB(s, "--inner-folds", cv.inner_folds, "Inner folds for hyperparameter selection");
    SM_KNOB(s, "--lambdas", cv.lambdas, "Penalty grid");
    SM_KNOB(s, "--l1-ratios", cv.l1_ratios, "L1 share grid (0 ridge, 1 lasso)");
    SM_KNOB(s, "--tol", cv.tol, "Coordinate descent tolerance");
    SM_KNOB(s, "--max-iter", cv.max_iter, "Coordinate descent sweep limit");
    SM_KNOB(s, "--sample-weights", cv.sample_weights, "CSV of user_id,weight");
  };
  auto adapt_knobs = [&](CLI::App* s) {
    SM_KNOB(s, "--kernel", adapt.kernel, "TCA kernel: linear or rbf");
    SM_KNOB(s, "--bandwidth", adapt.bandwidth, "RBF bandwidth (0: median heuristic)");
    SM_KNOB(s, "--m", adapt.m, "TCA components");
    SM_KNOB(s, "--mu", adapt.mu, "TCA regularizer");
    SM_KNOB(s, "--transductive", adapt.transductive, "Fit TCA on every user's target rows (true/false)");
  };

  auto* cohort = app.add_subcommand("cohort", "Build the user cohort and report platform usage");
  input_knobs(cohort);
  cohort->add_option("--out", l.out, "Cohort CSV")->required();

  auto* featurize = app.add_subcommand("featurize", "Extract user features on one platform");
  input_knobs(featurize);
  feature_knobs(featurize);
  featurize->add_option("--platform", l.platform, "facebook or twitter");
  featurize->add_option("--out", l.out, "Feature CSV")->required();

  auto* dla = app.add_subcommand("dla", "Correlate each feature with PSS, Bonferroni per family");
  input_knobs(dla);
  feature_knobs(dla);
  SM_KNOB(dla, "--controls", dla.controls, "Survey covariates: age, gender, race, education, income");
  SM_KNOB(dla, "--alpha", dla.alpha, "Family-wise alpha");
  SM_KNOB(dla, "--method", dla.method, "pearson or spearman");
  dla->add_option("--platform", l.platform, "facebook or twitter");
  dla->add_option("--out", l.out, "DLA CSV")->required();

  auto* train = app.add_subcommand("train", "Fit an elastic-net model on one platform");
  input_knobs(train);
  feature_knobs(train);
  cv_knobs(train);
  train->add_option("--platform", l.platform, "facebook or twitter");
  train->add_option("--out", l.out, "Model bundle JSON")->required();

  auto* adapt_cmd = app.add_subcommand("adapt", "Fit a cross-platform model (none, easyadapt, tca)");
  input_knobs(adapt_cmd);
  feature_knobs(adapt_cmd);
  cv_knobs(adapt_cmd);
  adapt_knobs(adapt_cmd);
  SM_KNOB(adapt_cmd, "--method", adapt.method, "none, easyadapt or tca");
  adapt_cmd->add_option("--source", l.source, "Labeled training platform");
  adapt_cmd->add_option("--target", l.target, "Platform the model will be applied to");
  adapt_cmd->add_option("--out", l.out, "Model bundle JSON")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Out-of-fold evaluation across protocols");
  input_knobs(evaluate);
  feature_knobs(evaluate);
  cv_knobs(evaluate);
  adapt_knobs(evaluate);
  evaluate->add_option("--train-platform", l.source, "Platform the model is trained on");
  evaluate->add_option("--test-platform", l.target, "Platform predictions are scored on");
  evaluate->add_option("--methods", l.methods, "Columns: within, none, pooled, easyadapt, tca")->delimiter(',');
  evaluate->add_option("--out", l.out, "Report CSV")->required();

  auto* county = app.add_subcommand("county", "County-level scoring and validation");
  county->require_subcommand(1);
  auto* score = county->add_subcommand("score", "Aggregate geotagged posts by county and score them");
  SM_KNOB(score, "--posts", paths.county_posts, "Geotagged posts.jsonl (with fips)");
  SM_KNOB(score, "--emoticons", paths.emoticons, "Emoticon list, one per line");
  SM_KNOB(score, "--platform", county.platform, "Platform whose posts are aggregated");
  SM_KNOB(score, "--min-words", county.min_words, "Words a county needs (inclusive)");
  score->add_option("--model", l.model, "Bundle written by train or adapt")->required();
  score->add_option("--out", l.out, "Choropleth CSV")->required();
  auto* validate = county->add_subcommand("validate", "Correlate county scores with outcomes");
  SM_KNOB(validate, "--outcomes", paths.outcomes, "County outcome CSV keyed by fips");
  SM_KNOB(validate, "--outcome-columns", county.outcomes, "Outcomes to test (default: all non-control columns)");
  SM_KNOB(validate, "--controls", county.controls, "Controls, log(x) for log transform; empty for none");
  SM_KNOB(validate, "--min-n", county.min_n, "Counties needed per test");
  validate->add_option("--scores", l.scores, "Choropleth CSV from county score")->required();
  validate->add_option("--out", l.out, "Validation CSV")->required();

  auto* contrast = app.add_subcommand("contrast", "Platform contrast of features against PSS");
  input_knobs(contrast);
  feature_knobs(contrast);
  SM_KNOB(contrast, "--method", contrast.method, "pearson or spearman");
  SM_KNOB(contrast, "--alpha", contrast.alpha, "Family-wise alpha");
  SM_KNOB(contrast, "--min-abs-r", contrast.min_abs_r, "Smallest |r| worth keeping");
  contrast->add_option("--a", l.source, "Platform coded 1");
  contrast->add_option("--b", l.target, "Platform coded 0");
  contrast->add_option("--out", l.out, "Contrast CSV")->required();

  auto* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic fixture");
  SM_KNOB(synth_cmd, "--users", synth.users, "Users");
  SM_KNOB(synth_cmd, "--labeled", synth.labeled, "Surveyed users with both platforms");
  SM_KNOB(synth_cmd, "--counties", synth.counties, "Counties");
  SM_KNOB(synth_cmd, "--slang-shift", synth.slang_shift, "Target/source rate ratio of platform slang");
  synth_cmd->add_option("--out-dir", l.out_dir, "Output directory");

  auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  replay->add_option("manifest", l.manifest, "A *.manifest.json sidecar")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code(ErrorKind::validation);
  }

  try {
    if (replay->parsed()) {
      auto recorded = config::manifest_args(l.manifest);
      if (!recorded.empty() && recorded.front() == "replay") fail_validation("manifest records a replay");
      auto resolved = config::manifest_config(l.manifest);
      return run(recorded, out, err, &resolved);
    }
    if (!base && config_path.empty())
      if (const char* env = std::getenv("STRESSMETER_CONFIG")) config_path = env;
    config::RunConfig cfg = base ? *base : config_path.empty() ? config::RunConfig{} : config::load_toml(config_path);
    knobs.apply(cfg);

    std::string command;
    for (const auto* s : app.get_subcommands()) {
      command = s->get_name();
      for (const auto* t : s->get_subcommands()) command += " " + t->get_name();
    }
    Context c{cfg, config::Manifest{command, args, cfg, {}, {}}, out, err, text::Tokenizer(), {}};
    if (!config_path.empty() && std::filesystem::exists(config_path)) c.manifest.add_input(config_path);
    if (!cfg.paths.emoticons.empty())
      c.tok = text::Tokenizer(text::EmoticonSet::load(c.input(cfg.paths.emoticons, "emoticons")));

    if (cohort->parsed()) cmd_cohort(c, l);
    else if (featurize->parsed()) cmd_featurize(c, l);
    else if (dla->parsed()) cmd_dla(c, l);
    else if (train->parsed()) cmd_train(c, l);
    else if (adapt_cmd->parsed()) cmd_adapt(c, l);
    else if (evaluate->parsed()) cmd_evaluate(c, l);
    else if (score->parsed()) cmd_county_score(c, l);
    else if (validate->parsed()) cmd_county_validate(c, l);
    else if (contrast->parsed()) cmd_contrast(c, l);
    else if (synth_cmd->parsed()) cmd_synth(c, l);
    c.finish();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return exit_code(ErrorKind::numerical);
  }
}

#undef SM_KNOB

}  // namespace stressmeter::app
