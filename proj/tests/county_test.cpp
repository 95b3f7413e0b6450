#include "oracles.hpp"
#include "test_util.hpp"

#include <stressmeter/county.hpp>
#include <stressmeter/pipeline.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace stressmeter;
using namespace stressmeter::county;
using testutil::post;

namespace {

const Platform tw = Platform::twitter;

CountyOutcomes outcomes_from(const std::string& text) {
  std::istringstream in(text);
  return load_county_outcomes(csv::read(in), "outcomes.csv");
}

std::string fips_of(int i) {
  std::string s = std::to_string(1000 + i);
  return std::string(5 - s.size(), '0') + s;
}

std::vector<CountyScore> scores_of(const Vector& v) {
  std::vector<CountyScore> out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back({fips_of(static_cast<int>(i)), v(i), 100000, 10, ""});
  return out;
}

model::LinearModel linear(std::vector<std::string> names, std::vector<double> w, double intercept,
                          std::vector<double> means, std::vector<double> scales) {
  model::LinearModel m;
  m.feature_names = std::move(names);
  auto vec = [](const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())).eval(); };
  m.weights = vec(w);
  m.means = vec(means);
  m.scales = vec(scales);
  m.intercept = intercept;
  return m;
}

pipeline::FeatureSpec lexicon_spec() {
  pipeline::FeatureSpec spec;
  spec.lexicon = features::Lexicon{"toy", {{"neg", {"tired", "sad*"}}, {"pos", {"happy"}}}};
  return spec;
}

}  // namespace

TEST(Aggregate, SingleUserDistribution) {
  auto agg = aggregate_county_language({post("u", tw, "a", "2016-03-01T12:00:00Z", "01001")});
  ASSERT_EQ(agg.counties.size(), 1u);
  EXPECT_EQ(agg.counties[0].word_freq, (std::map<std::string, double>{{"a", 1.0}}));
  EXPECT_EQ(agg.counties[0].total_words, 1);
  EXPECT_EQ(agg.counties[0].contributor_count, 1);
}

TEST(Aggregate, UsersWeightedEquallyRegardlessOfVolume) {
  std::vector<PostRecord> posts;
  for (int i = 0; i < 1000; ++i) posts.push_back(post("heavy", tw, "a", "2016-03-01T12:00:00Z", "01001"));
  posts.push_back(post("light", tw, "b", "2016-03-01T12:00:00Z", "01001"));
  auto agg = aggregate_county_language(posts);
  ASSERT_EQ(agg.counties.size(), 1u);
  EXPECT_DOUBLE_EQ(agg.counties[0].word_freq.at("a"), 0.5);
  EXPECT_DOUBLE_EQ(agg.counties[0].word_freq.at("b"), 0.5);
  EXPECT_EQ(agg.counties[0].total_words, 1001);
}

TEST(Aggregate, OrderIndependentAndRejectsBadFips) {
  std::vector<PostRecord> posts{post("u1", tw, "x y", "2016-03-01T12:00:00Z", "02002"),
                                post("u2", tw, "y z z", "2016-03-01T12:00:00Z", "01001"),
                                post("u3", tw, "q", "2016-03-01T12:00:00Z", "1001"),
                                post("u1", tw, "x", "2016-03-01T12:00:00Z", "02002")};
  auto a = aggregate_county_language(posts);
  std::reverse(posts.begin(), posts.end());
  auto b = aggregate_county_language(posts);
  ASSERT_EQ(a.counties.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.counties[i].fips, b.counties[i].fips);
    EXPECT_EQ(a.counties[i].word_freq, b.counties[i].word_freq);
  }
  ASSERT_EQ(a.rejects.size(), 1u);
  EXPECT_EQ(a.rejects[0].line, 3u);
  double total = 0;
  for (const auto& [w, f] : a.counties[1].word_freq) total += f;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(Aggregate, MinWordsBoundaryIsInclusive) {
  CountyLanguage lo{"01001", {{"a", 1.0}}, 99999, 3}, hi{"01003", {{"a", 1.0}}, 100000, 3};
  auto kept = filter_counties({lo, hi});
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].fips, "01003");
}

TEST(Score, ZeroWeightModelGivesIntercept) {
  auto spec = lexicon_spec();
  auto m = linear({"lex:neg", "lex:pos"}, {0, 0}, 4.25, {0, 0}, {1, 1});
  std::vector<CountyLanguage> cs{{"01001", {{"tired", 0.5}, {"ok", 0.5}}, 10, 1}, {"01003", {{"happy", 1.0}}, 10, 1}};
  auto scores = score_counties(cs, m, [&](const auto& rows) { return pipeline::featurize(rows, spec); });
  ASSERT_EQ(scores.size(), 2u);
  EXPECT_EQ(scores[0].predicted, 4.25);
  EXPECT_EQ(scores[1].predicted, 4.25);
}

TEST(Score, IdenticalDistributionsIdenticalScores) {
  auto spec = lexicon_spec();
  auto m = linear({"lex:neg", "lex:pos"}, {1.5, -2}, 1, {0.1, 0.2}, {0.3, 0.4});
  std::map<std::string, double> d{{"tired", 0.2}, {"sadness", 0.1}, {"happy", 0.3}, {"the", 0.4}};
  auto scores = score_counties({{"01001", d, 10, 1}, {"02002", d, 50, 4}}, m,
                               [&](const auto& rows) { return pipeline::featurize(rows, spec); });
  EXPECT_EQ(scores[0].predicted, scores[1].predicted);
  EXPECT_EQ(scores[0].model_fingerprint, scores[1].model_fingerprint);
}

TEST(Score, MatchesHandChainedComputation) {
  auto spec = lexicon_spec();
  auto m = linear({"lex:neg", "lex:pos"}, {0.8, -1.1}, 2.0, {0.15, 0.1}, {0.05, 0.2});
  std::vector<CountyLanguage> cs;
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int i = 0; i < 5; ++i) {
    std::map<std::string, double> d{{"tired", u(g)}, {"sad", u(g)}, {"sadly", u(g)}, {"happy", u(g)}, {"other", u(g)}};
    double s = 0;
    for (auto& [w, f] : d) s += f;
    for (auto& [w, f] : d) f /= s;
    cs.push_back({fips_of(i), d, 1000, 5});
  }
  auto scores = score_counties(cs, m, [&](const auto& rows) { return pipeline::featurize(rows, spec); });
  for (int i = 0; i < 5; ++i) {
    const auto& d = cs[static_cast<std::size_t>(i)].word_freq;
    double neg = d.at("tired") + d.at("sad") + d.at("sadly"), pos = d.at("happy");
    double expected = 2.0 + 0.8 * (neg - 0.15) / 0.05 - 1.1 * (pos - 0.1) / 0.2;
    EXPECT_NEAR(scores[static_cast<std::size_t>(i)].predicted, expected, 1e-12);
  }
}

TEST(Score, TcaModelNeedsItsTransform) {
  auto spec = lexicon_spec();
  auto m = linear({"tca_000"}, {1}, 0, {0}, {1});
  m.adaptation = "tca";
  std::vector<CountyLanguage> cs{{"01001", {{"tired", 1.0}}, 10, 1}};
  auto f = [&](const auto& rows) { return pipeline::featurize(rows, spec); };
  EXPECT_THROW(score_counties(cs, m, f), Error);
  EXPECT_TRUE(score_counties({}, m, f).empty());
}

TEST(Validate, OutcomeEqualToScore) {
  Vector s = Vector::LinSpaced(12, 0.0, 3.0);
  s(4) = 9.0;
  std::string csv = "fips,y\n";
  for (int i = 0; i < 12; ++i) csv += fips_of(i) + "," + std::to_string(s(i)) + "\n";
  auto rows = validate_counties(scores_of(s), outcomes_from(csv), {"y"});
  ASSERT_EQ(rows.size(), 1u);
  ASSERT_TRUE(rows[0].plain);
  EXPECT_NEAR(rows[0].plain->r, 1.0, 1e-12);
  EXPECT_FALSE(rows[0].controlled);
}

TEST(Validate, ConstructedConfound) {
  // control c tracks the score; outcome = c + e with e orthogonal to [1, s, c]
  std::mt19937_64 g(2);
  const int n = 40;
  Vector s = testutil::random_vector(g, n);
  Vector c = s + 0.5 * testutil::random_vector(g, n);
  Matrix D(n, 2);
  D.col(0) = s;
  D.col(1) = c;
  Vector raw = testutil::random_vector(g, n);
  Vector e = raw - oracle::least_squares(D, raw).fitted;
  Vector y = c + 0.3 * e;
  std::string csv = "fips,y,control\n";
  for (int i = 0; i < n; ++i) csv += fips_of(i) + "," + format_double(y(i)) + "," + format_double(c(i)) + "\n";
  auto rows = validate_counties(scores_of(s), outcomes_from(csv), {"y"}, std::vector<ControlSpec>{{"control"}});
  ASSERT_TRUE(rows[0].plain && rows[0].controlled);
  EXPECT_GT(rows[0].plain->r, 0.4);
  EXPECT_LT(std::abs(rows[0].controlled->r), 0.1);
  EXPECT_NEAR(rows[0].controlled->r, oracle::partial(s, y, Matrix(c)), 1e-10);
  EXPECT_EQ(rows[0].controlled->df, n - 3);
}

TEST(Validate, MissingCellsDropRowsAndLogControls) {
  std::mt19937_64 g(3);
  const int n = 15;
  Vector s = testutil::random_vector(g, n);
  std::string csv = "fips,y,income\n";
  for (int i = 0; i < n; ++i) {
    std::string y = i == 2 ? "NA" : format_double(s(i) + 0.1 * i);
    std::string inc = i == 5 ? "-1" : format_double(30000 + 1000 * i);
    csv += fips_of(i) + "," + y + "," + inc + "\n";
  }
  auto rows = validate_counties(scores_of(s), outcomes_from(csv), {"y"},
                                std::vector<ControlSpec>{ControlSpec::parse("log(income)")});
  EXPECT_EQ(rows[0].plain->n, 14u);
  EXPECT_EQ(rows[0].controlled->n, 13u);
  EXPECT_EQ(ControlSpec::parse(" log(x) ").label(), "log(x)");
  EXPECT_FALSE(ControlSpec::parse("x").log);
}

TEST(Validate, TooFewCountiesIsNotedNotFatal) {
  Vector s = Vector::LinSpaced(5, 0, 1);
  std::string csv = "fips,y\n";
  for (int i = 0; i < 5; ++i) csv += fips_of(i) + "," + std::to_string(i * i) + "\n";
  auto rows = validate_counties(scores_of(s), outcomes_from(csv), {"y"});
  EXPECT_FALSE(rows[0].plain);
  EXPECT_NE(rows[0].error.find("only 5"), std::string::npos);
  EXPECT_THROW(validate_counties(scores_of(s), outcomes_from(csv), {"nope"}), Error);
  std::ostringstream out;
  write_validation_csv(out, rows, false);
  EXPECT_NE(out.str().find("y,NA,NA,NA,"), std::string::npos);
}

TEST(Choropleth, RowsAndRoundTrip) {
  std::vector<CountyScore> scores{{"01001", 1.0 / 3.0, 100000, 12, ""},
                                  {"02002", -2.5e-7, 250000, 40, ""},
                                  {"06037", 17.125, 100001, 3, ""}};
  std::ostringstream out;
  export_choropleth(out, scores);
  std::istringstream in(out.str());
  auto t = csv::read(in);
  EXPECT_EQ(t.rows.size(), 3u);
  auto back = load_choropleth(t, "mem");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].fips, scores[i].fips);
    EXPECT_NEAR(back[i].predicted, scores[i].predicted, 1e-9);
    EXPECT_EQ(back[i].total_words, scores[i].total_words);
    EXPECT_EQ(back[i].contributor_count, scores[i].contributor_count);
  }
  std::ostringstream empty;
  export_choropleth(empty, {});
  EXPECT_EQ(empty.str(), "fips,score,total_words,contributors\n");
}
