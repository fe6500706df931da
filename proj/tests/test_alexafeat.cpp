#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "mediaprof/alexafeat.hpp"
#include "mediaprof/classify.hpp"
#include "mediaprof/synthgen.hpp"
#include "oracles.hpp"

using namespace mediaprof;
using namespace mediaprof::features;

namespace {

graph::MediaGraph star(int leaves) {
  graph::MediaGraph g;
  g.add_node("center.com", 0, true);
  for (int i = 0; i < leaves; ++i) {
    g.add_node("leaf" + std::to_string(i) + ".com", 1, false);
    g.add_edge("center.com", "leaf" + std::to_string(i) + ".com", 10.0 + i);
  }
  return g;
}

}  // namespace

TEST(LogScaleRank, Values) {
  EXPECT_EQ(log_scale_rank(1), 0.0);
  EXPECT_EQ(log_scale_rank(1000), 3.0);
  // log10(99) = 2 + log10(0.99); series of ln(1 - x) with x = 0.01.
  double ln = 0.0, term = 1.0;
  for (int i = 1; i < 40; ++i) {
    term *= 0.01;
    ln -= term / i;
  }
  EXPECT_NEAR(log_scale_rank(99), 2.0 + ln / std::log(10.0), 1e-15);
  EXPECT_THROW(log_scale_rank(0), Error);
}

TEST(ParseTimeOnSite, Values) {
  EXPECT_EQ(parse_time_on_site("3:45"), 225.0);
  EXPECT_EQ(parse_time_on_site("0:00"), 0.0);
  EXPECT_EQ(parse_time_on_site("1:02:03"), 3723.0);
  EXPECT_THROW(parse_time_on_site("3:5"), ParseError);
  EXPECT_THROW(parse_time_on_site("abc"), ParseError);
  EXPECT_THROW(parse_time_on_site("1:75"), ParseError);
  EXPECT_THROW(parse_time_on_site("1:2:3:4"), ParseError);
}

TEST(Binarize, Flags) {
  NodeFeatures all;
  for (int m = 0; m < kMetricCount; ++m) all.set(static_cast<Metric>(m), 1.0);
  EXPECT_EQ(binarize(all), (std::array<int, 4>{1, 1, 1, 1}));
  NodeFeatures bounce_only;
  bounce_only.set(Metric::bounce_rate, 40.0);
  EXPECT_EQ(binarize(bounce_only), (std::array<int, 4>{0, 1, 0, 0}));
}

TEST(FeatureVector, OrderIsFixed) {
  NodeFeatures f;
  f.set(Metric::rank_log, 3.0);
  f.set(Metric::sites_linking_in, 120.0);
  f.set(Metric::bounce_rate, 55.5);
  f.set(Metric::daily_pageviews, 2.5);
  f.set(Metric::daily_time, 225.0);
  EXPECT_EQ(feature_vector(f), (std::array<double, 9>{3.0, 120.0, 55.5, 2.5, 225.0, 1, 1, 1, 1}));
  NodeFeatures partial;
  partial.set(Metric::rank_log, 1.0);
  partial.set(Metric::daily_time, 60.0);
  EXPECT_EQ(feature_vector(partial), (std::array<double, 9>{1.0, 0, 0, 0, 60.0, 0, 0, 1, 0}));
  EXPECT_EQ(kFeatureNames[0], "rank_log");
  EXPECT_EQ(kFeatureNames[8], "has_daily_pageviews");
}

TEST(ReadRawFeatures, ParsesAndMarksMissing) {
  std::istringstream in(
      "domain,rank,sites_linking_in,bounce_rate,daily_pageviews,daily_time\n"
      "https://www.A.com/x,1000,250,45.5%,2.5,3:45\n"
      "b.com,10,,,,\n"
      "c.com,abc,5,200,1.0,bad\n");
  std::vector<std::string> warnings;
  log::ScopedSink sink([&](LogLevel l, std::string_view m) {
    if (l == LogLevel::warn) warnings.emplace_back(m);
  });
  const auto t = read_raw_features(in);
  ASSERT_EQ(t.size(), 3u);
  const auto& a = t.at("a.com");
  EXPECT_EQ(a.value(Metric::rank_log), 3.0);
  EXPECT_EQ(a.value(Metric::bounce_rate), 45.5);
  EXPECT_EQ(a.value(Metric::daily_time), 225.0);
  EXPECT_EQ(binarize(t.at("b.com")), (std::array<int, 4>{0, 0, 0, 0}));
  const auto& c = t.at("c.com");
  EXPECT_FALSE(c.has(Metric::rank_log));
  EXPECT_FALSE(c.has(Metric::bounce_rate));
  EXPECT_FALSE(c.has(Metric::daily_time));
  EXPECT_TRUE(c.has(Metric::sites_linking_in));
  EXPECT_EQ(warnings.size(), 3u);
}

TEST(ReadRawFeatures, MissingColumnRejected) {
  std::istringstream in("domain,rank\na.com,1\n");
  EXPECT_THROW(read_raw_features(in), ParseError);
}

TEST(Impute, StarCenterGetsLeafMean) {
  const auto g = star(5);
  FeatureTable t;
  NodeFeatures center;
  center.set(Metric::rank_log, 1.0);
  t.emplace("center.com", center);
  for (int i = 0; i < 5; ++i) {
    NodeFeatures f;
    f.set(Metric::rank_log, 2.0);
    f.set(Metric::bounce_rate, 10.0 * (i + 1));
    t.emplace("leaf" + std::to_string(i) + ".com", f);
  }
  const auto out = impute_missing(g, t);
  EXPECT_EQ(out.at("center.com").value(Metric::bounce_rate), 30.0);
  EXPECT_FALSE(out.at("center.com").has(Metric::bounce_rate));
  EXPECT_FALSE(out.at("center.com").missing[static_cast<int>(Metric::bounce_rate)]);
}

TEST(Impute, NoDonorInComponentFallsBackToGlobalMean) {
  graph::MediaGraph g;
  g.add_node("a.com", 0, true);
  g.add_node("b.com", 1, false);
  g.add_node("c.com", 0, true);
  g.add_node("d.com", 1, false);
  g.add_edge("a.com", "b.com", 1.0);
  g.add_edge("c.com", "d.com", 1.0);
  FeatureTable t;
  NodeFeatures none, four, eight;
  four.set(Metric::daily_pageviews, 4.0);
  eight.set(Metric::daily_pageviews, 8.0);
  t.emplace("a.com", none);
  t.emplace("b.com", none);
  t.emplace("c.com", four);
  t.emplace("d.com", eight);
  const auto out = impute_missing(g, t);
  EXPECT_EQ(out.at("a.com").value(Metric::daily_pageviews), 6.0);
  EXPECT_EQ(out.at("b.com").value(Metric::daily_pageviews), 6.0);
  // No donors anywhere: global mean of nothing is 0.
  EXPECT_EQ(out.at("a.com").value(Metric::bounce_rate), 0.0);
}

TEST(Impute, TiesBrokenByScoreThenDomain) {
  // Six leaves, k = 5: the weakest edge is dropped.
  graph::MediaGraph g;
  g.add_node("hub.com", 0, true);
  const double scores[] = {5, 9, 9, 7, 3, 8};
  for (int i = 0; i < 6; ++i) {
    g.add_node("l" + std::to_string(i) + ".com", 1, false);
    g.add_edge("hub.com", "l" + std::to_string(i) + ".com", scores[i]);
  }
  FeatureTable t;
  t.emplace("hub.com", NodeFeatures{});
  for (int i = 0; i < 6; ++i) {
    NodeFeatures f;
    f.set(Metric::bounce_rate, 10.0 * i);
    t.emplace("l" + std::to_string(i) + ".com", f);
  }
  const auto out = impute_missing(g, t, 5);
  EXPECT_DOUBLE_EQ(out.at("hub.com").value(Metric::bounce_rate), (0 + 10 + 20 + 30 + 50) / 5.0);
}

TEST(Impute, MatchesBruteForceOracle) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto [g, t] = oracle::random_instance(1000 + s, 100, 0.3);
    const auto fast = impute_missing(g, t, 5);
    const auto slow = oracle::impute(g, t, 5);
    ASSERT_EQ(fast, slow) << "instance " << s;
  }
}

TEST(Impute, IdempotentAndKeepsPresentValues) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto [g, t] = oracle::random_instance(77 + s, 60, 0.4);
    const auto once = impute_missing(g, t);
    EXPECT_EQ(impute_missing(g, once), once);
    for (const auto& [d, f] : t) {
      const auto& after = once.at(d);
      EXPECT_EQ(after.present, f.present);
      EXPECT_EQ(binarize(after), binarize(f));
      for (int m = 0; m < kMetricCount; ++m) {
        if (f.present[m]) {
          EXPECT_EQ(after.values[m], f.values[m]);
        }
        EXPECT_TRUE(std::isfinite(after.values[m]));
      }
    }
  }
}

TEST(Impute, TableMustCoverGraph) {
  const auto g = star(2);
  FeatureTable t;
  t.emplace("center.com", NodeFeatures{});
  EXPECT_THROW(impute_missing(g, t), Error);
  EXPECT_EQ(align_to_graph(g, t).size(), 3u);
}

TEST(FeatureTable, WriteReadRoundTrip) {
  const auto [g, t] = oracle::random_instance(5, 30, 0.3);
  const auto imputed = impute_missing(g, t);
  std::stringstream s;
  write_feature_table(imputed, s);
  const auto back = read_feature_table(s);
  ASSERT_EQ(back.size(), imputed.size());
  for (const auto& [d, f] : imputed) EXPECT_EQ(feature_vector(back.at(d)), feature_vector(f)) << d;
}

TEST(ReadRawFeatures, PresenceMatchesFixtureGroundTruth) {
  synth::SynthConfig c;
  c.n_nodes = 2000;
  c.seed = 12;
  const auto d = synth::generate(c);
  std::stringstream s;
  synth::write_features(d, s);
  const auto t = read_raw_features(s);
  std::array<int, kMetricCount> truth{}, seen{};
  for (const auto& m : d.metrics) {
    truth[0] += m.rank.has_value();
    truth[1] += m.sites_linking_in.has_value();
    truth[2] += m.bounce_rate.has_value();
    truth[3] += m.daily_pageviews.has_value();
    truth[4] += m.daily_time.has_value();
  }
  for (const auto& [dom, f] : t)
    for (int m = 0; m < kMetricCount; ++m) seen[m] += f.present[m];
  EXPECT_EQ(seen, truth);
}

TEST(Impute, FeaturesAloneBeatMajorityBaseline) {
  synth::SynthConfig c;
  c.n_nodes = 300;
  c.label_fraction = 1.0;
  c.seed = 4;
  const auto d = synth::generate(c);
  graph::MediaGraph g;
  for (const auto& dom : d.domains) g.add_node(dom, 0, true);
  for (const auto& e : d.edges) g.add_edge(e.a, e.b, e.score);
  std::stringstream s;
  synth::write_features(d, s);
  const auto imputed = impute_missing(g, align_to_graph(g, read_raw_features(s)));

  classify::LabeledSet set;
  EmbeddingMatrix e{"alexametrics", {}, RowMatrix(300, kFeatureDim)};
  int r = 0;
  for (const auto& [dom, f] : imputed) {
    e.domains.push_back(dom);
    const auto v = feature_vector(f);
    for (int j = 0; j < kFeatureDim; ++j) e.values(r, j) = v[j];
    ++r;
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    set.domains.push_back(d.domains[i]);
    set.labels.push_back(d.block[i]);
  }
  const auto task = eval::factuality_task();
  svm::SvmConfig svm;
  svm.c_grid = {1.0, 10.0};
  svm.gamma_grid = {0.01, 0.1};
  const auto res = classify::cross_validate({classify::make_channel("alexametrics", e)}, set, task, 5, 1, svm);
  const auto folds = classify::fold_assignment(set, 5, 1);
  std::vector<int> base(set.size());
  for (int f = 0; f < 5; ++f) {
    std::vector<int> train;
    for (std::size_t i = 0; i < set.size(); ++i)
      if (folds[i] != f) train.push_back(set.labels[i]);
    const int k = eval::majority_baseline(train, task);
    for (std::size_t i = 0; i < set.size(); ++i)
      if (folds[i] == f) base[i] = k;
  }
  const auto baseline = eval::make_report(task, "majority", set.labels, base, folds, 5);
  EXPECT_GT(res[0].report.mean_macro_f1, baseline.mean_macro_f1 + 0.1);
}
