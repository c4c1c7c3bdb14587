#include <gtest/gtest.h>

#include <random>

#include "filterbubble/pipeline.hpp"
#include "test_util.hpp"

using namespace filterbubble;

namespace {

const CategoryScheme& scheme() {
  static const CategoryScheme s = CategoryScheme::standard();
  return s;
}

CategoryId id(const std::string& n) { return scheme().find(n); }

ChannelOutcome cat(std::initializer_list<const char*> names) {
  ChannelOutcome o{ChannelOutcome::Kind::Categorized, {}};
  for (const char* n : names) o.categories.push_back(id(n));
  std::sort(o.categories.begin(), o.categories.end());
  return o;
}

AggregatedRanking ranking(const std::string& seed, std::vector<std::string> list) {
  AggregatedRanking r{seed, std::move(list), {}};
  for (std::size_t i = 0; i < r.ranked.size(); ++i) r.scores.push_back(1.0 / static_cast<double>(i + 1));
  return r;
}

oracle::BubbleInput oracle_input() {
  oracle::BubbleInput in;
  for (auto c : scheme().ids(Family::ER)) in.er.insert(scheme().key(c));
  return in;
}

}  // namespace

TEST(Proportions, EvenSplitPerChannel) {
  ChannelCategorization cats{{"a", cat({"ER-Music"})}, {"b", cat({"ER-Music", "Neo-Nazi"})}};
  const auto p = seed_proportions("S", 10, ranking("S", {"a", "b"}), cats);
  ASSERT_TRUE(p);
  EXPECT_DOUBLE_EQ(p->dist.at(id("ER-Music")), 0.75);
  EXPECT_DOUBLE_EQ(p->dist.at(id("Neo-Nazi")), 0.25);
  EXPECT_EQ(p->dist.size(), 2u);
}

TEST(Proportions, ExcludedChannelsAreSkippedNotCounted) {
  ChannelCategorization cats{{"g", {ChannelOutcome::Kind::GreySheep, {}}},
                             {"x", {ChannelOutcome::Kind::TopicExcluded, {}}},
                             {"a", cat({"Populist"})},
                             {"b", cat({"NER-Sport"})}};
  // Top 1 after exclusion is "a" even though "g", "x" and "u" rank above it.
  const auto p = seed_proportions("S", 1, ranking("S", {"g", "x", "u", "a", "b"}), cats);
  ASSERT_TRUE(p);
  EXPECT_EQ(p->related, std::vector<std::string>{"a"});
  EXPECT_DOUBLE_EQ(p->dist.at(id("Populist")), 1.0);
  EXPECT_FALSE(seed_proportions("S", 5, ranking("S", {"g", "x", "u"}), cats));
  EXPECT_FALSE(seed_proportions("S", 5, ranking("S", {}), cats));
}

TEST(Proportions, MassSumsToOne) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = testutil::random_bubble(rng, 10, 30);
    const auto f = testutil::to_library(in, scheme());
    for (const auto& [seed, r] : f.rankings)
      for (std::size_t k : kDefaultKs)
        if (auto p = seed_proportions(seed, k, r, f.cats)) {
          double total = 0;
          for (const auto& [_, v] : p->dist) total += v;
          EXPECT_NEAR(total, 1.0, 1e-12);
          EXPECT_LE(p->related.size(), k);
        }
  }
}

TEST(Report, SingletonSeed) {
  ChannelCategorization cats{{"S", cat({"Patriot"})}, {"a", cat({"Patriot"})}, {"b", cat({"NER-News & Current Affairs"})}};
  const auto idx = index_rankings({ranking("S", {"a", "b"})});
  const BubbleReport r = category_report({"S"}, {1, 2}, idx, cats, scheme());
  const auto& c1 = r.cells.at({id("Patriot"), 1});
  EXPECT_EQ(c1.n_seeds, 1u);
  EXPECT_DOUBLE_EQ(c1.mean.at(id("Patriot")), 1.0);
  const auto& c2 = r.cells.at({id("Patriot"), 2});
  EXPECT_DOUBLE_EQ(c2.mean.at(id("Patriot")), 0.5);
  EXPECT_DOUBLE_EQ(c2.mean.at(id("News & Current Affairs")), 0.5);
  EXPECT_EQ(r.empty_groups.size(), 10u);
  EXPECT_EQ(r.er_seeds, std::vector<std::string>{"S"});
}

TEST(Report, PerfectBubble) {
  ChannelCategorization cats;
  std::vector<AggregatedRanking> rs;
  std::vector<std::string> seeds;
  for (int s = 0; s < 6; ++s) {
    const std::string seed = "s" + std::to_string(s);
    cats[seed] = cat({"Neo-Nazi"});
    std::vector<std::string> list;
    for (int j = 0; j < 12; ++j) {
      list.push_back("r" + std::to_string(s) + "_" + std::to_string(j));
      cats[list.back()] = cat({"Neo-Nazi"});
    }
    rs.push_back(ranking(seed, list));
    seeds.push_back(seed);
  }
  const BubbleReport r = category_report(seeds, kDefaultKs, index_rankings(rs), cats, scheme());
  for (const auto& a : r.aggregate) {
    EXPECT_DOUBLE_EQ(a.same_er, 1.0);
    EXPECT_DOUBLE_EQ(a.other_er, 0.0);
    EXPECT_DOUBLE_EQ(a.non_er, 0.0);
    EXPECT_EQ(a.n_seeds, 6u);
  }
  const Verdict v = bubble_verdict(r, scheme());
  for (std::size_t k : kDefaultKs) {
    EXPECT_TRUE(v.cells.at({id("Neo-Nazi"), k}));
    EXPECT_TRUE(v.same_er_dominant.at(k));
    EXPECT_TRUE(v.er_outweighs_non_er.at(k));
  }
}

TEST(Report, EvenSplitAndVerdict) {
  ChannelCategorization cats{{"S", cat({"Populist"})},
                             {"a", cat({"Populist"})},
                             {"b", cat({"NER-Sport"})},
                             {"c", cat({"Populist"})},
                             {"d", cat({"NER-Sport"})}};
  const auto idx = index_rankings({ranking("S", {"a", "b", "c", "d"})});
  const BubbleReport r = category_report({"S"}, {2, 4}, idx, cats, scheme());
  for (const auto& a : r.aggregate) {
    EXPECT_DOUBLE_EQ(a.same_er, 0.5);
    EXPECT_DOUBLE_EQ(a.non_er, 0.5);
  }
  const Verdict v = bubble_verdict(r, scheme());
  // Tie between an ER and a general category counts as a bubble.
  EXPECT_TRUE(v.cells.at({id("Populist"), 2}));
  EXPECT_EQ(v.top_related.at({id("Populist"), 2}).size(), 2u);
  EXPECT_TRUE(v.er_outweighs_non_er.at(2));

  cats["c"] = cat({"NER-Sport"});
  const Verdict w = bubble_verdict(category_report({"S"}, {4}, idx, cats, scheme()), scheme());
  EXPECT_FALSE(w.cells.at({id("Populist"), 4}));
  EXPECT_FALSE(w.same_er_dominant.at(4));
  EXPECT_FALSE(w.er_outweighs_non_er.at(4));
}

TEST(Report, OtherErCounted) {
  ChannelCategorization cats{{"S", cat({"Populist"})}, {"a", cat({"Neo-Nazi"})}, {"b", cat({"Populist", "Neo-Nazi"})}};
  const BubbleReport r = category_report({"S"}, {2}, index_rankings({ranking("S", {"a", "b"})}), cats, scheme());
  EXPECT_DOUBLE_EQ(r.aggregate[0].same_er, 0.25);
  EXPECT_DOUBLE_EQ(r.aggregate[0].other_er, 0.75);
  EXPECT_DOUBLE_EQ(r.aggregate[0].non_er, 0.0);
}

TEST(Report, ExclusionLog) {
  ChannelCategorization cats{{"grey", {ChannelOutcome::Kind::GreySheep, {}}},
                             {"ner", cat({"NER-Gaming"})},
                             {"lonely", cat({"Revisionist"})},
                             {"norank", cat({"Revisionist"})},
                             {"u", {ChannelOutcome::Kind::TopicExcluded, {}}}};
  const auto idx = index_rankings({ranking("lonely", {"u"}), ranking("grey", {}), ranking("ner", {})});
  const BubbleReport r = category_report({"grey", "ner", "lonely", "norank", "ghost"}, {1, 3}, idx, cats, scheme());
  std::map<std::string, std::vector<std::string>> why;
  for (const auto& e : r.exclusions) why[e.seed].push_back(e.reason);
  EXPECT_EQ(why.size(), 5u);
  EXPECT_EQ(why.at("ghost"), std::vector<std::string>{"seed has no categorization"});
  EXPECT_EQ(why.at("grey"), std::vector<std::string>{"seed is grey_sheep"});
  EXPECT_EQ(why.at("ner"), std::vector<std::string>{"seed has no ER category"});
  EXPECT_EQ(why.at("norank"), std::vector<std::string>{"no aggregated ranking"});
  EXPECT_EQ(why.at("lonely").size(), 3u);  // k=1, k=3, and the summary line
  EXPECT_TRUE(r.contributing_seeds.empty());
  EXPECT_EQ(r.er_seeds, (std::vector<std::string>{"lonely", "norank"}));
  // Revisionist has seeds but no data; the other ER categories are empty.
  EXPECT_EQ(r.empty_groups.size(), 10u);
  EXPECT_EQ(r.cells.at({id("Revisionist"), 1}).n_seeds, 0u);
  for (const auto& a : r.aggregate) EXPECT_EQ(a.n_seeds, 0u);
  EXPECT_TRUE(bubble_verdict(r, scheme()).cells.empty());
}

TEST(Report, RejectsUnsortedKs) {
  try {
    category_report({}, {3, 1}, {}, {}, scheme());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigInvalid);
  }
}

TEST(Report, MatchesOracleOnRandomInstances) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = testutil::random_bubble(rng, 12, 40);
    const auto f = testutil::to_library(in, scheme());
    const BubbleReport r = category_report(f.seeds, kDefaultKs, f.rankings, f.cats, scheme());
    const auto means = oracle::category_means(in, kDefaultKs);
    for (const auto& [key, cell] : r.cells) {
      auto it = means.find({scheme().key(key.first), key.second});
      if (cell.n_seeds == 0) {
        EXPECT_TRUE(it == means.end());
        continue;
      }
      ASSERT_TRUE(it != means.end());
      ASSERT_EQ(cell.mean.size(), it->second.size());
      for (const auto& [c, v] : cell.mean) EXPECT_NEAR(v, it->second.at(scheme().key(c)), 1e-12);
    }
    std::size_t populated = 0;
    for (const auto& [_, cell] : r.cells) populated += cell.n_seeds > 0;
    EXPECT_EQ(populated, means.size());
    const auto agg = oracle::aggregate_view(in, kDefaultKs);
    for (const auto& a : r.aggregate) {
      auto it = agg.find(a.k);
      if (a.n_seeds == 0) {
        EXPECT_TRUE(it == agg.end());
        continue;
      }
      ASSERT_TRUE(it != agg.end());
      EXPECT_EQ(static_cast<int>(a.n_seeds), it->second.n);
      EXPECT_NEAR(a.same_er, it->second.same, 1e-12);
      EXPECT_NEAR(a.other_er, it->second.other, 1e-12);
      EXPECT_NEAR(a.non_er, it->second.non, 1e-12);
      EXPECT_NEAR(a.same_er + a.other_er + a.non_er, 1.0, 1e-12);
    }
  }
}

TEST(Report, AddingAnErChannelNeverLowersErShare) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto in = testutil::random_bubble(rng, 6, 20);
    auto f = testutil::to_library(in, scheme());
    const auto before = category_report(f.seeds, {10}, f.rankings, f.cats, scheme());
    // Promote an uncategorized channel to an ER category wherever it ranks.
    for (const auto& [seed, r] : f.rankings)
      for (const auto& c : r.ranked)
        if (!f.cats.count(c)) f.cats[c] = cat({"Patriot"});
    const auto after = category_report(f.seeds, {10}, f.rankings, f.cats, scheme());
    // Only meaningful when the same seeds contribute in both.
    if (before.aggregate[0].n_seeds != after.aggregate[0].n_seeds || before.aggregate[0].n_seeds == 0) continue;
    EXPECT_GE(after.aggregate[0].same_er + after.aggregate[0].other_er,
              before.aggregate[0].same_er + before.aggregate[0].other_er - 1e-12);
  }
}

TEST(Cycle, RingAndIsolated) {
  std::vector<AggregatedRanking> ring;
  std::vector<std::string> seeds;
  for (int i = 0; i < 5; ++i) {
    seeds.push_back("s" + std::to_string(i));
    ring.push_back(ranking(seeds.back(), {"s" + std::to_string((i + 1) % 5), "x"}));
  }
  const CycleStat c = cycle_stat(seeds, index_rankings(ring), 10);
  EXPECT_EQ(c.numerator, 5u);
  EXPECT_EQ(c.denominator, 5u);
  EXPECT_DOUBLE_EQ(c.fraction, 1.0);

  std::vector<AggregatedRanking> iso;
  for (const auto& s : seeds) iso.push_back(ranking(s, {s, "x", "y"}));  // self-appearance does not count
  EXPECT_DOUBLE_EQ(cycle_stat(seeds, index_rankings(iso), 10).fraction, 0.0);

  // Appearances beyond k_max are ignored.
  std::vector<AggregatedRanking> deep{ranking("a", {"x", "y", "b"}), ranking("b", {"x"})};
  EXPECT_EQ(cycle_stat({"a", "b"}, index_rankings(deep), 2).numerator, 0u);
  EXPECT_EQ(cycle_stat({"a", "b"}, index_rankings(deep), 3).numerator, 1u);
  EXPECT_EQ(cycle_stat({}, {}, 3).denominator, 0u);
}

TEST(Output, DeterministicAndRoundTrips) {
  std::mt19937_64 rng(3);
  const auto in = testutil::random_bubble(rng, 15, 40);
  const auto f = testutil::to_library(in, scheme());
  const BubbleReport r = category_report(f.seeds, kDefaultKs, f.rankings, f.cats, scheme());
  const Verdict v = bubble_verdict(r, scheme());
  const CycleStat c = cycle_stat(r.er_seeds, f.rankings, 10);
  testutil::TempDir a, b;
  write_bubble_outputs(r, v, c, scheme(), a.path());
  write_bubble_outputs(category_report(f.seeds, kDefaultKs, f.rankings, f.cats, scheme()), v, c, scheme(), b.path());
  EXPECT_EQ(pipeline::detail::hash_tree(a.path()), pipeline::detail::hash_tree(b.path()));
  EXPECT_TRUE(std::filesystem::exists(a / "plots/aggregate.csv"));

  const nlohmann::json j = pipeline::stages::report_to_json(r, v, c, scheme());
  BubbleReport r2;
  Verdict v2;
  CycleStat c2;
  pipeline::stages::report_from_json(j, scheme(), r2, v2, c2);
  EXPECT_EQ(render_report(r2, v2, c2, scheme()), render_report(r, v, c, scheme()));
  EXPECT_EQ(pipeline::stages::report_to_json(r2, v2, c2, scheme()), j);
}

TEST(Output, CutoffOnlyAffectsListing) {
  ChannelCategorization cats{{"S", cat({"Populist"})}};
  std::vector<std::string> list;
  for (int i = 0; i < 20; ++i) {
    list.push_back("r" + std::to_string(i));
    cats[list.back()] = i == 0 ? cat({"NER-Gaming"}) : cat({"Populist"});
  }
  const BubbleReport r = category_report({"S"}, {20}, index_rankings({ranking("S", list)}), cats, scheme());
  const Verdict v = bubble_verdict(r, scheme());
  const CycleStat c = cycle_stat(r.er_seeds, {}, 20);
  EXPECT_EQ(render_report(r, v, c, scheme(), 0.06).find("NER-Gaming"), std::string::npos);
  EXPECT_NE(render_report(r, v, c, scheme(), 0.01).find("NER-Gaming"), std::string::npos);
  EXPECT_DOUBLE_EQ(r.cells.at({id("Populist"), 20}).mean.at(id("NER-Gaming")), 0.05);
}
