#include <gtest/gtest.h>

#include <random>

#include "filterbubble/rankagg.hpp"
#include "test_util.hpp"

using namespace filterbubble;
using Lists = std::vector<std::vector<std::string>>;

namespace {

RankMatrix matrix_for(const Lists& lists, ScoreMode mode = ScoreMode::Score) {
  const Corpus c = testutil::corpus_from_lists(lists);
  return build_rank_matrix(c, "S", testutil::all_videos(c), mode);
}

AggregatedRanking run(const Lists& lists) { return aggregate(matrix_for(lists)); }

Lists random_lists(std::mt19937_64& rng, int max_m = 8, int max_n = 5) {
  const int m = 1 + static_cast<int>(rng() % max_m), n = 1 + static_cast<int>(rng() % max_n);
  std::vector<std::string> pool;
  for (int i = 0; i < m; ++i) pool.push_back(std::string(1, static_cast<char>('A' + i)));
  Lists lists;
  for (int j = 0; j < n; ++j) {
    std::shuffle(pool.begin(), pool.end(), rng);
    lists.emplace_back(pool.begin(), pool.begin() + 1 + static_cast<long>(rng() % m));
  }
  return lists;
}

}  // namespace

TEST(RankMatrix, ScoreFormula) {
  const RankMatrix R = matrix_for({{"A", "B"}});
  ASSERT_EQ(R.channels, (std::vector<std::string>{"A", "B"}));
  // Pre-normalization column [2, 1].
  EXPECT_NEAR(R.values(0, 0), 2 / std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(R.values(1, 0), 1 / std::sqrt(5.0), 1e-15);
}

TEST(RankMatrix, AbsentChannelsGetZero) {
  const RankMatrix R = matrix_for({{"A", "B"}, {"B"}});
  EXPECT_EQ(R.values(0, 1), 0.0);
  EXPECT_GT(R.values(1, 1), 0.0);
}

TEST(RankMatrix, RawRankFill) {
  const RankMatrix R = matrix_for({{"A", "B"}, {"B"}}, ScoreMode::RawRank);
  // m = 2, absent -> 3: column 2 is [3, 1] before normalization.
  EXPECT_NEAR(R.values(0, 1), 3 / std::sqrt(10.0), 1e-15);
  EXPECT_NEAR(R.values(1, 1), 1 / std::sqrt(10.0), 1e-15);
}

TEST(RankMatrix, BestRankPerUploader) {
  // C uploads the videos at positions 3 and 7; its best position wins.
  const Lists lists{{"A", "B", "C", "D", "E", "F", "C"}};
  const Corpus c = testutil::corpus_from_lists(lists);
  const auto ranks = channel_ranks(c, *c.ranking_for("S_v0"));
  EXPECT_EQ(ranks.at("C"), 3);
  EXPECT_EQ(ranks.at("D"), 4);
  EXPECT_EQ(ranks.size(), 6u);
  const RankMatrix R = build_rank_matrix(c, "S", testutil::all_videos(c));
  EXPECT_EQ(R.channels.size(), 6u);
  EXPECT_GT(R.values.minCoeff(), 0.0);
}

TEST(RankMatrix, Errors) {
  const Corpus c = testutil::corpus_from_lists({{"A"}});
  EXPECT_THROW(build_rank_matrix(c, "A", VideoSample{"A", {}, 0}), Error);
  try {
    build_rank_matrix(c, "S", VideoSample{"S", {}, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySample);
  }
}

TEST(Aggregate, SingleVideoIdentity) {
  const Lists lists{{"D", "A", "C", "B"}};
  EXPECT_EQ(run(lists).ranked, lists[0]);
}

TEST(Aggregate, IdenticalColumns) {
  EXPECT_EQ(run({{"C", "A", "B"}, {"C", "A", "B"}, {"C", "A", "B"}}).ranked, (std::vector<std::string>{"C", "A", "B"}));
}

TEST(Aggregate, HandInstanceMatchesOracle) {
  const Lists lists{{"A", "B", "C"}, {"B", "A", "D"}, {"B", "C"}};
  const auto o = oracle::aggregate(lists);
  const AggregatedRanking r = run(lists);
  EXPECT_EQ(r.ranked, o.order);
  for (std::size_t i = 0; i < o.score.size(); ++i) EXPECT_NEAR(r.scores[i], o.score[i], 1e-10);
}

TEST(Aggregate, ScoresNonIncreasingAndTiesLexicographic) {
  const AggregatedRanking r = run({{"B", "A"}, {"A", "B"}});
  EXPECT_EQ(r.ranked, (std::vector<std::string>{"A", "B"}));
  for (std::size_t i = 1; i < r.scores.size(); ++i) EXPECT_GE(r.scores[i - 1], r.scores[i]);
}

TEST(Aggregate, PermutationEquivariance) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Lists lists = random_lists(rng);
    const RankMatrix R = matrix_for(lists);
    std::vector<int> perm(R.channels.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    RankMatrix P = R;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      P.channels[i] = R.channels[perm[i]];
      P.values.row(static_cast<Eigen::Index>(i)) = R.values.row(perm[i]);
    }
    EXPECT_EQ(aggregate(R).ranked, aggregate(P).ranked);
  }
}

TEST(Aggregate, ColumnScaleInvariance) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> scale(0.1, 10);
  for (int trial = 0; trial < 200; ++trial) {
    const RankMatrix R = matrix_for(random_lists(rng));
    RankMatrix S = R;
    for (Eigen::Index j = 0; j < S.values.cols(); ++j) {
      S.values.col(j) *= scale(rng);
      S.values.col(j).normalize();
    }
    EXPECT_EQ(aggregate(R).ranked, aggregate(S).ranked);
  }
}

TEST(Aggregate, UnanimousFirstWins) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Lists lists = random_lists(rng);
    for (auto& l : lists) {
      l.erase(std::remove(l.begin(), l.end(), "Z"), l.end());
      l.insert(l.begin(), "Z");
      if (l.size() > 10) l.resize(10);
    }
    EXPECT_EQ(run(lists).ranked.front(), "Z");
  }
}

TEST(Aggregate, DegenerateMatrix) {
  RankMatrix R;
  R.seed = "S";
  R.channels = {"A"};
  R.values = Eigen::MatrixXd::Zero(1, 1);
  try {
    aggregate(R);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateMatrix);
  }
}

TEST(TopK, FilterThenTruncate) {
  AggregatedRanking r{"S", {"A", "B", "C"}, {3, 2, 1}};
  EXPECT_EQ(top_k(r, 2, {"B"}), (std::vector<std::string>{"A", "C"}));
  EXPECT_TRUE(top_k(r, 2, {"A", "B", "C"}).empty());
  EXPECT_EQ(top_k(r, 10).size(), 3u);
}

TEST(Rankings, RoundTrip) {
  testutil::TempDir dir;
  std::vector<AggregatedRanking> rs{run({{"A", "B", "C"}, {"B", "A"}}), run({{"C"}})};
  rs[1].seed = "T";
  write_rankings(rs, dir / "r.tsv");
  const auto back = read_rankings(dir / "r.tsv");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].seed, rs[i].seed);
    EXPECT_EQ(back[i].ranked, rs[i].ranked);
    EXPECT_EQ(back[i].scores, rs[i].scores);
  }
}

TEST(ScoreModeParse, Values) {
  EXPECT_EQ(parse_score_mode("score"), ScoreMode::Score);
  EXPECT_EQ(parse_score_mode("raw_rank"), ScoreMode::RawRank);
  EXPECT_THROW(parse_score_mode("borda"), Error);
}

TEST(Aggregate, RepeatedTopSingularValueIsCanonical) {
  // Orthogonal equal-norm columns: every unit vector in their span is a top
  // singular vector; the ones-projection interleaves the lists.
  const AggregatedRanking r = run({{"A", "B"}, {"C", "D"}});
  EXPECT_EQ(r.ranked, (std::vector<std::string>{"A", "C", "B", "D"}));
  EXPECT_NEAR(r.scores[0], r.scores[1], 1e-12);
  EXPECT_NEAR(3 * r.scores[0], 4 * r.scores[2], 1e-12);  // scores 4 and 3 with m = 4
  EXPECT_EQ(run({{"C", "D"}, {"A", "B"}}).ranked, r.ranked);
}
