#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "filterbubble/bubble.hpp"
#include "filterbubble/corpus.hpp"
#include "oracles.hpp"

namespace testutil {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("fbub_test_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Seed "S" with one video per list; lists[j] names the uploader channels of
/// the related videos of S_v<j>, in position order.
inline filterbubble::Corpus corpus_from_lists(const std::vector<std::vector<std::string>>& lists,
                                              const std::string& seed = "S") {
  using namespace filterbubble;
  std::vector<Channel> channels{{seed, ChannelKind::Seed, "en", false}};
  std::vector<VideoMeta> videos;
  std::vector<RelatedRanking> rankings;
  std::map<std::string, int> uploads;
  for (std::size_t j = 0; j < lists.size(); ++j) {
    const std::string sv = seed + "_v" + std::to_string(j);
    videos.push_back({sv, seed, "", "", {}});
    RelatedRanking r{sv, {}};
    for (std::size_t p = 0; p < lists[j].size(); ++p) {
      const std::string& ch = lists[j][p];
      if (!uploads.count(ch)) channels.push_back({ch, ChannelKind::Related, std::nullopt, false});
      const std::string vid = ch + "_v" + std::to_string(uploads[ch]++);
      videos.push_back({vid, ch, "", "", {}});
      r.entries.push_back({static_cast<int>(p) + 1, vid});
    }
    rankings.push_back(std::move(r));
  }
  return Corpus::from_records(std::move(channels), std::move(videos), std::move(rankings));
}

inline filterbubble::VideoSample all_videos(const filterbubble::Corpus& c, const std::string& seed = "S") {
  return filterbubble::sample_videos(c, seed, 1000, 0);
}

inline oracle::Dense to_dense(const Eigen::MatrixXd& M) {
  oracle::Dense D(static_cast<int>(M.rows()), static_cast<int>(M.cols()));
  for (int r = 0; r < D.rows; ++r)
    for (int c = 0; c < D.cols; ++c) D(r, c) = M(r, c);
  return D;
}

inline double max_abs_diff(const Eigen::MatrixXd& M, const oracle::Dense& D) {
  double d = 0;
  for (int r = 0; r < D.rows; ++r)
    for (int c = 0; c < D.cols; ++c) d = std::max(d, std::abs(M(r, c) - D(r, c)));
  return d;
}

struct BubbleFixture {
  filterbubble::RankingIndex rankings;
  filterbubble::ChannelCategorization cats;
  std::vector<std::string> seeds;
};

/// Library view of an oracle instance; rankings get strictly decreasing scores.
inline BubbleFixture to_library(const oracle::BubbleInput& in, const filterbubble::CategoryScheme& scheme) {
  using namespace filterbubble;
  BubbleFixture f;
  for (const auto& [seed, list] : in.ranking) {
    AggregatedRanking r{seed, list, {}};
    for (std::size_t i = 0; i < list.size(); ++i) r.scores.push_back(1.0 - 0.001 * static_cast<double>(i));
    f.rankings.emplace(seed, r);
    f.seeds.push_back(seed);
  }
  for (const auto& [ch, names] : in.cats) {
    ChannelOutcome o{ChannelOutcome::Kind::Categorized, {}};
    for (const auto& n : names) o.categories.push_back(scheme.find(n));
    std::sort(o.categories.begin(), o.categories.end());
    f.cats[ch] = o;
  }
  return f;
}

/// Random seeds and related channels over the standard scheme; roughly a
/// fifth of the related channels stay uncategorized.
inline oracle::BubbleInput random_bubble(std::mt19937_64& rng, int n_seeds, int n_related) {
  const auto scheme = filterbubble::CategoryScheme::standard();
  oracle::BubbleInput in;
  for (auto id : scheme.ids(filterbubble::Family::ER)) in.er.insert(scheme.key(id));
  std::uniform_int_distribution<std::size_t> cat(0, scheme.size() - 1);
  std::uniform_int_distribution<int> n_cats(1, 3), pick(0, n_related - 1), len(0, 15), coin(0, 4);
  auto draw = [&](bool force) {
    std::set<std::string> cs;
    const int n = n_cats(rng);
    for (int i = 0; i < n; ++i) cs.insert(scheme.key(static_cast<filterbubble::CategoryId>(cat(rng))));
    if (force) cs.insert(scheme.key(scheme.ids(filterbubble::Family::ER)[cat(rng) % 11]));
    return std::vector<std::string>(cs.begin(), cs.end());
  };
  for (int r = 0; r < n_related; ++r)
    if (coin(rng)) in.cats["r" + std::to_string(r)] = draw(false);
  for (int s = 0; s < n_seeds; ++s) {
    const std::string seed = "s" + std::to_string(s);
    in.cats[seed] = draw(coin(rng) != 0);
    std::set<std::string> used;
    std::vector<std::string> list;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      std::string c = "r" + std::to_string(pick(rng));
      if (used.insert(c).second) list.push_back(c);
    }
    in.ranking[seed] = list;
  }
  return in;
}

}  // namespace testutil
