#pragma once

// Per-seed aggregation of per-video related rankings into one related-channel
// ranking, via the first left singular vector of the column-normalized rank
// matrix.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "filterbubble/corpus.hpp"
#include "filterbubble/error.hpp"
#include "filterbubble/svd.hpp"

namespace filterbubble {

inline constexpr std::size_t kDefaultTopK = 10;
inline constexpr double kScoreTieTolerance = 1e-12;
inline constexpr double kDegenerateGap = 1e-9;

/// Score: a channel at rank p gets m + 1 - p, absent channels 0 (higher is
/// better). RawRank: the rank p itself, absent channels m + 1.
enum class ScoreMode { Score, RawRank };

inline std::string to_string(ScoreMode m) { return m == ScoreMode::Score ? "score" : "raw_rank"; }
inline ScoreMode parse_score_mode(const std::string& s) {
  if (s == "score") return ScoreMode::Score;
  if (s == "raw_rank") return ScoreMode::RawRank;
  throw Error(ErrorCode::ConfigInvalid, "score_mode: expected score|raw_rank, got " + s);
}

struct RankMatrix {
  std::string seed;
  std::vector<std::string> channels;  // rows, lexicographic
  std::vector<std::string> videos;    // columns, sample order
  Eigen::MatrixXd values;             // columns L2-normalized
};

struct AggregatedRanking {
  std::string seed;
  std::vector<std::string> ranked;
  std::vector<double> scores;
};

/// Per-video channel ranks: the related videos of one seed video collapse to
/// their uploaders, each keeping its best position, then channels are ranked
/// 1..c in order of that best position.
inline std::map<std::string, int> channel_ranks(const Corpus& corpus, const RelatedRanking& ranking) {
  std::map<std::string, int> best;
  for (const auto& e : ranking.entries) {
    const VideoMeta* v = corpus.find_video(e.related_video);
    if (!v) throw Error(ErrorCode::DanglingReference, e.related_video);
    auto [it, inserted] = best.emplace(v->uploader, e.position);
    if (!inserted) it->second = std::min(it->second, e.position);
  }
  std::vector<std::pair<int, std::string>> order;
  for (const auto& [ch, p] : best) order.emplace_back(p, ch);
  std::sort(order.begin(), order.end());
  std::map<std::string, int> ranks;
  for (std::size_t i = 0; i < order.size(); ++i) ranks[order[i].second] = static_cast<int>(i) + 1;
  return ranks;
}

/// Builds the related-channel x video rank matrix over the sampled videos that
/// have a related ranking.
inline RankMatrix build_rank_matrix(const Corpus& corpus, const std::string& seed, const VideoSample& sample,
                                    ScoreMode mode = ScoreMode::Score) {
  const Channel* ch = corpus.find_channel(seed);
  if (!ch || ch->kind != ChannelKind::Seed) throw Error(ErrorCode::UnknownSeed, seed);
  if (sample.channel != seed) throw Error(ErrorCode::UnknownSeed, "sample belongs to " + sample.channel);

  RankMatrix R;
  R.seed = seed;
  std::vector<std::map<std::string, int>> per_video;
  std::set<std::string> channels;
  for (const auto& vid : sample.videos) {
    const RelatedRanking* ranking = corpus.ranking_for(vid);
    if (!ranking || ranking->entries.empty()) continue;
    per_video.push_back(channel_ranks(corpus, *ranking));
    R.videos.push_back(vid);
    for (const auto& [c, _] : per_video.back()) channels.insert(c);
  }
  if (per_video.empty()) throw Error(ErrorCode::EmptySample, "no sampled video of " + seed + " has related videos");

  R.channels.assign(channels.begin(), channels.end());
  const auto m = static_cast<Eigen::Index>(R.channels.size());
  const auto n = static_cast<Eigen::Index>(per_video.size());
  R.values.resize(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      auto it = per_video[j].find(R.channels[i]);
      const bool present = it != per_video[j].end();
      if (mode == ScoreMode::Score) R.values(i, j) = present ? static_cast<double>(m + 1 - it->second) : 0.0;
      else R.values(i, j) = present ? static_cast<double>(it->second) : static_cast<double>(m + 1);
    }
    const double norm = R.values.col(j).norm();
    if (norm > 0.0) R.values.col(j) /= norm;
  }
  return R;
}

/// Orders ids by descending score; scores within kScoreTieTolerance (relative
/// to the largest magnitude) of a group's leader tie and are ordered by id.
inline void sort_by_score(std::vector<std::string>& ids, std::vector<double>& scores) {
  std::vector<std::size_t> idx(ids.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  double scale = 0.0;
  for (double s : scores) scale = std::max(scale, std::abs(s));
  const double eps = kScoreTieTolerance * std::max(scale, 1e-300);
  for (std::size_t g = 0; g < idx.size();) {
    std::size_t end = g + 1;
    while (end < idx.size() && scores[idx[g]] - scores[idx[end]] <= eps) ++end;
    std::sort(idx.begin() + static_cast<std::ptrdiff_t>(g), idx.begin() + static_cast<std::ptrdiff_t>(end),
              [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    g = end;
  }
  std::vector<std::string> out_ids;
  std::vector<double> out_scores;
  for (std::size_t i : idx) {
    out_ids.push_back(ids[i]);
    out_scores.push_back(scores[i]);
  }
  ids = std::move(out_ids);
  scores = std::move(out_scores);
}

/// Related channels in descending order of the first left singular vector of
/// R (oriented non-negative).
inline AggregatedRanking aggregate(const RankMatrix& R) {
  if (R.values.size() == 0 || R.values.isZero(0.0)) throw Error(ErrorCode::DegenerateMatrix, "rank matrix of " + R.seed + " is all zero");
  const SvdResult svd = truncated_svd(R.values, std::min(R.values.rows(), R.values.cols()));
  Eigen::Index top = 1;
  while (top < svd.S.size() && svd.S[top] >= svd.S[0] * (1.0 - kDegenerateGap)) ++top;
  Eigen::VectorXd u = svd.U.col(0);
  if (top > 1) {
    // Repeated top singular value: project the all-ones vector onto its subspace.
    const auto Ut = svd.U.leftCols(top);
    const Eigen::VectorXd proj = Ut * (Ut.transpose() * Eigen::VectorXd::Ones(Ut.rows()));
    if (proj.norm() > kDegenerateGap) u = proj.normalized();
  }
  if (u.sum() < 0.0) u = -u;
  AggregatedRanking out;
  out.seed = R.seed;
  out.ranked = R.channels;
  out.scores.assign(u.data(), u.data() + u.size());
  sort_by_score(out.ranked, out.scores);
  return out;
}

/// First k channels after removing the excluded ones; empty means the seed is
/// skipped at this k.
inline std::vector<std::string> top_k(const AggregatedRanking& ranking, std::size_t k,
                                      const std::set<std::string>& exclude = {}) {
  std::vector<std::string> out;
  for (const auto& c : ranking.ranked) {
    if (out.size() >= k) break;
    if (!exclude.count(c)) out.push_back(c);
  }
  return out;
}

/// Lines "seed <TAB> position <TAB> related_channel <TAB> score".
inline void write_rankings(const std::vector<AggregatedRanking>& rankings, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& r : rankings)
    for (std::size_t i = 0; i < r.ranked.size(); ++i)
      out << r.seed << '\t' << i + 1 << '\t' << r.ranked[i] << '\t' << r.scores[i] << '\n';
}

inline std::vector<AggregatedRanking> read_rankings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<AggregatedRanking> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string seed, pos, channel, score;
    if (!std::getline(ss, seed, '\t') || !std::getline(ss, pos, '\t') || !std::getline(ss, channel, '\t') ||
        !std::getline(ss, score, '\t'))
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + ": " + line);
    if (out.empty() || out.back().seed != seed) out.push_back({seed, {}, {}});
    if (std::stoul(pos) != out.back().ranked.size() + 1)
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + ": positions out of order for " + seed);
    out.back().ranked.push_back(channel);
    out.back().scores.push_back(std::stod(score));
  }
  return out;
}

}  // namespace filterbubble
