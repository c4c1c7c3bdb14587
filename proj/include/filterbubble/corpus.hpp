#pragma once

// Channel / video / related-ranking dataset: loading, validation, sampling.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "filterbubble/error.hpp"

namespace filterbubble {

inline constexpr const char* kSchemaVersion = "1";
inline constexpr std::size_t kMaxRelatedPerVideo = 10;
inline constexpr std::size_t kDefaultSampleCap = 50;
inline constexpr std::size_t kDefaultRetrievalCap = 1000;

enum class ChannelKind { Seed, Related };

inline std::string to_string(ChannelKind k) { return k == ChannelKind::Seed ? "seed" : "related"; }

struct Channel {
  std::string id;
  ChannelKind kind = ChannelKind::Seed;
  std::optional<std::string> language_tag;
  // Seed channel that was also returned as some seed video's related uploader.
  bool also_related = false;

  bool operator==(const Channel&) const = default;
};

struct VideoMeta {
  std::string id;
  std::string uploader;
  std::string title;
  std::string description;
  std::vector<std::string> keywords;

  bool operator==(const VideoMeta&) const = default;
};

struct RankEntry {
  int position = 0;
  std::string related_video;

  bool operator==(const RankEntry&) const = default;
};

struct RelatedRanking {
  std::string seed_video;
  std::vector<RankEntry> entries;

  bool operator==(const RelatedRanking&) const = default;
};

struct VideoSample {
  std::string channel;
  std::vector<std::string> videos;
  std::uint64_t rng_seed = 0;

  bool operator==(const VideoSample&) const = default;
};

/// Immutable, referentially closed dataset. Construct through
/// Corpus::from_records or load_corpus.
class Corpus {
 public:
  Corpus() = default;

  static Corpus from_records(std::vector<Channel> channel_records, std::vector<VideoMeta> videos,
                             std::vector<RelatedRanking> rankings);

  const std::vector<Channel>& channels() const { return channels_; }
  const std::vector<VideoMeta>& videos() const { return videos_; }
  const std::vector<RelatedRanking>& rankings() const { return rankings_; }

  const Channel* find_channel(const std::string& id) const {
    auto it = channel_index_.find(id);
    return it == channel_index_.end() ? nullptr : &channels_[it->second];
  }
  const VideoMeta* find_video(const std::string& id) const {
    auto it = video_index_.find(id);
    return it == video_index_.end() ? nullptr : &videos_[it->second];
  }
  const RelatedRanking* ranking_for(const std::string& video_id) const {
    auto it = ranking_index_.find(video_id);
    return it == ranking_index_.end() ? nullptr : &rankings_[it->second];
  }
  /// Indices into videos() of the channel's uploads, in file order.
  const std::vector<std::size_t>& uploads(const std::string& channel) const {
    static const std::vector<std::size_t> kNone;
    auto it = uploads_.find(channel);
    return it == uploads_.end() ? kNone : it->second;
  }

  bool operator==(const Corpus& o) const {
    return channels_ == o.channels_ && videos_ == o.videos_ && rankings_ == o.rankings_;
  }

 private:
  std::vector<Channel> channels_;
  std::vector<VideoMeta> videos_;
  std::vector<RelatedRanking> rankings_;
  std::unordered_map<std::string, std::size_t> channel_index_;
  std::unordered_map<std::string, std::size_t> video_index_;
  std::unordered_map<std::string, std::size_t> ranking_index_;
  std::unordered_map<std::string, std::vector<std::size_t>> uploads_;
};

inline Corpus Corpus::from_records(std::vector<Channel> channel_records, std::vector<VideoMeta> videos,
                                   std::vector<RelatedRanking> rankings) {
  Corpus c;
  // A channel listed both as seed and related collapses into one seed record.
  for (auto& rec : channel_records) {
    auto it = c.channel_index_.find(rec.id);
    if (it == c.channel_index_.end()) {
      c.channel_index_.emplace(rec.id, c.channels_.size());
      c.channels_.push_back(std::move(rec));
      continue;
    }
    Channel& existing = c.channels_[it->second];
    if (existing.kind == rec.kind || existing.also_related) throw Error(ErrorCode::DuplicateId, rec.id);
    if (rec.kind == ChannelKind::Seed) {
      existing.kind = ChannelKind::Seed;
      if (rec.language_tag) existing.language_tag = rec.language_tag;
    } else if (!existing.language_tag) {
      existing.language_tag = rec.language_tag;
    }
    existing.also_related = true;
  }

  c.videos_ = std::move(videos);
  for (std::size_t i = 0; i < c.videos_.size(); ++i) {
    const auto& v = c.videos_[i];
    if (!c.video_index_.emplace(v.id, i).second) throw Error(ErrorCode::DuplicateId, v.id);
    if (!c.channel_index_.count(v.uploader)) throw Error(ErrorCode::DanglingReference, v.uploader);
    c.uploads_[v.uploader].push_back(i);
  }

  c.rankings_ = std::move(rankings);
  for (std::size_t i = 0; i < c.rankings_.size(); ++i) {
    const auto& r = c.rankings_[i];
    if (!c.video_index_.count(r.seed_video)) throw Error(ErrorCode::DanglingReference, r.seed_video);
    if (!c.ranking_index_.emplace(r.seed_video, i).second) throw Error(ErrorCode::DuplicateId, r.seed_video);
    if (r.entries.size() > kMaxRelatedPerVideo)
      throw Error(ErrorCode::MalformedRecord, "ranking for " + r.seed_video + " has more than 10 entries");
    std::vector<bool> seen(r.entries.size() + 1, false);
    for (const auto& e : r.entries) {
      if (e.position < 1 || static_cast<std::size_t>(e.position) > r.entries.size() || seen[e.position])
        throw Error(ErrorCode::MalformedRecord,
                    "ranking for " + r.seed_video + ": positions must be 1..len without gaps or duplicates");
      seen[e.position] = true;
      if (!c.video_index_.count(e.related_video)) throw Error(ErrorCode::DanglingReference, e.related_video);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// File formats

struct CorpusFiles {
  std::filesystem::path channels;
  std::filesystem::path videos;
  std::filesystem::path related;
};

struct Manifest {
  CorpusFiles files;
  std::string schema_version;
};

namespace detail {

inline std::string where(const std::filesystem::path& file, std::size_t line) {
  return file.filename().string() + ":" + std::to_string(line);
}

template <class Fn>
void for_each_record(const std::filesystem::path& file, Fn&& fn) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::MalformedRecord, where(file, lineno) + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::MalformedRecord, where(file, lineno) + ": not an object");
    try {
      fn(j, lineno);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, where(file, lineno) + ": " + e.what());
    }
  }
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::filesystem::path& file,
                                     std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::MalformedRecord, where(file, line) + ": missing field '" + key + "'");
  return *it;
}

inline std::vector<Channel> parse_channels(const std::filesystem::path& file) {
  std::vector<Channel> out;
  for_each_record(file, [&](const nlohmann::json& j, std::size_t line) {
    Channel c;
    c.id = require(j, "id", file, line).get<std::string>();
    const auto kind = require(j, "kind", file, line).get<std::string>();
    if (kind == "seed") c.kind = ChannelKind::Seed;
    else if (kind == "related") c.kind = ChannelKind::Related;
    else throw Error(ErrorCode::MalformedRecord, where(file, line) + ": unknown kind '" + kind + "'");
    if (auto it = j.find("language_tag"); it != j.end() && !it->is_null()) c.language_tag = it->get<std::string>();
    out.push_back(std::move(c));
  });
  return out;
}

inline std::vector<VideoMeta> parse_videos(const std::filesystem::path& file) {
  std::vector<VideoMeta> out;
  for_each_record(file, [&](const nlohmann::json& j, std::size_t line) {
    VideoMeta v;
    v.id = require(j, "id", file, line).get<std::string>();
    v.uploader = require(j, "uploader", file, line).get<std::string>();
    v.title = require(j, "title", file, line).get<std::string>();
    v.description = require(j, "description", file, line).get<std::string>();
    v.keywords = require(j, "keywords", file, line).get<std::vector<std::string>>();
    out.push_back(std::move(v));
  });
  return out;
}

inline std::vector<RelatedRanking> parse_related(const std::filesystem::path& file) {
  std::vector<RelatedRanking> out;
  for_each_record(file, [&](const nlohmann::json& j, std::size_t line) {
    RelatedRanking r;
    r.seed_video = require(j, "seed_video", file, line).get<std::string>();
    for (const auto& e : require(j, "entries", file, line)) {
      if (!e.is_array() || e.size() != 2)
        throw Error(ErrorCode::MalformedRecord, where(file, line) + ": entry must be [position, video_id]");
      r.entries.push_back({e[0].get<int>(), e[1].get<std::string>()});
    }
    std::sort(r.entries.begin(), r.entries.end(),
              [](const RankEntry& a, const RankEntry& b) { return a.position < b.position; });
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace detail

/// Parses the three record files (concurrently) and validates the result.
inline Corpus load_corpus(const CorpusFiles& files, const std::string& schema_version) {
  if (schema_version != kSchemaVersion)
    throw Error(ErrorCode::SchemaMismatch,
                "schema_version '" + schema_version + "' (supported: " + kSchemaVersion + ")");
  auto channels = std::async(std::launch::async, detail::parse_channels, files.channels);
  auto videos = std::async(std::launch::async, detail::parse_videos, files.videos);
  auto related = std::async(std::launch::async, detail::parse_related, files.related);
  auto c = channels.get();
  auto v = videos.get();
  auto r = related.get();
  return Corpus::from_records(std::move(c), std::move(v), std::move(r));
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    const auto dir = path.parent_path();
    Manifest m;
    m.schema_version = j.at("schema_version").get<std::string>();
    m.files.channels = dir / j.at("channels").get<std::string>();
    m.files.videos = dir / j.at("videos").get<std::string>();
    m.files.related = dir / j.at("related").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, path.filename().string() + ": " + e.what());
  }
}

inline Corpus load_corpus(const std::filesystem::path& manifest_path) {
  const auto m = load_manifest(manifest_path);
  return load_corpus(m.files, m.schema_version);
}

/// Writes manifest.json plus the three record files into dir. A seed channel
/// flagged also_related is written as a seed line followed by a related line,
/// which load_corpus folds back into the same record.
inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("channels.jsonl");
    for (const auto& c : corpus.channels()) {
      nlohmann::json j{{"id", c.id}, {"kind", to_string(c.kind)}};
      if (c.language_tag) j["language_tag"] = *c.language_tag;
      out << j.dump() << '\n';
      if (c.also_related) {
        nlohmann::json r{{"id", c.id}, {"kind", "related"}};
        out << r.dump() << '\n';
      }
    }
  }
  {
    auto out = open("videos.jsonl");
    for (const auto& v : corpus.videos())
      out << nlohmann::json{{"id", v.id},
                            {"uploader", v.uploader},
                            {"title", v.title},
                            {"description", v.description},
                            {"keywords", v.keywords}}
                 .dump()
          << '\n';
  }
  {
    auto out = open("related.jsonl");
    for (const auto& r : corpus.rankings()) {
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& e : r.entries) entries.push_back({e.position, e.related_video});
      out << nlohmann::json{{"seed_video", r.seed_video}, {"entries", entries}}.dump() << '\n';
    }
  }
  auto out = open("manifest.json");
  out << nlohmann::json{{"schema_version", kSchemaVersion},
                        {"channels", "channels.jsonl"},
                        {"videos", "videos.jsonl"},
                        {"related", "related.jsonl"}}
             .dump(2)
      << '\n';
}

// ---------------------------------------------------------------------------
// Sampling

namespace detail {
// Unbiased draw in [0, n) from the standardized mt19937_64 stream, so samples
// are identical across standard library implementations.
inline std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t threshold = (std::numeric_limits<std::uint64_t>::max() - n + 1) % n;
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) return r % n;
  }
}
}  // namespace detail

/// Up to `cap` uploads of `channel`. The first `retrieval_cap` uploads in file
/// order form the candidate pool; if the pool fits under the cap it is
/// returned whole, otherwise a uniform subset (kept in file order).
inline VideoSample sample_videos(const Corpus& corpus, const std::string& channel, std::size_t cap,
                                 std::uint64_t rng_seed,
                                 std::size_t retrieval_cap = std::numeric_limits<std::size_t>::max()) {
  if (!corpus.find_channel(channel)) throw Error(ErrorCode::UnknownChannel, channel);
  if (cap < 1) throw Error(ErrorCode::ConfigInvalid, "sample cap must be >= 1");
  const auto& all = corpus.uploads(channel);
  std::vector<std::size_t> pool(all.begin(), all.begin() + std::min(all.size(), retrieval_cap));

  VideoSample s{channel, {}, rng_seed};
  if (pool.size() > cap) {
    std::mt19937_64 rng(rng_seed);
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t j = i + detail::bounded_draw(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(cap);
    std::sort(pool.begin(), pool.end());
  }
  for (std::size_t idx : pool) s.videos.push_back(corpus.videos()[idx].id);
  return s;
}

}  // namespace filterbubble
