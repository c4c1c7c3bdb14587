#pragma once

// Synthetic corpus generator and the matching prefix-vote topic labeler.
// Every planted word starts with "k<NN>", NN being the index of its category
// in the standard scheme; general-language filler words start with "g".

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "filterbubble/catlab.hpp"
#include "filterbubble/error.hpp"

namespace fbsynth {

namespace fs = std::filesystem;
using nlohmann::json;
using filterbubble::CategoryId;
using filterbubble::CategoryScheme;


inline constexpr int kWordsPerCategory = 30;
inline constexpr int kGenericWords = 60;

struct Params {
  int seeds = 500;
  int related = 600;
  std::uint64_t seed = 7;
};

class Synth {
 public:
  explicit Synth(const Params& p) : p_(p), rng_(p.seed), scheme_(CategoryScheme::standard()) {
    for (std::size_t c = 0; c < scheme_.size(); ++c) {
      std::vector<std::string> words;
      std::set<std::string> seen;
      while (words.size() < kWordsPerCategory) {
        char prefix[8];
        std::snprintf(prefix, sizeof prefix, "k%02zu", c);
        std::string w = prefix + syllables(2);
        if (seen.insert(w).second) words.push_back(w);
      }
      vocab_.push_back(std::move(words));
    }
    std::set<std::string> seen;
    while (generic_.size() < kGenericWords) {
      std::string w = "g" + syllables(2);
      if (seen.insert(w).second) generic_.push_back(w);
    }
  }

  void write(const fs::path& dir) {
    fs::create_directories(dir);
    build_channels();
    build_videos();
    build_rankings();

    std::ofstream ch(dir / "channels.jsonl", std::ios::binary);
    for (const auto& c : channels_) {
      json j{{"id", c.id}, {"kind", c.seed ? "seed" : "related"}};
      if (c.seed) j["language_tag"] = "en";
      ch << j.dump() << '\n';
    }
    std::ofstream vf(dir / "videos.jsonl", std::ios::binary);
    for (const auto& v : videos_)
      vf << json{{"id", v.id}, {"uploader", v.uploader}, {"title", v.title}, {"description", v.description}, {"keywords", v.keywords}}
                .dump()
         << '\n';
    std::ofstream rf(dir / "related.jsonl", std::ios::binary);
    for (const auto& [seed_video, entries] : rankings_) {
      json e = json::array();
      for (std::size_t i = 0; i < entries.size(); ++i) e.push_back({static_cast<int>(i) + 1, entries[i]});
      rf << json{{"seed_video", seed_video}, {"entries", e}}.dump() << '\n';
    }
    std::ofstream(dir / "manifest.json", std::ios::binary)
        << json{{"schema_version", "1"}, {"channels", "channels.jsonl"}, {"videos", "videos.jsonl"}, {"related", "related.jsonl"}}.dump(2)
        << '\n';

  }

  std::string summary() const {
    std::size_t seeds = 0;
    for (const auto& c : channels_) seeds += c.seed;
    return std::to_string(channels_.size()) + " channels (" + std::to_string(seeds) + " seeds), " +
           std::to_string(videos_.size()) + " videos, " + std::to_string(rankings_.size()) + " related rankings";
  }

 private:
  struct ChannelSpec {
    std::string id;
    bool seed = false;
    std::vector<CategoryId> cats;  // empty: general-language only
    int uploads = 0;
    int words_per_video = 0;
    std::vector<std::size_t> videos;
  };
  struct VideoSpec {
    std::string id, uploader, title, description;
    std::vector<std::string> keywords;
  };

  std::string syllables(int n) {
    static const char* cons = "bdfgklmnprstvz";
    static const char* vow = "aeiou";
    std::string s;
    for (int i = 0; i < n; ++i) {
      s += cons[pick(14)];
      s += vow[pick(5)];
    }
    return s;
  }
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

  CategoryId random_category(bool er) {
    const auto ids = scheme_.ids(er ? filterbubble::Family::ER : filterbubble::Family::NonER);
    return ids[pick(ids.size())];
  }

  void build_channels() {
    for (int i = 0; i < p_.seeds; ++i) {
      ChannelSpec c;
      char id[32];
      std::snprintf(id, sizeof id, "UCseed%04d", i);
      c.id = id;
      c.seed = true;
      const bool er = i % 10 < 7;
      c.cats.push_back(random_category(er));
      if (unit() < 0.3) c.cats.push_back(random_category(unit() < 0.5));
      std::sort(c.cats.begin(), c.cats.end());
      c.cats.erase(std::unique(c.cats.begin(), c.cats.end()), c.cats.end());
      c.uploads = i % 97 == 5 ? 0 : 4 + static_cast<int>(pick(i % 13 == 0 ? 80 : 14));
      c.words_per_video = 14;
      channels_.push_back(std::move(c));
    }
    for (int i = 0; i < p_.related; ++i) {
      ChannelSpec c;
      char id[32];
      std::snprintf(id, sizeof id, "UCrel%04d", i);
      c.id = id;
      const double r = unit();
      if (r < 0.08) {
        // general-language channel
      } else {
        c.cats.push_back(random_category(r < 0.55));
        if (unit() < 0.15) c.cats.push_back(random_category(unit() < 0.5));
        std::sort(c.cats.begin(), c.cats.end());
        c.cats.erase(std::unique(c.cats.begin(), c.cats.end()), c.cats.end());
      }
      const bool tiny = i % 25 == 3;
      c.uploads = tiny ? 1 : 3 + static_cast<int>(pick(6));
      c.words_per_video = tiny ? 3 : 14;
      channels_.push_back(std::move(c));
    }
    // A few seed channels also show up among related videos.
    for (auto& c : channels_)
      if (c.seed && c.uploads > 0 && !c.cats.empty()) seed_pool_[c.cats.front()].push_back(&c - channels_.data());
    for (std::size_t i = 0; i < channels_.size(); ++i)
      if (!channels_[i].seed)
        for (CategoryId cat : channels_[i].cats) related_pool_[cat].push_back(i);
  }

  std::string word_for(const ChannelSpec& c) {
    const double r = unit();
    if (c.cats.empty() || r < 0.3) return generic_[std::min(pick(kGenericWords), pick(kGenericWords))];
    const auto& words = vocab_[static_cast<std::size_t>(c.cats[pick(c.cats.size())])];
    // Skewed toward the head of each list so topics have clear top terms.
    return words[std::min(pick(kWordsPerCategory), pick(kWordsPerCategory))];
  }

  void build_videos() {
    static const std::vector<std::string> noise = {"the",   "and",  "of",   "watch", "John", "Mary",
                                                   "Peter", "with", "this", "for",   "Naïve", "CAFÉ"};
    for (auto& c : channels_) {
      for (int v = 0; v < c.uploads; ++v) {
        VideoSpec vid;
        vid.id = c.id + "_v" + std::to_string(v);
        vid.uploader = c.id;
        std::ostringstream title, desc;
        for (int w = 0; w < 3; ++w) title << (w ? " " : "") << word_for(c);
        title << ' ' << noise[pick(noise.size())];
        for (int w = 3; w < c.words_per_video; ++w) {
          desc << word_for(c) << (unit() < 0.2 ? ", " : " ");
          if (unit() < 0.1) desc << noise[pick(noise.size())] << ' ';
        }
        if (unit() < 0.2) desc << "https://example.org/" << c.id << "/watch?v=" << v;
        vid.title = title.str();
        vid.description = desc.str();
        for (int k = 0; k < 2; ++k) vid.keywords.push_back(word_for(c));
        c.videos.push_back(videos_.size());
        videos_.push_back(std::move(vid));
      }
    }
  }

  std::size_t related_channel_for(const ChannelSpec& seed) {
    const bool er_seed = !seed.cats.empty() && scheme_.is_er(seed.cats.front());
    const double r = unit();
    if (r < 0.08) {
      const auto& pool = seed_pool_[seed.cats.front()];
      if (!pool.empty()) return pool[pick(pool.size())];
    }
    CategoryId cat;
    if (r < 0.65) cat = seed.cats[pick(seed.cats.size())];
    else if (r < 0.85) cat = random_category(er_seed);
    else cat = random_category(!er_seed);
    const auto& pool = related_pool_[cat];
    if (pool.empty()) return generic_channel();
    return pool[pick(pool.size())];
  }

  std::size_t generic_channel() {
    for (;;) {
      const std::size_t i = pick(channels_.size());
      if (!channels_[i].seed && channels_[i].cats.empty()) return i;
    }
  }

  void build_rankings() {
    for (const auto& c : channels_) {
      if (!c.seed) continue;
      for (std::size_t v : c.videos) {
        if (unit() < 0.05) continue;  // some videos were never crawled for related videos
        const std::size_t n = 4 + pick(7);
        std::vector<std::string> entries;
        std::set<std::string> used;
        for (int tries = 0; entries.size() < n && tries < 100; ++tries) {
          const auto& ch = channels_[related_channel_for(c)];
          if (ch.videos.empty()) continue;
          const auto& vid = videos_[ch.videos[pick(ch.videos.size())]].id;
          if (vid == videos_[v].id || !used.insert(vid).second) continue;
          entries.push_back(vid);
        }
        rankings_.emplace_back(videos_[v].id, std::move(entries));
      }
    }
  }

  Params p_;
  std::mt19937_64 rng_;
  CategoryScheme scheme_;
  std::vector<std::vector<std::string>> vocab_;
  std::vector<std::string> generic_;
  std::vector<ChannelSpec> channels_;
  std::vector<VideoSpec> videos_;
  std::vector<std::pair<std::string, std::vector<std::string>>> rankings_;
  std::map<CategoryId, std::vector<std::size_t>> seed_pool_, related_pool_;
};

// Majority prefix over each topic's top terms in an inspect topics.tsv.
inline void label_topics(const fs::path& topics_tsv, int count, const fs::path& scheme_path, const fs::path& out) {
  const CategoryScheme scheme = filterbubble::load_scheme(scheme_path);
  std::ifstream in(topics_tsv);
  if (!in) throw filterbubble::Error(filterbubble::ErrorCode::IoError, "cannot open " + topics_tsv.string());
  std::map<int, std::map<std::string, int>> votes;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string kind, topic, rank, id;
    if (!std::getline(ss, kind, '\t') || kind != "term") continue;
    std::getline(ss, topic, '\t');
    std::getline(ss, rank, '\t');
    std::getline(ss, id, '\t');
    const std::string prefix = id.size() >= 3 && id[0] == 'k' ? id.substr(0, 3) : "g";
    ++votes[std::stoi(topic)][prefix];
  }
  std::ofstream o(out, std::ios::binary);
  if (!o) throw filterbubble::Error(filterbubble::ErrorCode::IoError, "cannot write " + out.string());
  for (int topic = 0; topic < count; ++topic) {
    const auto& counts = votes[topic];
    if (counts.empty()) {
      o << topic << "\tEXCLUDED\n";
      continue;
    }
    auto best = std::max_element(counts.begin(), counts.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    o << topic << '\t';
    if (best->first == "g") o << "EXCLUDED\n";
    else o << scheme.key(std::stoi(best->first.substr(1))) << '\n';
  }
}

}  // namespace fbsynth
