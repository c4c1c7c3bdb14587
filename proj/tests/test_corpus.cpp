#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "filterbubble/corpus.hpp"
#include "test_util.hpp"

using namespace filterbubble;
using testutil::TempDir;
using testutil::write_file;

namespace {

void write_manifest(const TempDir& dir, const std::string& channels, const std::string& videos,
                    const std::string& related, const std::string& version = "1") {
  write_file(dir / "channels.jsonl", channels);
  write_file(dir / "videos.jsonl", videos);
  write_file(dir / "related.jsonl", related);
  write_file(dir / "manifest.json", R"({"schema_version":")" + version +
                                        R"(","channels":"channels.jsonl","videos":"videos.jsonl","related":"related.jsonl"})");
}

const char* kChannels =
    R"({"id":"A","kind":"seed","language_tag":"en"}
{"id":"B","kind":"related"}
{"id":"C","kind":"related"}
)";
const char* kVideos =
    R"({"id":"a1","uploader":"A","title":"t","description":"d","keywords":["k"]}
{"id":"a2","uploader":"A","title":"","description":"","keywords":[]}
{"id":"b1","uploader":"B","title":"x","description":"","keywords":[]}
{"id":"b2","uploader":"B","title":"y","description":"","keywords":[]}
{"id":"c1","uploader":"C","title":"z","description":"","keywords":[]}
)";
const char* kRelated =
    R"({"seed_video":"a1","entries":[[1,"b1"],[2,"c1"]]}
{"seed_video":"a2","entries":[[2,"b1"],[1,"b2"]]}
)";

int error_code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return static_cast<int>(e.code());
  }
  return -1;
}

}  // namespace

TEST(Corpus, EmptyFilesGiveEmptyCorpus) {
  TempDir dir;
  write_manifest(dir, "", "", "");
  const Corpus c = load_corpus(dir / "manifest.json");
  EXPECT_EQ(c.channels().size(), 0u);
  EXPECT_EQ(c.videos().size(), 0u);
  EXPECT_EQ(c.rankings().size(), 0u);
}

TEST(Corpus, HandFixtureCountsAndReferences) {
  TempDir dir;
  write_manifest(dir, kChannels, kVideos, kRelated);
  const Corpus c = load_corpus(dir / "manifest.json");
  EXPECT_EQ(c.channels().size(), 3u);
  EXPECT_EQ(c.videos().size(), 5u);
  EXPECT_EQ(c.rankings().size(), 2u);
  ASSERT_NE(c.ranking_for("a2"), nullptr);
  // Entries come back in position order regardless of file order.
  EXPECT_EQ(c.ranking_for("a2")->entries.front().related_video, "b2");
  EXPECT_EQ(c.find_video("c1")->uploader, "C");
  EXPECT_EQ(c.find_channel("A")->language_tag.value_or(""), "en");
  EXPECT_EQ(c.uploads("B").size(), 2u);
  // Referential closure.
  for (const auto& v : c.videos()) EXPECT_NE(c.find_channel(v.uploader), nullptr);
  for (const auto& r : c.rankings())
    for (const auto& e : r.entries) EXPECT_NE(c.find_video(e.related_video), nullptr);
}

TEST(Corpus, DanglingUploader) {
  TempDir dir;
  write_manifest(dir, kChannels, R"({"id":"x","uploader":"Z","title":"","description":"","keywords":[]})", "");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), static_cast<int>(ErrorCode::DanglingReference));
}

TEST(Corpus, DanglingRelatedVideo) {
  TempDir dir;
  write_manifest(dir, kChannels, kVideos, R"({"seed_video":"a1","entries":[[1,"nope"]]})");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), static_cast<int>(ErrorCode::DanglingReference));
}

TEST(Corpus, DuplicateIds) {
  TempDir dir;
  write_manifest(dir, std::string(kChannels) + R"({"id":"B","kind":"related"})", kVideos, kRelated);
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), static_cast<int>(ErrorCode::DuplicateId));
  write_manifest(dir, kChannels, std::string(kVideos) + R"({"id":"c1","uploader":"C","title":"","description":"","keywords":[]})",
                 kRelated);
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), static_cast<int>(ErrorCode::DuplicateId));
}

TEST(Corpus, SeedAlsoRelatedCollapses) {
  TempDir dir;
  write_manifest(dir, std::string(R"({"id":"B","kind":"seed"})") + "\n" + kChannels, kVideos, kRelated);
  const Corpus c = load_corpus(dir / "manifest.json");
  EXPECT_EQ(c.channels().size(), 3u);
  const Channel* b = c.find_channel("B");
  ASSERT_NE(b, nullptr);
  EXPECT_EQ(b->kind, ChannelKind::Seed);
  EXPECT_TRUE(b->also_related);
  EXPECT_FALSE(c.find_channel("A")->also_related);
}

TEST(Corpus, MalformedRecords) {
  TempDir dir;
  const int malformed = static_cast<int>(ErrorCode::MalformedRecord);
  write_manifest(dir, "{not json}\n", "", "");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), malformed);
  write_manifest(dir, R"({"id":"A"})", "", "");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), malformed);
  write_manifest(dir, R"({"id":"A","kind":"other"})", "", "");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), malformed);
  // Missing description field: may be empty, not absent.
  write_manifest(dir, kChannels, R"({"id":"a1","uploader":"A","title":"","keywords":[]})", "");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), malformed);
  // Position gap.
  write_manifest(dir, kChannels, kVideos, R"({"seed_video":"a1","entries":[[1,"b1"],[3,"c1"]]})");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), malformed);
  // Duplicate position.
  write_manifest(dir, kChannels, kVideos, R"({"seed_video":"a1","entries":[[1,"b1"],[1,"c1"]]})");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), malformed);
}

TEST(Corpus, MoreThanTenRelatedRejected) {
  std::vector<std::vector<std::string>> lists(1);
  for (int i = 0; i < 11; ++i) lists[0].push_back("R" + std::to_string(i));
  EXPECT_THROW(testutil::corpus_from_lists(lists), Error);
  lists[0].pop_back();
  EXPECT_NO_THROW(testutil::corpus_from_lists(lists));
}

TEST(Corpus, SchemaMismatch) {
  TempDir dir;
  write_manifest(dir, "", "", "", "2");
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), static_cast<int>(ErrorCode::SchemaMismatch));
}

TEST(Corpus, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_EQ(error_code_of([&] { load_corpus(dir / "manifest.json"); }), static_cast<int>(ErrorCode::IoError));
}

TEST(Corpus, RoundTrip) {
  TempDir dir;
  write_manifest(dir, std::string(R"({"id":"C","kind":"seed"})") + "\n" + kChannels, kVideos, kRelated);
  const Corpus c = load_corpus(dir / "manifest.json");
  write_corpus(c, dir / "copy");
  const Corpus again = load_corpus(dir / "copy" / "manifest.json");
  EXPECT_TRUE(c == again);
  EXPECT_TRUE(again.find_channel("C")->also_related);
}

namespace {
Corpus uploads_corpus(int n) {
  std::vector<Channel> ch{{"A", ChannelKind::Seed, std::nullopt, false}};
  std::vector<VideoMeta> v;
  for (int i = 0; i < n; ++i) v.push_back({"v" + std::to_string(i), "A", "", "", {}});
  return Corpus::from_records(std::move(ch), std::move(v), {});
}
}  // namespace

TEST(Sampling, BelowCapReturnsAllInFileOrder) {
  const Corpus c = uploads_corpus(7);
  const VideoSample s = sample_videos(c, "A", 50, 123);
  ASSERT_EQ(s.videos.size(), 7u);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(s.videos[i], "v" + std::to_string(i));
  EXPECT_EQ(s.rng_seed, 123u);
}

TEST(Sampling, DeterministicSubsetOfUploads) {
  const Corpus c = uploads_corpus(200);
  const VideoSample a = sample_videos(c, "A", 50, 42), b = sample_videos(c, "A", 50, 42);
  EXPECT_EQ(a.videos, b.videos);
  ASSERT_EQ(a.videos.size(), 50u);
  std::set<std::string> uniq(a.videos.begin(), a.videos.end());
  EXPECT_EQ(uniq.size(), 50u);
  for (const auto& id : a.videos) EXPECT_EQ(c.find_video(id)->uploader, "A");
  EXPECT_NE(sample_videos(c, "A", 50, 43).videos, a.videos);
}

TEST(Sampling, RetrievalCapLimitsPool) {
  const Corpus c = uploads_corpus(30);
  const VideoSample s = sample_videos(c, "A", 50, 1, 10);
  ASSERT_EQ(s.videos.size(), 10u);
  EXPECT_EQ(s.videos.back(), "v9");
  for (const auto& id : sample_videos(c, "A", 5, 9, 10).videos) EXPECT_LT(std::stoi(id.substr(1)), 10);
}

TEST(Sampling, Errors) {
  const Corpus c = uploads_corpus(3);
  EXPECT_THROW(sample_videos(c, "nobody", 5, 1), Error);
  EXPECT_THROW(sample_videos(c, "A", 0, 1), Error);
}

TEST(Sampling, InclusionFrequencyIsUniform) {
  const Corpus c = uploads_corpus(100);
  const int draws = 10000;
  std::map<std::string, int> hits;
  for (int s = 0; s < draws; ++s)
    for (const auto& v : sample_videos(c, "A", 10, static_cast<std::uint64_t>(s)).videos) ++hits[v];
  const double p = 0.1, sd = std::sqrt(p * (1 - p) / draws);
  ASSERT_EQ(hits.size(), 100u);
  for (const auto& [v, n] : hits) EXPECT_NEAR(static_cast<double>(n) / draws, p, 3 * sd) << v;
}
