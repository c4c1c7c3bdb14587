#pragma once

// Stage DAG for the end-to-end run. Every stage writes its outputs into
// <output_dir>/<stage>/ together with artifact.json, which records a content
// hash of each output file, the hashes of the upstream artifacts it consumed
// and an echo of the configuration values it depends on.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "filterbubble/bubble.hpp"
#include "filterbubble/catlab.hpp"
#include "filterbubble/corpus.hpp"
#include "filterbubble/error.hpp"
#include "filterbubble/hash.hpp"
#include "filterbubble/nmf.hpp"
#include "filterbubble/parallel.hpp"
#include "filterbubble/rankagg.hpp"
#include "filterbubble/textpipe.hpp"

namespace filterbubble::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

enum class StageName { Ingest, Sample, Vectorize, Fit, Project, Inspect, Categorize, Rank, Bubble, Report };

inline constexpr std::array kAllStages = {StageName::Ingest,  StageName::Sample,     StageName::Vectorize,
                                          StageName::Fit,     StageName::Project,    StageName::Inspect,
                                          StageName::Categorize, StageName::Rank,    StageName::Bubble,
                                          StageName::Report};

inline std::string to_string(StageName s) {
  switch (s) {
    case StageName::Ingest: return "ingest";
    case StageName::Sample: return "sample";
    case StageName::Vectorize: return "vectorize";
    case StageName::Fit: return "fit";
    case StageName::Project: return "project";
    case StageName::Inspect: return "inspect";
    case StageName::Categorize: return "categorize";
    case StageName::Rank: return "rank";
    case StageName::Bubble: return "bubble";
    case StageName::Report: return "report";
  }
  return "?";
}

inline StageName parse_stage_name(const std::string& s) {
  for (StageName st : kAllStages)
    if (to_string(st) == s) return st;
  throw Error(ErrorCode::ConfigInvalid, "unknown stage '" + s + "'");
}

inline std::vector<StageName> upstream_of(StageName s) {
  switch (s) {
    case StageName::Ingest: return {};
    case StageName::Sample: return {StageName::Ingest};
    case StageName::Vectorize: return {StageName::Ingest, StageName::Sample};
    case StageName::Fit: return {StageName::Vectorize};
    case StageName::Project: return {StageName::Vectorize, StageName::Fit};
    case StageName::Inspect: return {StageName::Vectorize, StageName::Fit};
    case StageName::Categorize: return {StageName::Vectorize, StageName::Fit, StageName::Project, StageName::Inspect};
    case StageName::Rank: return {StageName::Ingest, StageName::Sample};
    case StageName::Bubble: return {StageName::Ingest, StageName::Categorize, StageName::Rank};
    case StageName::Report: return {StageName::Bubble};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  fs::path corpus_manifest;
  fs::path filter_config;
  fs::path scheme;
  fs::path labels;
  fs::path output_dir;
  int topics = 80;
  SolverOpts solver;
  std::size_t retrieval_cap = kDefaultRetrievalCap;
  std::size_t sample_cap = kDefaultSampleCap;
  std::uint64_t rng_seed = 42;
  std::optional<std::size_t> min_df;
  std::optional<std::size_t> min_len;
  std::optional<MinLenMode> min_len_mode;
  std::vector<double> w_grid = default_threshold_grid();
  std::vector<std::size_t> ks = kDefaultKs;
  ScoreMode score_mode = ScoreMode::Score;
  std::size_t top_terms = 20;
  std::size_t top_channels = 10;
  double display_cutoff = kDefaultDisplayCutoff;
  unsigned workers = 1;

  /// Effective values, paths as given.
  json echo() const {
    json j{{"corpus_manifest", corpus_manifest.string()},
           {"filter_config", filter_config.string()},
           {"scheme", scheme.string()},
           {"labels", labels.string()},
           {"output_dir", output_dir.string()},
           {"topics", topics},
           {"solver", solver.to_json()},
           {"retrieval_cap", retrieval_cap},
           {"sample_cap", sample_cap},
           {"rng_seed", rng_seed},
           {"w_grid", w_grid},
           {"k", ks},
           {"score_mode", to_string(score_mode)},
           {"top_terms", top_terms},
           {"top_channels", top_channels},
           {"display_cutoff", display_cutoff},
           {"workers", workers}};
    j["min_df"] = min_df ? json(*min_df) : json(nullptr);
    j["min_len"] = min_len ? json(*min_len) : json(nullptr);
    j["min_len_mode"] = min_len_mode ? json(*min_len_mode == MinLenMode::Occurrences ? "occurrences" : "distinct")
                                     : json(nullptr);
    return j;
  }
};

namespace detail {

[[noreturn]] inline void invalid(const std::string& field, const std::string& reason) {
  throw Error(ErrorCode::ConfigInvalid, field + ": " + reason);
}

template <class T>
T get_field(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    invalid(key, e.what());
  }
}

inline void require_file(const fs::path& p, const std::string& field) {
  if (p.empty()) invalid(field, "required");
  if (!fs::is_regular_file(p)) invalid(field, "file not found: " + p.string());
}

}  // namespace detail

/// Builds a config from JSON; relative paths resolve against base_dir.
inline PipelineConfig parse_config(const json& j, const fs::path& base_dir) {
  using detail::get_field;
  using detail::invalid;
  if (!j.is_object()) invalid("config", "expected a JSON object");
  auto path_of = [&](const char* key) {
    const auto s = get_field<std::string>(j, key, "");
    if (s.empty()) return fs::path();
    const fs::path p(s);
    return (p.is_absolute() ? p : base_dir / p).lexically_normal();
  };
  PipelineConfig c;
  c.corpus_manifest = path_of("corpus_manifest");
  c.filter_config = path_of("filter_config");
  c.scheme = path_of("scheme");
  c.labels = path_of("labels");
  c.output_dir = path_of("output_dir");
  c.topics = get_field<int>(j, "topics", c.topics);
  if (auto s = j.find("solver"); s != j.end() && s->is_object()) {
    c.solver.tol = get_field<double>(*s, "tol", c.solver.tol);
    c.solver.max_outer = get_field<int>(*s, "max_outer", c.solver.max_outer);
    c.solver.max_subproblem_iter = get_field<int>(*s, "max_subproblem_iter", c.solver.max_subproblem_iter);
    c.solver.max_step_search = get_field<int>(*s, "max_step_search", c.solver.max_step_search);
    c.solver.beta = get_field<double>(*s, "beta", c.solver.beta);
    c.solver.sigma = get_field<double>(*s, "sigma", c.solver.sigma);
    c.solver.svd_tol = get_field<double>(*s, "svd_tol", c.solver.svd_tol);
  }
  if (auto s = j.find("sampling"); s != j.end() && s->is_object()) {
    c.retrieval_cap = get_field<std::size_t>(*s, "retrieval_cap", c.retrieval_cap);
    c.sample_cap = get_field<std::size_t>(*s, "sample_cap", c.sample_cap);
    c.rng_seed = get_field<std::uint64_t>(*s, "rng_seed", c.rng_seed);
  }
  if (j.contains("min_df") && !j["min_df"].is_null()) c.min_df = get_field<std::size_t>(j, "min_df", 0);
  if (j.contains("min_len") && !j["min_len"].is_null()) c.min_len = get_field<std::size_t>(j, "min_len", 0);
  if (j.contains("min_len_mode") && !j["min_len_mode"].is_null()) {
    const auto m = get_field<std::string>(j, "min_len_mode", "");
    if (m == "occurrences") c.min_len_mode = MinLenMode::Occurrences;
    else if (m == "distinct") c.min_len_mode = MinLenMode::Distinct;
    else invalid("min_len_mode", "expected occurrences|distinct");
  }
  if (auto g = j.find("w_grid"); g != j.end()) {
    if (g->is_array()) {
      c.w_grid = get_field<std::vector<double>>(j, "w_grid", {});
    } else if (g->is_object()) {
      const double start = get_field<double>(*g, "start", 0.01), stop = get_field<double>(*g, "stop", 0.09),
                   step = get_field<double>(*g, "step", 0.001);
      if (!(step > 0.0) || stop < start) invalid("w_grid", "need step > 0 and stop >= start");
      c.w_grid.clear();
      const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
      // Rounded to 1e-12 so grids print and compare as their decimal values.
      for (long i = 0; i <= n; ++i) c.w_grid.push_back(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12);
    } else {
      invalid("w_grid", "expected a list or {start, stop, step}");
    }
  }
  if (j.contains("k")) {
    const auto ks = get_field<std::vector<long>>(j, "k", {});
    c.ks.clear();
    for (long k : ks) {
      if (k < 1) invalid("k", "values must be >= 1");
      c.ks.push_back(static_cast<std::size_t>(k));
    }
  }
  try {
    c.score_mode = parse_score_mode(get_field<std::string>(j, "score_mode", "score"));
  } catch (const Error& e) {
    invalid("score_mode", e.what());
  }
  if (auto r = j.find("report"); r != j.end() && r->is_object()) {
    c.top_terms = get_field<std::size_t>(*r, "top_terms", c.top_terms);
    c.top_channels = get_field<std::size_t>(*r, "top_channels", c.top_channels);
    c.display_cutoff = get_field<double>(*r, "display_cutoff", c.display_cutoff);
  }
  c.workers = get_field<unsigned>(j, "workers", c.workers);
  c.solver.workers = c.workers;
  return c;
}

/// Checks every invariant of a parsed config.
inline void check_config(const PipelineConfig& c) {
  using detail::invalid;
  detail::require_file(c.corpus_manifest, "corpus_manifest");
  detail::require_file(c.filter_config, "filter_config");
  detail::require_file(c.scheme, "scheme");
  if (c.labels.empty()) invalid("labels", "required (the file itself may be written after `inspect`)");
  if (c.output_dir.empty()) invalid("output_dir", "required");
  if (c.topics < 1) invalid("topics", "must be >= 1");
  if (c.solver.tol <= 0.0) invalid("solver.tol", "must be > 0");
  if (c.solver.max_outer < 1) invalid("solver.max_outer", "must be >= 1");
  if (c.solver.max_subproblem_iter < 1) invalid("solver.max_subproblem_iter", "must be >= 1");
  if (c.solver.max_step_search < 1) invalid("solver.max_step_search", "must be >= 1");
  if (!(c.solver.beta > 0.0 && c.solver.beta < 1.0)) invalid("solver.beta", "must lie in (0,1)");
  if (!(c.solver.sigma > 0.0 && c.solver.sigma < 1.0)) invalid("solver.sigma", "must lie in (0,1)");
  if (c.sample_cap < 1) invalid("sampling.sample_cap", "must be >= 1");
  if (c.retrieval_cap < 1) invalid("sampling.retrieval_cap", "must be >= 1");
  if (c.min_df && *c.min_df < 1) invalid("min_df", "must be >= 1");
  if (c.w_grid.empty()) invalid("w_grid", "must not be empty");
  for (std::size_t i = 0; i < c.w_grid.size(); ++i) {
    if (!(c.w_grid[i] >= 0.0 && c.w_grid[i] <= 1.0)) invalid("w_grid", "values must lie in [0,1]");
    if (i && c.w_grid[i] <= c.w_grid[i - 1]) invalid("w_grid", "must be ascending");
  }
  if (c.ks.empty()) invalid("k", "must not be empty");
  for (std::size_t i = 1; i < c.ks.size(); ++i)
    if (c.ks[i] <= c.ks[i - 1]) invalid("k", "must be sorted ascending without duplicates");
  if (c.display_cutoff < 0.0) invalid("report.display_cutoff", "must be >= 0");
}

/// Reads, applies overrides (top-level or dotted keys, e.g. "sampling.rng_seed"),
/// parses and checks a config file.
inline PipelineConfig validate_config(const fs::path& path, const std::map<std::string, json>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
  }
  for (const auto& [key, value] : overrides) {
    json* node = &j;
    std::istringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = value;
  }
  PipelineConfig c = parse_config(j, fs::absolute(path).parent_path());
  check_config(c);
  return c;
}

// ---------------------------------------------------------------------------
// Artifacts

struct StageArtifact {
  StageName stage = StageName::Ingest;
  std::string hash;
  std::map<std::string, std::string> files;     // relative path -> sha256
  std::map<std::string, std::string> upstream;  // stage -> hash
  json config;
  bool reused = false;
};

inline fs::path stage_dir(const PipelineConfig& c, StageName s) { return c.output_dir / to_string(s); }

namespace detail {

inline std::string artifact_hash(StageName s, const std::map<std::string, std::string>& files,
                                 const std::map<std::string, std::string>& upstream, const json& config) {
  json j{{"stage", to_string(s)}, {"files", files}, {"upstream", upstream}, {"config", config}};
  return sha256_hex(j.dump());
}

inline std::map<std::string, std::string> hash_tree(const fs::path& dir) {
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "artifact.json") paths.push_back(e.path());
  std::map<std::string, std::string> out;
  for (const auto& p : paths) out[fs::relative(p, dir).generic_string()] = sha256_file(p);
  return out;
}

inline std::string filters_fingerprint(const FilterConfig& f) {
  std::vector<std::string> stop(f.stopwords.begin(), f.stopwords.end()), names(f.first_names.begin(), f.first_names.end());
  std::sort(stop.begin(), stop.end());
  std::sort(names.begin(), names.end());
  Sha256 h;
  for (const auto& s : stop) h.update("s:" + s + "\n");
  for (const auto& s : names) h.update("n:" + s + "\n");
  h.update("uri:" + f.uri_pattern);
  return h.hex();
}

inline FilterConfig effective_filters(const PipelineConfig& c) {
  FilterConfig f = load_filter_config(c.filter_config);
  if (c.min_df) f.min_df = *c.min_df;
  if (c.min_len) f.min_len = *c.min_len;
  if (c.min_len_mode) f.min_len_mode = *c.min_len_mode;
  return f;
}

}  // namespace detail

/// The configuration values a stage's output depends on.
inline json stage_config_echo(const PipelineConfig& c, StageName s) {
  switch (s) {
    case StageName::Ingest: {
      const Manifest m = load_manifest(c.corpus_manifest);
      return {{"schema_version", m.schema_version},
              {"channels", sha256_file(m.files.channels)},
              {"videos", sha256_file(m.files.videos)},
              {"related", sha256_file(m.files.related)}};
    }
    case StageName::Sample:
      return {{"retrieval_cap", c.retrieval_cap}, {"sample_cap", c.sample_cap}, {"rng_seed", c.rng_seed}};
    case StageName::Vectorize: {
      const FilterConfig f = detail::effective_filters(c);
      return {{"filters", detail::filters_fingerprint(f)},
              {"min_df", f.min_df},
              {"min_len", f.min_len},
              {"min_len_mode", f.min_len_mode == MinLenMode::Occurrences ? "occurrences" : "distinct"}};
    }
    case StageName::Fit: return {{"topics", c.topics}, {"solver", c.solver.to_json()}};
    case StageName::Project: return {{"solver", c.solver.to_json()}};
    case StageName::Inspect: return {{"top_terms", c.top_terms}, {"top_channels", c.top_channels}};
    case StageName::Categorize:
      return {{"w_grid", c.w_grid},
              {"scheme", sha256_file(c.scheme)},
              {"labels", fs::is_regular_file(c.labels) ? sha256_file(c.labels) : std::string("missing")}};
    case StageName::Rank: return {{"score_mode", to_string(c.score_mode)}};
    case StageName::Bubble: return {{"k", c.ks}, {"scheme", sha256_file(c.scheme)}};
    case StageName::Report: return {{"display_cutoff", c.display_cutoff}};
  }
  return json::object();
}

inline std::optional<StageArtifact> read_artifact(const PipelineConfig& c, StageName s) {
  const fs::path p = stage_dir(c, s) / "artifact.json";
  std::ifstream in(p);
  if (!in) return std::nullopt;
  try {
    const json j = json::parse(in);
    StageArtifact a;
    a.stage = s;
    a.hash = j.at("hash").get<std::string>();
    a.files = j.at("files").get<std::map<std::string, std::string>>();
    a.upstream = j.at("upstream").get<std::map<std::string, std::string>>();
    a.config = j.at("config");
    return a;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

enum class ArtifactStatus { Valid, Missing, Corrupt, ConfigChanged, UpstreamChanged };

inline std::string to_string(ArtifactStatus s) {
  switch (s) {
    case ArtifactStatus::Valid: return "up to date";
    case ArtifactStatus::Missing: return "missing";
    case ArtifactStatus::Corrupt: return "outputs do not match their recorded hashes";
    case ArtifactStatus::ConfigChanged: return "configuration changed";
    case ArtifactStatus::UpstreamChanged: return "upstream changed";
  }
  return "?";
}

/// Whether the stored artifact of `s` is intact, built with the current
/// config, and built from the current upstream artifacts.
inline ArtifactStatus artifact_status(const PipelineConfig& c, StageName s) {
  const auto a = read_artifact(c, s);
  if (!a) return ArtifactStatus::Missing;
  std::map<std::string, std::string> on_disk;
  try {
    on_disk = detail::hash_tree(stage_dir(c, s));
  } catch (const std::exception&) {
    return ArtifactStatus::Corrupt;
  }
  if (on_disk != a->files || detail::artifact_hash(s, a->files, a->upstream, a->config) != a->hash)
    return ArtifactStatus::Corrupt;
  if (a->config != stage_config_echo(c, s)) return ArtifactStatus::ConfigChanged;
  for (StageName up : upstream_of(s)) {
    const auto u = read_artifact(c, up);
    auto it = a->upstream.find(to_string(up));
    if (!u || it == a->upstream.end() || it->second != u->hash) return ArtifactStatus::UpstreamChanged;
  }
  return ArtifactStatus::Valid;
}

// ---------------------------------------------------------------------------
// Stage bodies. Each reads upstream artifacts from disk and writes into `out`.

namespace stages {

inline fs::path ingest_manifest(const PipelineConfig& c) { return stage_dir(c, StageName::Ingest) / "manifest.json"; }

inline std::map<std::string, VideoSample> read_samples(const fs::path& path) {
  std::map<std::string, VideoSample> out;
  filterbubble::detail::for_each_record(path, [&](const json& j, std::size_t) {
    VideoSample s{j.at("channel").get<std::string>(), j.at("videos").get<std::vector<std::string>>(),
                  j.at("rng_seed").get<std::uint64_t>()};
    out.emplace(s.channel, std::move(s));
  });
  return out;
}

inline void ingest(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const Corpus corpus = load_corpus(c.corpus_manifest);
  write_corpus(corpus, out);
  log << "ingest: " << corpus.channels().size() << " channels, " << corpus.videos().size() << " videos, "
      << corpus.rankings().size() << " related rankings\n";
}

inline void sample(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const Corpus corpus = load_corpus(ingest_manifest(c));
  std::ofstream f(out / "samples.jsonl", std::ios::binary);
  std::size_t total = 0;
  for (const auto& ch : corpus.channels()) {
    const VideoSample s =
        sample_videos(corpus, ch.id, c.sample_cap, derive_seed(c.rng_seed, ch.id), c.retrieval_cap);
    total += s.videos.size();
    f << json{{"channel", s.channel}, {"rng_seed", s.rng_seed}, {"videos", s.videos}}.dump() << '\n';
  }
  log << "sample: " << total << " videos across " << corpus.channels().size() << " channels\n";
}

inline void vectorize(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const Corpus corpus = load_corpus(ingest_manifest(c));
  const auto samples = read_samples(stage_dir(c, StageName::Sample) / "samples.jsonl");
  const FilterConfig filters = detail::effective_filters(c);

  std::vector<const Channel*> seeds, related;
  for (const auto& ch : corpus.channels()) (ch.kind == ChannelKind::Seed ? seeds : related).push_back(&ch);
  auto build = [&](const std::vector<const Channel*>& chans) {
    std::vector<ProfileDocument> docs(chans.size());
    parallel_chunks(chans.size(), c.workers, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        auto it = samples.find(chans[i]->id);
        const VideoSample empty{chans[i]->id, {}, 0};
        docs[i] = build_profile_document(corpus, chans[i]->id, it == samples.end() ? empty : it->second, filters);
      }
    });
    return docs;
  };
  const auto seed_docs = build(seeds);
  const auto related_docs = build(related);
  const Vocabulary vocab = build_seed_vocabulary(seed_docs, filters.min_df);
  const TfIdfMatrix vs = filterbubble::vectorize(seed_docs, vocab, filters.min_len, Stage::SeedStage,
                                                 filters.min_len_mode, c.workers);
  const TfIdfMatrix vr = filterbubble::vectorize(related_docs, vocab, filters.min_len, Stage::RelatedStage,
                                                 filters.min_len_mode, c.workers);
  write_vocabulary(vocab, out / "vocab.tsv");
  write_tfidf(vs, out / "seed");
  write_tfidf(vr, out / "related");
  std::ofstream ex(out / "exclusions.tsv", std::ios::binary);
  ex << "stage\tchannel\tlength\n";
  for (const auto& e : vs.excluded) ex << "seed\t" << e.channel << '\t' << e.length << '\n';
  for (const auto& e : vr.excluded) ex << "related\t" << e.channel << '\t' << e.length << '\n';
  log << "vectorize: vocabulary " << vocab.size() << " terms; seed " << vs.docs() << " documents ("
      << vs.excluded.size() << " short), related " << vr.docs() << " documents (" << vr.excluded.size()
      << " short)\n";
}

inline void fit(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const TfIdfMatrix vs = read_tfidf(stage_dir(c, StageName::Vectorize) / "seed");
  const TopicModel model = nmf_fit(vs, c.topics, c.solver);
  const json meta{{"vocab_hash", vs.vocab_hash}, {"topics", c.topics}, {"solver", c.solver.to_json()}};
  write_dense(model.W, meta, out / "W.txt");
  write_dense(model.H, meta, out / "H_seed.txt");
  std::ofstream trace(out / "trace.tsv", std::ios::binary);
  trace << std::setprecision(17) << "#outer_iterations\t" << model.outer_iterations << "\tconverged\t"
        << (model.converged ? "true" : "false") << '\n';
  for (std::size_t i = 0; i < model.objective_trace.size(); ++i) trace << i << '\t' << model.objective_trace[i] << '\n';
  log << "fit: T=" << c.topics << ", " << model.outer_iterations << " outer iterations, objective "
      << model.objective_trace.front() << " -> " << model.objective_trace.back() << '\n';
}

inline TopicModel read_model(const PipelineConfig& c) {
  const fs::path dir = stage_dir(c, StageName::Fit);
  auto [W, meta] = read_dense(dir / "W.txt");
  auto [H, meta_h] = read_dense(dir / "H_seed.txt");
  TopicModel m;
  m.W = std::move(W);
  m.H = std::move(H);
  m.topics = static_cast<int>(m.W.cols());
  m.vocab_hash = meta.value("vocab_hash", "");
  m.doc_ids = read_tfidf(stage_dir(c, StageName::Vectorize) / "seed").doc_ids;
  return m;
}

inline void project(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const TfIdfMatrix vr = read_tfidf(stage_dir(c, StageName::Vectorize) / "related");
  const TopicModel model = read_model(c);
  const ProjectedWeights p = nmf_project(vr, model, c.solver);
  write_dense(p.H, {{"basis_hash", p.basis_hash}, {"vocab_hash", model.vocab_hash}, {"iterations", p.iterations}},
              out / "H_related.txt");
  log << "project: " << vr.docs() << " related documents, " << p.iterations << " subproblem iterations\n";
}

inline void inspect(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const Vocabulary vocab = read_vocabulary(stage_dir(c, StageName::Vectorize) / "vocab.tsv");
  const TopicModel model = read_model(c);
  const TopicTermReport r = topic_term_report(model, vocab.terms, c.top_terms, c.top_channels);
  write_topic_report_tsv(r, out / "topics.tsv");
  write_topic_report_text(r, out / "topics.txt");
  log << "inspect: wrote " << (out.parent_path() / "inspect" / "topics.txt").string() << "; label all "
      << model.topics << " topics in " << c.labels.string() << " before `categorize`\n";
}

inline void categorize(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const CategoryScheme scheme = load_scheme(c.scheme);
  const fs::path report = stage_dir(c, StageName::Inspect) / "topics.txt";
  if (!fs::is_regular_file(c.labels))
    throw Error(ErrorCode::LabelingIncomplete,
                "labels file " + c.labels.string() + " not found; label the topics in " + report.string());
  TopicLabeling labels;
  try {
    labels = load_labeling(c.labels, c.topics, scheme);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MissingTopic) throw;
    throw Error(ErrorCode::LabelingIncomplete,
                std::string(e.what()) + " in " + c.labels.string() + "; see " + report.string());
  }
  const TopicModel model = read_model(c);
  auto [Hr, meta] = read_dense(stage_dir(c, StageName::Project) / "H_related.txt");
  const auto related_ids = read_tfidf(stage_dir(c, StageName::Vectorize) / "related").doc_ids;

  const ThresholdSweep ss = sweep_threshold(model.H, c.w_grid);
  const ThresholdSweep sr = sweep_threshold(Hr, c.w_grid);
  const auto seed_cats = categorize_channels(model.H, model.doc_ids, ss.chosen_w, labels);
  const auto related_cats = categorize_channels(Hr, related_ids, sr.chosen_w, labels);
  write_sweep(ss, out / "sweep_seed.tsv");
  write_sweep(sr, out / "sweep_related.tsv");
  write_categorization(seed_cats, scheme, out / "seed_categories.tsv");
  write_categorization(related_cats, scheme, out / "related_categories.tsv");

  auto summary = [&](const char* name, const ChannelCategorization& cats, const ThresholdSweep& sw) {
    std::size_t grey = 0, excl = 0;
    for (const auto& [_, o] : cats) {
      grey += o.kind == ChannelOutcome::Kind::GreySheep;
      excl += o.kind == ChannelOutcome::Kind::TopicExcluded;
    }
    log << "categorize: " << name << " w=" << sw.chosen_w << " (mu=" << sw.chosen_mu << "), " << cats.size()
        << " channels, " << grey << " grey sheep, " << excl << " topic-excluded\n";
  };
  summary("seed", seed_cats, ss);
  summary("related", related_cats, sr);
}

inline void rank(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const Corpus corpus = load_corpus(ingest_manifest(c));
  const auto samples = read_samples(stage_dir(c, StageName::Sample) / "samples.jsonl");
  std::vector<AggregatedRanking> rankings;
  std::ofstream skips(out / "skipped.tsv", std::ios::binary);
  skips << "seed\treason\n";
  for (const auto& ch : corpus.channels()) {
    if (ch.kind != ChannelKind::Seed) continue;
    try {
      const RankMatrix R = build_rank_matrix(corpus, ch.id, samples.at(ch.id), c.score_mode);
      rankings.push_back(aggregate(R));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptySample && e.code() != ErrorCode::DegenerateMatrix) throw;
      skips << ch.id << '\t' << e.what() << '\n';
    }
  }
  write_rankings(rankings, out / "rankings.tsv");
  log << "rank: aggregated rankings for " << rankings.size() << " seeds\n";
}

inline json report_to_json(const BubbleReport& r, const Verdict& v, const CycleStat& cyc, const CategoryScheme& s) {
  json cells = json::array();
  for (const auto& [key, cell] : r.cells) {
    json mean = json::object();
    for (const auto& [rc, m] : cell.mean) mean[s.key(rc)] = m;
    json jc{{"category", s.key(key.first)}, {"k", key.second}, {"n_seeds", cell.n_seeds}, {"mean", mean}};
    if (auto it = v.cells.find(key); it != v.cells.end()) {
      jc["bubble"] = it->second;
      std::vector<std::string> top;
      for (CategoryId t : v.top_related.at(key)) top.push_back(s.key(t));
      jc["top_related"] = top;
    }
    cells.push_back(jc);
  }
  json agg = json::array();
  for (const auto& a : r.aggregate) {
    json ja{{"k", a.k}, {"same_er", a.same_er}, {"other_er", a.other_er}, {"non_er", a.non_er}, {"n_seeds", a.n_seeds}};
    if (v.same_er_dominant.count(a.k)) {
      ja["same_er_dominant"] = v.same_er_dominant.at(a.k);
      ja["er_outweighs_non_er"] = v.er_outweighs_non_er.at(a.k);
    }
    agg.push_back(ja);
  }
  std::vector<std::string> empty;
  for (CategoryId c : r.empty_groups) empty.push_back(s.key(c));
  json excl = json::array();
  for (const auto& e : r.exclusions) excl.push_back({{"seed", e.seed}, {"k", e.k}, {"reason", e.reason}});
  return {{"k", r.ks},
          {"cells", cells},
          {"aggregate", agg},
          {"empty_groups", empty},
          {"exclusions", excl},
          {"er_seeds", r.er_seeds},
          {"contributing_seeds", r.contributing_seeds},
          {"cycle", {{"numerator", cyc.numerator}, {"denominator", cyc.denominator}, {"fraction", cyc.fraction}}}};
}

inline void report_from_json(const json& j, const CategoryScheme& s, BubbleReport& r, Verdict& v, CycleStat& cyc) {
  r.ks = j.at("k").get<std::vector<std::size_t>>();
  for (const auto& jc : j.at("cells")) {
    const auto key = std::make_pair(s.find(jc.at("category").get<std::string>()), jc.at("k").get<std::size_t>());
    CategoryCell cell;
    cell.n_seeds = jc.at("n_seeds").get<std::size_t>();
    for (const auto& [name, m] : jc.at("mean").items()) cell.mean[s.find(name)] = m.get<double>();
    r.cells[key] = std::move(cell);
    if (jc.contains("bubble")) {
      v.cells[key] = jc["bubble"].get<bool>();
      for (const auto& t : jc.at("top_related")) v.top_related[key].push_back(s.find(t.get<std::string>()));
    }
  }
  for (const auto& ja : j.at("aggregate")) {
    AggregateCell a{ja.at("k").get<std::size_t>(), ja.at("same_er").get<double>(), ja.at("other_er").get<double>(),
                    ja.at("non_er").get<double>(), ja.at("n_seeds").get<std::size_t>()};
    if (ja.contains("same_er_dominant")) {
      v.same_er_dominant[a.k] = ja["same_er_dominant"].get<bool>();
      v.er_outweighs_non_er[a.k] = ja["er_outweighs_non_er"].get<bool>();
    }
    r.aggregate.push_back(a);
  }
  for (const auto& name : j.at("empty_groups")) r.empty_groups.push_back(s.find(name.get<std::string>()));
  for (const auto& e : j.at("exclusions"))
    r.exclusions.push_back({e.at("seed").get<std::string>(), e.at("k").get<std::size_t>(), e.at("reason").get<std::string>()});
  r.er_seeds = j.at("er_seeds").get<std::vector<std::string>>();
  r.contributing_seeds = j.at("contributing_seeds").get<std::vector<std::string>>();
  const auto& jc = j.at("cycle");
  cyc = {jc.at("numerator").get<std::size_t>(), jc.at("denominator").get<std::size_t>(), jc.at("fraction").get<double>()};
}

inline void bubble(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const CategoryScheme scheme = load_scheme(c.scheme);
  const Corpus corpus = load_corpus(ingest_manifest(c));
  const fs::path cat_dir = stage_dir(c, StageName::Categorize);
  ChannelCategorization cats = read_categorization(cat_dir / "related_categories.tsv", scheme);
  // Seeds that also occur as related channels carry their seed-stage label.
  for (auto& [id, o] : read_categorization(cat_dir / "seed_categories.tsv", scheme)) cats[id] = o;
  const RankingIndex rankings = index_rankings(read_rankings(stage_dir(c, StageName::Rank) / "rankings.tsv"));

  std::vector<std::string> seeds;
  for (const auto& ch : corpus.channels())
    if (ch.kind == ChannelKind::Seed) seeds.push_back(ch.id);
  const BubbleReport report = category_report(seeds, c.ks, rankings, cats, scheme);
  const Verdict verdict = bubble_verdict(report, scheme);
  const CycleStat cycle = cycle_stat(report.contributing_seeds, rankings, c.ks.back());
  write_bubble_outputs(report, verdict, cycle, scheme, out);
  std::ofstream(out / "bubble.json", std::ios::binary) << report_to_json(report, verdict, cycle, scheme).dump(1) << '\n';
  log << "bubble: " << report.er_seeds.size() << " ER seeds, " << report.contributing_seeds.size()
      << " contributing; cycle fraction " << cycle.fraction << '\n';
}

inline void report(const PipelineConfig& c, const fs::path& out, std::ostream& log) {
  const CategoryScheme scheme = load_scheme(c.scheme);
  std::ifstream in(stage_dir(c, StageName::Bubble) / "bubble.json");
  BubbleReport r;
  Verdict v;
  CycleStat cyc;
  report_from_json(json::parse(in), scheme, r, v, cyc);
  const std::string text = render_report(r, v, cyc, scheme, c.display_cutoff);
  std::ofstream(out / "report.txt", std::ios::binary) << text;
  log << text;
}

}  // namespace stages

// ---------------------------------------------------------------------------
// Running

/// Runs one stage after verifying that every upstream artifact is intact and
/// current; the output directory is replaced only once the stage succeeds.
inline StageArtifact run_stage(const PipelineConfig& c, StageName s, std::ostream& log) {
  StageArtifact a;
  a.stage = s;
  for (StageName up : upstream_of(s)) {
    const ArtifactStatus st = artifact_status(c, up);
    if (st != ArtifactStatus::Valid)
      throw Error(ErrorCode::StaleUpstream, to_string(s) + " needs " + to_string(up) + " (" + to_string(st) + ")");
    a.upstream[to_string(up)] = read_artifact(c, up)->hash;
  }
  a.config = stage_config_echo(c, s);

  const fs::path final_dir = stage_dir(c, s);
  const fs::path tmp = c.output_dir / ("." + to_string(s) + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    switch (s) {
      case StageName::Ingest: stages::ingest(c, tmp, log); break;
      case StageName::Sample: stages::sample(c, tmp, log); break;
      case StageName::Vectorize: stages::vectorize(c, tmp, log); break;
      case StageName::Fit: stages::fit(c, tmp, log); break;
      case StageName::Project: stages::project(c, tmp, log); break;
      case StageName::Inspect: stages::inspect(c, tmp, log); break;
      case StageName::Categorize: stages::categorize(c, tmp, log); break;
      case StageName::Rank: stages::rank(c, tmp, log); break;
      case StageName::Bubble: stages::bubble(c, tmp, log); break;
      case StageName::Report: stages::report(c, tmp, log); break;
    }
  } catch (const Error& e) {
    fs::remove_all(tmp);
    std::string detail = e.what();
    const std::string prefix = std::string(filterbubble::to_string(e.code())) + ": ";
    if (detail.rfind(prefix, 0) == 0) detail.erase(0, prefix.size());
    throw Error(e.code(), to_string(s) + ": " + detail);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  a.files = detail::hash_tree(tmp);
  a.hash = detail::artifact_hash(s, a.files, a.upstream, a.config);
  std::ofstream(tmp / "artifact.json", std::ios::binary)
      << json{{"stage", to_string(s)}, {"hash", a.hash}, {"files", a.files}, {"upstream", a.upstream}, {"config", a.config}}.dump(2)
      << '\n';
  fs::remove_all(final_dir);
  fs::rename(tmp, final_dir);
  return a;
}

/// Stages of the DAG up to and including `target`, in execution order.
inline std::vector<StageName> plan_for(StageName target) {
  std::set<StageName> needed{target};
  for (auto it = kAllStages.rbegin(); it != kAllStages.rend(); ++it)
    if (needed.count(*it))
      for (StageName up : upstream_of(*it)) needed.insert(up);
  std::vector<StageName> order;
  for (StageName s : kAllStages)
    if (needed.count(s)) order.push_back(s);
  return order;
}

struct RunSummary {
  std::vector<StageArtifact> artifacts;
  std::vector<StageName> executed;
};

/// Runs every stage whose artifact is not current, in DAG order. With
/// dry_run, only reports what would run.
inline RunSummary run_all(const PipelineConfig& c, std::ostream& log, bool dry_run = false) {
  RunSummary summary;
  std::set<StageName> would_run;
  for (StageName s : kAllStages) {
    ArtifactStatus st = artifact_status(c, s);
    bool upstream_pending = false;
    for (StageName up : upstream_of(s)) upstream_pending |= would_run.count(up) > 0;
    if (st == ArtifactStatus::Valid && !upstream_pending) {
      log << to_string(s) << ": up to date\n";
      summary.artifacts.push_back(*read_artifact(c, s));
      summary.artifacts.back().reused = true;
      continue;
    }
    if (dry_run) {
      log << to_string(s) << ": would run (" << (st == ArtifactStatus::Valid ? "upstream will change" : to_string(st)) << ")\n";
      would_run.insert(s);
      continue;
    }
    summary.artifacts.push_back(run_stage(c, s, log));
    summary.executed.push_back(s);
  }
  return summary;
}

}  // namespace filterbubble::pipeline
