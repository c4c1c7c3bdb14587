#pragma once

// Profile documents, seed vocabulary and two-stage log TF-IDF matrices.

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "filterbubble/corpus.hpp"
#include "filterbubble/error.hpp"
#include "filterbubble/hash.hpp"
#include "filterbubble/parallel.hpp"

namespace filterbubble {

using SparseMatrix = Eigen::SparseMatrix<double>;

inline constexpr std::size_t kDefaultMinDf = 20;
inline constexpr std::size_t kDefaultMinLen = 10;
inline constexpr const char* kDefaultUriPattern = R"((?:https?|ftp)://\S+|www\.\S+)";

enum class MinLenMode { Occurrences, Distinct };

struct FilterConfig {
  std::unordered_set<std::string> stopwords;
  std::unordered_set<std::string> first_names;
  std::string uri_pattern = kDefaultUriPattern;
  std::size_t min_df = kDefaultMinDf;
  std::size_t min_len = kDefaultMinLen;
  MinLenMode min_len_mode = MinLenMode::Occurrences;

  /// Compiled URI pattern, cached per thread.
  const std::regex& uri_regex() const {
    thread_local std::optional<std::pair<std::string, std::regex>> cache;
    if (!cache || cache->first != uri_pattern)
      cache.emplace(uri_pattern, std::regex(uri_pattern, std::regex::ECMAScript | std::regex::optimize));
    return cache->second;
  }
};

// ---------------------------------------------------------------------------
// Tokenization

/// Lowercased, diacritic-free form of a UTF-8 string (NFD, drop nonspacing
/// marks, NFC, case fold).
inline std::string fold_text(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfd = icu::Normalizer2::getNFDInstance(status);
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCode::IoError, "ICU normalizer unavailable");

  icu::UnicodeString src = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString decomposed = nfd->normalize(src, status);
  icu::UnicodeString stripped;
  for (int32_t i = 0; i < decomposed.length();) {
    const UChar32 c = decomposed.char32At(i);
    if (u_charType(c) != U_NON_SPACING_MARK) stripped.append(c);
    i += U16_LENGTH(c);
  }
  icu::UnicodeString out = nfc->normalize(stripped, status);
  out.foldCase();
  std::string utf8;
  out.toUTF8String(utf8);
  return utf8;
}

/// Terms of `text`: URIs removed, diacritics folded, lowercased, split on
/// anything that is not a letter or digit; terms shorter than two characters,
/// stopwords and first names dropped. No stemming.
inline std::vector<std::string> tokenize(std::string_view text, const FilterConfig& filters) {
  std::vector<std::string> terms;
  if (text.empty()) return terms;
  const std::string without_uris = std::regex_replace(std::string(text), filters.uri_regex(), " ");
  const std::string folded = fold_text(without_uris);

  icu::UnicodeString u = icu::UnicodeString::fromUTF8(folded);
  icu::UnicodeString current;
  int32_t length = 0;
  auto flush = [&] {
    if (length >= 2) {
      std::string term;
      current.toUTF8String(term);
      if (!filters.stopwords.count(term) && !filters.first_names.count(term)) terms.push_back(std::move(term));
    }
    current.remove();
    length = 0;
  };
  for (int32_t i = 0; i < u.length();) {
    const UChar32 c = u.char32At(i);
    if (u_isalnum(c)) {
      current.append(c);
      ++length;
    } else {
      flush();
    }
    i += U16_LENGTH(c);
  }
  flush();
  return terms;
}

/// One term per line; blank lines and '#' comments ignored; entries folded the
/// same way as document text.
inline std::unordered_set<std::string> load_term_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open term list " + path.string());
  std::unordered_set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.insert(fold_text(line.substr(b, e - b + 1)));
  }
  return out;
}

/// Reads a filter config JSON file; list paths are relative to the file.
inline FilterConfig load_filter_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open filter config " + path.string());
  const auto dir = path.parent_path();
  FilterConfig f;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& p : j.value("stopword_files", std::vector<std::string>{}))
      for (auto& t : load_term_list(dir / p)) f.stopwords.insert(t);
    if (j.contains("first_name_file")) f.first_names = load_term_list(dir / j["first_name_file"].get<std::string>());
    f.uri_pattern = j.value("uri_regex", std::string(kDefaultUriPattern));
    f.min_df = j.value("min_df", kDefaultMinDf);
    f.min_len = j.value("min_len", kDefaultMinLen);
    const auto mode = j.value("min_len_mode", std::string("occurrences"));
    if (mode == "occurrences") f.min_len_mode = MinLenMode::Occurrences;
    else if (mode == "distinct") f.min_len_mode = MinLenMode::Distinct;
    else throw Error(ErrorCode::ConfigInvalid, "min_len_mode: expected occurrences|distinct, got " + mode);
    (void)f.uri_regex();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.filename().string() + ": " + e.what());
  } catch (const std::regex_error& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("uri_regex: ") + e.what());
  }
  if (f.min_df < 1) throw Error(ErrorCode::ConfigInvalid, "min_df must be >= 1");
  return f;
}

// ---------------------------------------------------------------------------
// Profile documents

struct ProfileDocument {
  std::string channel;
  std::map<std::string, std::uint32_t> tokens;  // term -> occurrences

  std::size_t distinct_terms() const { return tokens.size(); }
  std::size_t total_tokens() const {
    std::size_t n = 0;
    for (const auto& [_, c] : tokens) n += c;
    return n;
  }
  bool operator==(const ProfileDocument&) const = default;
};

inline ProfileDocument build_profile_document(const Corpus& corpus, const std::string& channel,
                                              const VideoSample& sample, const FilterConfig& filters) {
  if (!corpus.find_channel(channel)) throw Error(ErrorCode::UnknownChannel, channel);
  if (sample.channel != channel)
    throw Error(ErrorCode::UnknownChannel, "sample belongs to " + sample.channel + ", not " + channel);
  ProfileDocument doc{channel, {}};
  auto add = [&](std::string_view text) {
    for (auto& t : tokenize(text, filters)) ++doc.tokens[std::move(t)];
  };
  for (const auto& vid : sample.videos) {
    const VideoMeta* v = corpus.find_video(vid);
    if (!v || v->uploader != channel) throw Error(ErrorCode::DanglingReference, vid);
    add(v->title);
    add(v->description);
    for (const auto& k : v->keywords) add(k);
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Vocabulary

struct Vocabulary {
  std::vector<std::string> terms;  // lexicographic
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::size_t> df;  // seed document frequency, parallel to terms
  std::size_t n_docs = 0;       // seed documents the df was counted over
  std::string hash;

  std::size_t size() const { return terms.size(); }
  std::size_t df_of(const std::string& term) const { return df.at(index.at(term)); }
};

namespace detail {
inline std::string vocabulary_hash(const Vocabulary& v) {
  Sha256 h;
  h.update("n_docs=" + std::to_string(v.n_docs) + "\n");
  for (std::size_t i = 0; i < v.terms.size(); ++i) h.update(v.terms[i] + "\t" + std::to_string(v.df[i]) + "\n");
  return h.hex();
}
inline void finish_vocabulary(Vocabulary& v) {
  v.index.clear();
  for (std::size_t i = 0; i < v.terms.size(); ++i) v.index.emplace(v.terms[i], i);
  v.hash = vocabulary_hash(v);
}
}  // namespace detail

/// Terms occurring in at least `min_df` of the seed documents.
inline Vocabulary build_seed_vocabulary(const std::vector<ProfileDocument>& seed_docs, std::size_t min_df) {
  if (min_df < 1) throw Error(ErrorCode::ConfigInvalid, "min_df must be >= 1");
  std::map<std::string, std::size_t> df;
  for (const auto& d : seed_docs)
    for (const auto& [term, _] : d.tokens) ++df[term];
  Vocabulary v;
  v.n_docs = seed_docs.size();
  for (const auto& [term, count] : df) {
    if (count < min_df) continue;
    v.terms.push_back(term);
    v.df.push_back(count);
  }
  if (v.terms.empty())
    throw Error(ErrorCode::EmptyVocabulary, "no term reaches min_df=" + std::to_string(min_df));
  detail::finish_vocabulary(v);
  return v;
}

/// vocab.tsv: first line "#n_docs<TAB>N", then "term<TAB>df" per term.
inline void write_vocabulary(const Vocabulary& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "#n_docs\t" << v.n_docs << '\n';
  for (std::size_t i = 0; i < v.terms.size(); ++i) out << v.terms[i] << '\t' << v.df[i] << '\n';
}

inline Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  Vocabulary v;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#n_docs\t", 0) != 0)
    throw Error(ErrorCode::MalformedRecord, path.filename().string() + ": missing #n_docs header");
  v.n_docs = std::stoull(line.substr(8));
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::MalformedRecord, path.filename().string() + ": " + line);
    v.terms.push_back(line.substr(0, tab));
    v.df.push_back(std::stoull(line.substr(tab + 1)));
  }
  detail::finish_vocabulary(v);
  return v;
}

// ---------------------------------------------------------------------------
// TF-IDF

enum class Stage { SeedStage, RelatedStage };

inline std::string to_string(Stage s) { return s == Stage::SeedStage ? "seed" : "related"; }
inline Stage parse_stage(const std::string& s) {
  if (s == "seed") return Stage::SeedStage;
  if (s == "related") return Stage::RelatedStage;
  throw Error(ErrorCode::MalformedRecord, "unknown stage '" + s + "'");
}

struct DocumentExclusion {
  std::string channel;
  std::size_t length = 0;  // in-vocabulary length under the configured mode
  bool operator==(const DocumentExclusion&) const = default;
};

struct TfIdfMatrix {
  SparseMatrix values;  // terms x documents
  std::vector<std::string> doc_ids;
  Stage stage = Stage::SeedStage;
  std::string vocab_hash;
  std::vector<DocumentExclusion> excluded;

  Eigen::Index terms() const { return values.rows(); }
  Eigen::Index docs() const { return values.cols(); }
};

/// Log TF-IDF weight (1 + ln tf) * ln(N / df) before normalization.
inline double tfidf_weight(std::size_t tf, std::size_t df, std::size_t n_docs) {
  return (1.0 + std::log(static_cast<double>(tf))) *
         std::log(static_cast<double>(n_docs) / static_cast<double>(df));
}

/// Column-per-document TF-IDF matrix over the seed vocabulary, with idf taken
/// from the seed-stage document frequencies in both stages. Documents with
/// fewer than min_len in-vocabulary terms are dropped and reported.
inline TfIdfMatrix vectorize(const std::vector<ProfileDocument>& docs, const Vocabulary& vocab, std::size_t min_len,
                             Stage stage, MinLenMode mode = MinLenMode::Occurrences, unsigned workers = 1) {
  struct Column {
    std::vector<std::pair<int, double>> entries;
    std::size_t length = 0;
  };
  std::vector<Column> cols(docs.size());
  parallel_chunks(docs.size(), workers, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t d = b; d < e; ++d) {
      Column& col = cols[d];
      // doc.tokens is ordered by term and so is the vocabulary, so entries come
      // out sorted by row index.
      for (const auto& [term, tf] : docs[d].tokens) {
        auto it = vocab.index.find(term);
        if (it == vocab.index.end()) continue;
        col.length += mode == MinLenMode::Occurrences ? tf : 1;
        const double w = tfidf_weight(tf, vocab.df[it->second], vocab.n_docs);
        if (w > 0.0) col.entries.emplace_back(static_cast<int>(it->second), w);
      }
      double norm2 = 0.0;
      for (const auto& [_, w] : col.entries) norm2 += w * w;
      if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& [_, w] : col.entries) w *= inv;
      }
    }
  });

  TfIdfMatrix m;
  m.stage = stage;
  m.vocab_hash = vocab.hash;
  std::vector<Eigen::Triplet<double>> triplets;
  int col_index = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (cols[d].length < min_len) {
      m.excluded.push_back({docs[d].channel, cols[d].length});
      continue;
    }
    for (const auto& [row, w] : cols[d].entries) triplets.emplace_back(row, col_index, w);
    m.doc_ids.push_back(docs[d].channel);
    ++col_index;
  }
  m.values.resize(static_cast<Eigen::Index>(vocab.size()), col_index);
  m.values.setFromTriplets(triplets.begin(), triplets.end());
  m.values.makeCompressed();
  return m;
}

// ---------------------------------------------------------------------------
// Sparse triplet files

/// `<prefix>.triplets`: header "n m stage vocab_hash", then one
/// "term_index doc_index value" line per stored entry (column-major order).
/// `<prefix>.docs`: one document id per line, in column order.
inline void write_tfidf(const TfIdfMatrix& m, const std::filesystem::path& prefix) {
  std::ofstream out(prefix.string() + ".triplets", std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + prefix.string() + ".triplets");
  out << m.values.rows() << ' ' << m.values.cols() << ' ' << to_string(m.stage) << ' ' << m.vocab_hash << '\n';
  out << std::setprecision(17);
  for (int c = 0; c < m.values.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(m.values, c); it; ++it) out << it.row() << ' ' << c << ' ' << it.value() << '\n';
  std::ofstream docs(prefix.string() + ".docs", std::ios::binary);
  for (const auto& id : m.doc_ids) docs << id << '\n';
}

inline TfIdfMatrix read_tfidf(const std::filesystem::path& prefix) {
  const std::string tpath = prefix.string() + ".triplets";
  std::ifstream in(tpath);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + tpath);
  TfIdfMatrix m;
  Eigen::Index rows = 0, cols = 0;
  std::string stage;
  if (!(in >> rows >> cols >> stage >> m.vocab_hash)) throw Error(ErrorCode::MalformedRecord, tpath + ": bad header");
  m.stage = parse_stage(stage);
  std::vector<Eigen::Triplet<double>> t;
  long r = 0, c = 0;
  double v = 0;
  while (in >> r >> c >> v) {
    if (r < 0 || r >= rows || c < 0 || c >= cols) throw Error(ErrorCode::MalformedRecord, tpath + ": index out of range");
    t.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
  }
  if (!in.eof()) throw Error(ErrorCode::MalformedRecord, tpath + ": unparsable entry");
  m.values.resize(rows, cols);
  m.values.setFromTriplets(t.begin(), t.end());
  m.values.makeCompressed();
  std::ifstream docs(prefix.string() + ".docs");
  std::string line;
  while (std::getline(docs, line)) m.doc_ids.push_back(line);
  if (static_cast<Eigen::Index>(m.doc_ids.size()) != cols)
    throw Error(ErrorCode::MalformedRecord, prefix.string() + ".docs: expected " + std::to_string(cols) + " ids");
  return m;
}

}  // namespace filterbubble
