#pragma once

// Category scheme, topic labels, threshold selection and multi-label channel
// categorization.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "filterbubble/error.hpp"

namespace filterbubble {

inline constexpr double kCategoryTieTolerance = 1e-12;

enum class Family { ER, NonER };

struct Category {
  Family family = Family::ER;
  std::string name;

  /// Namespaced identifier, e.g. "ER-Music" vs "NER-Music".
  std::string key() const { return (family == Family::ER ? "ER-" : "NER-") + name; }
};

using CategoryId = int;

class CategoryScheme {
 public:
  CategoryScheme() = default;

  void add(Family family, const std::string& name) {
    Category c{family, name};
    if (by_key_.count(c.key())) throw Error(ErrorCode::DuplicateId, c.key());
    by_key_.emplace(c.key(), static_cast<CategoryId>(categories_.size()));
    categories_.push_back(std::move(c));
  }

  std::size_t size() const { return categories_.size(); }
  const Category& at(CategoryId id) const { return categories_.at(static_cast<std::size_t>(id)); }
  std::string key(CategoryId id) const { return at(id).key(); }
  bool is_er(CategoryId id) const { return at(id).family == Family::ER; }

  std::vector<CategoryId> ids(Family family) const {
    std::vector<CategoryId> out;
    for (std::size_t i = 0; i < categories_.size(); ++i)
      if (categories_[i].family == family) out.push_back(static_cast<CategoryId>(i));
    return out;
  }

  /// Accepts a namespaced key ("NER-Music") or a bare name that is unique
  /// across both families ("Anti-Islam").
  CategoryId find(const std::string& name) const {
    if (auto it = by_key_.find(name); it != by_key_.end()) return it->second;
    CategoryId hit = -1;
    for (std::size_t i = 0; i < categories_.size(); ++i) {
      if (categories_[i].name != name) continue;
      if (hit >= 0) throw Error(ErrorCode::UnknownCategory, name + " (ambiguous; use ER-" + name + " or NER-" + name + ")");
      hit = static_cast<CategoryId>(i);
    }
    if (hit < 0) throw Error(ErrorCode::UnknownCategory, name);
    return hit;
  }

  /// The eleven extreme-right categories and the ten general categories.
  static CategoryScheme standard() {
    CategoryScheme s;
    for (const char* n : {"Anti-Islam", "Anti-Semitic", "Conspiracy Theory", "Music", "Neo-Nazi", "Patriot",
                          "Political Party", "Populist", "Revisionist", "Street Movement", "White Nationalist"})
      s.add(Family::ER, n);
    for (const char* n : {"Entertainment", "Gaming", "Military", "Music", "News & Current Affairs", "Politics",
                          "Religion", "Science & Education", "Sport", "Television"})
      s.add(Family::NonER, n);
    return s;
  }

 private:
  std::vector<Category> categories_;
  std::map<std::string, CategoryId> by_key_;
};

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}
}  // namespace detail

/// Scheme file: one "ER<TAB>name" or "NER<TAB>name" line per category.
inline CategoryScheme load_scheme(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open scheme " + path.string());
  CategoryScheme s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    const std::string fam = tab == std::string::npos ? "" : detail::trim(line.substr(0, tab));
    const std::string name = tab == std::string::npos ? "" : detail::trim(line.substr(tab + 1));
    if ((fam != "ER" && fam != "NER") || name.empty())
      throw Error(ErrorCode::MalformedRecord, path.filename().string() + ":" + std::to_string(lineno));
    s.add(fam == "ER" ? Family::ER : Family::NonER, name);
  }
  return s;
}

inline void write_scheme(const CategoryScheme& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& c = s.at(static_cast<CategoryId>(i));
    out << (c.family == Family::ER ? "ER" : "NER") << '\t' << c.name << '\n';
  }
}

// ---------------------------------------------------------------------------
// Topic labels

struct TopicLabel {
  bool excluded = false;                // general-language topic
  std::vector<CategoryId> categories;  // sorted, non-empty unless excluded

  bool operator==(const TopicLabel&) const = default;
};

using TopicLabeling = std::vector<TopicLabel>;

/// Labels file: "topic_index<TAB>category[,category...]" or
/// "topic_index<TAB>EXCLUDED"; '#' lines are comments.
inline TopicLabeling load_labeling(const std::filesystem::path& path, int topics, const CategoryScheme& scheme) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open labels " + path.string());
  std::vector<std::optional<TopicLabel>> seen(static_cast<std::size_t>(std::max(topics, 0)));
  std::string line;
  std::size_t lineno = 0;
  const std::string file = path.filename().string();
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty() || detail::trim(line)[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::MalformedRecord, file + ":" + std::to_string(lineno));
    int topic = -1;
    try {
      std::size_t used = 0;
      topic = std::stoi(detail::trim(line.substr(0, tab)), &used);
      if (used != detail::trim(line.substr(0, tab)).size()) topic = -1;
    } catch (const std::exception&) {
    }
    if (topic < 0 || topic >= topics)
      throw Error(ErrorCode::MalformedRecord, file + ":" + std::to_string(lineno) + ": topic index out of range");
    if (seen[static_cast<std::size_t>(topic)])
      throw Error(ErrorCode::DuplicateId, file + ":" + std::to_string(lineno) + ": topic " + std::to_string(topic));
    TopicLabel label;
    const std::string rest = detail::trim(line.substr(tab + 1));
    if (rest == "EXCLUDED") {
      label.excluded = true;
    } else {
      std::istringstream ss(rest);
      std::string name;
      while (std::getline(ss, name, ',')) {
        name = detail::trim(name);
        if (!name.empty()) label.categories.push_back(scheme.find(name));
      }
      if (label.categories.empty())
        throw Error(ErrorCode::MalformedRecord, file + ":" + std::to_string(lineno) + ": no categories");
      std::sort(label.categories.begin(), label.categories.end());
      label.categories.erase(std::unique(label.categories.begin(), label.categories.end()), label.categories.end());
    }
    seen[static_cast<std::size_t>(topic)] = std::move(label);
  }
  TopicLabeling out;
  for (std::size_t t = 0; t < seen.size(); ++t) {
    if (!seen[t]) throw Error(ErrorCode::MissingTopic, std::to_string(t));
    out.push_back(std::move(*seen[t]));
  }
  return out;
}

inline void write_labeling(const TopicLabeling& labels, const CategoryScheme& scheme, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (std::size_t t = 0; t < labels.size(); ++t) {
    out << t << '\t';
    if (labels[t].excluded) {
      out << "EXCLUDED";
    } else {
      for (std::size_t i = 0; i < labels[t].categories.size(); ++i)
        out << (i ? "," : "") << scheme.key(labels[t].categories[i]);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Threshold sweep

struct ThresholdSweep {
  std::vector<double> grid;
  std::vector<double> mu;  // mean number of topics per channel with weight >= w
  double chosen_w = 0.0;
  double chosen_mu = 0.0;
};

/// 0.010, 0.011, ..., 0.090.
inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 10; i <= 90; ++i) g.push_back(i / 1000.0);
  return g;
}

/// mu(w) over the grid and the w whose mu is closest to one (smaller w on ties).
inline ThresholdSweep sweep_threshold(const Eigen::MatrixXd& H, const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorCode::EmptyGrid, "threshold grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw Error(ErrorCode::ConfigInvalid, "threshold grid values must lie in [0,1]");
    if (i && grid[i] < grid[i - 1]) throw Error(ErrorCode::ConfigInvalid, "threshold grid must be ascending");
  }
  std::vector<double> entries(H.data(), H.data() + H.size());
  std::sort(entries.begin(), entries.end());
  const auto m = static_cast<std::size_t>(H.cols());

  ThresholdSweep s;
  s.grid = grid;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (double w : grid) {
    const auto count = static_cast<std::size_t>(entries.end() - std::lower_bound(entries.begin(), entries.end(), w));
    const double mu = m ? static_cast<double>(count) / static_cast<double>(m) : 0.0;
    s.mu.push_back(mu);
    // |mu - 1| compared exactly as |count - m| since every mu shares the denominator.
    const std::size_t gap = count > m ? count - m : m - count;
    if (gap < best_gap) {
      best_gap = gap;
      s.chosen_w = w;
      s.chosen_mu = mu;
    }
  }
  return s;
}

inline void write_sweep(const ThresholdSweep& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << std::setprecision(17);
  out << "#chosen_w\t" << s.chosen_w << "\tmu\t" << s.chosen_mu << '\n';
  for (std::size_t i = 0; i < s.grid.size(); ++i) out << s.grid[i] << '\t' << s.mu[i] << '\n';
}

// ---------------------------------------------------------------------------
// Channel categorization

struct ChannelOutcome {
  enum class Kind { Categorized, GreySheep, TopicExcluded };
  Kind kind = Kind::GreySheep;
  std::vector<CategoryId> categories;  // sorted; non-empty iff Categorized

  bool categorized() const { return kind == Kind::Categorized; }
  bool operator==(const ChannelOutcome&) const = default;
};

inline std::string to_string(ChannelOutcome::Kind k) {
  switch (k) {
    case ChannelOutcome::Kind::Categorized: return "categorized";
    case ChannelOutcome::Kind::GreySheep: return "grey_sheep";
    case ChannelOutcome::Kind::TopicExcluded: return "topic_excluded";
  }
  return "?";
}

/// Selects topics with weight >= w, drops excluded topics, sums each surviving
/// topic's weight into each of its categories and keeps the top category
/// (several on a tie).
inline ChannelOutcome categorize_channel(const Eigen::Ref<const Eigen::VectorXd>& h, double w,
                                         const TopicLabeling& labeling) {
  std::vector<int> selected;
  for (Eigen::Index t = 0; t < h.size(); ++t)
    if (h[t] >= w) selected.push_back(static_cast<int>(t));
  if (selected.empty()) return {ChannelOutcome::Kind::GreySheep, {}};

  std::map<CategoryId, double> totals;
  for (int t : selected) {
    if (static_cast<std::size_t>(t) >= labeling.size()) throw Error(ErrorCode::LabelingIncomplete, "topic " + std::to_string(t));
    const TopicLabel& label = labeling[static_cast<std::size_t>(t)];
    if (label.excluded) continue;
    for (CategoryId c : label.categories) totals[c] += h[t];
  }
  if (totals.empty()) return {ChannelOutcome::Kind::TopicExcluded, {}};

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [_, v] : totals) best = std::max(best, v);
  ChannelOutcome out{ChannelOutcome::Kind::Categorized, {}};
  for (const auto& [c, v] : totals)
    if (v >= best - kCategoryTieTolerance) out.categories.push_back(c);
  return out;
}

using ChannelCategorization = std::map<std::string, ChannelOutcome>;

inline ChannelCategorization categorize_channels(const Eigen::MatrixXd& H, const std::vector<std::string>& doc_ids,
                                                 double w, const TopicLabeling& labeling) {
  if (static_cast<Eigen::Index>(doc_ids.size()) != H.cols())
    throw Error(ErrorCode::DimensionMismatch, "channel ids do not match H columns");
  if (static_cast<Eigen::Index>(labeling.size()) != H.rows())
    throw Error(ErrorCode::LabelingIncomplete, "labeling covers " + std::to_string(labeling.size()) + " of " +
                                                   std::to_string(H.rows()) + " topics");
  ChannelCategorization out;
  for (Eigen::Index c = 0; c < H.cols(); ++c)
    out[doc_ids[static_cast<std::size_t>(c)]] = categorize_channel(H.col(c), w, labeling);
  return out;
}

/// Lines "channel <TAB> outcome <TAB> category[,category...]".
inline void write_categorization(const ChannelCategorization& cats, const CategoryScheme& scheme,
                                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& [channel, o] : cats) {
    out << channel << '\t' << to_string(o.kind) << '\t';
    for (std::size_t i = 0; i < o.categories.size(); ++i) out << (i ? "," : "") << scheme.key(o.categories[i]);
    out << '\n';
  }
}

inline ChannelCategorization read_categorization(const std::filesystem::path& path, const CategoryScheme& scheme) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  ChannelCategorization out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string channel, kind, cats;
    std::getline(ss, channel, '\t');
    std::getline(ss, kind, '\t');
    std::getline(ss, cats);
    ChannelOutcome o;
    if (kind == "categorized") o.kind = ChannelOutcome::Kind::Categorized;
    else if (kind == "grey_sheep") o.kind = ChannelOutcome::Kind::GreySheep;
    else if (kind == "topic_excluded") o.kind = ChannelOutcome::Kind::TopicExcluded;
    else throw Error(ErrorCode::MalformedRecord, path.filename().string() + ": " + line);
    std::istringstream cs(cats);
    std::string name;
    while (std::getline(cs, name, ','))
      if (!name.empty()) o.categories.push_back(scheme.find(name));
    out[channel] = std::move(o);
  }
  return out;
}

}  // namespace filterbubble
