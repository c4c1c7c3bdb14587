#pragma once

// Filter-bubble measurements over categorized seed and related channels.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "filterbubble/catlab.hpp"
#include "filterbubble/error.hpp"
#include "filterbubble/rankagg.hpp"

namespace filterbubble {

inline const std::vector<std::size_t> kDefaultKs = {1, 3, 5, 7, 10};
inline constexpr double kDefaultDisplayCutoff = 0.06;

struct SeedProportions {
  std::string seed;
  std::size_t k = 0;
  std::map<CategoryId, double> dist;
  std::vector<std::string> related;  // the <= k channels used
};

using RankingIndex = std::map<std::string, AggregatedRanking>;

inline RankingIndex index_rankings(const std::vector<AggregatedRanking>& rankings) {
  RankingIndex out;
  for (const auto& r : rankings) out.emplace(r.seed, r);
  return out;
}

/// Category distribution of the top-k related channels that survive
/// exclusion (grey sheep, topic-excluded, or uncategorized). Each channel
/// carries mass 1 split evenly over its categories. nullopt means skip.
inline std::optional<SeedProportions> seed_proportions(const std::string& seed, std::size_t k,
                                                       const AggregatedRanking& ranking,
                                                       const ChannelCategorization& cats) {
  std::set<std::string> exclude;
  for (const auto& c : ranking.ranked) {
    auto it = cats.find(c);
    if (it == cats.end() || !it->second.categorized()) exclude.insert(c);
  }
  SeedProportions p{seed, k, {}, top_k(ranking, k, exclude)};
  if (p.related.empty()) return std::nullopt;
  for (const auto& c : p.related) {
    const auto& cs = cats.at(c).categories;
    for (CategoryId id : cs) p.dist[id] += 1.0 / static_cast<double>(cs.size());
  }
  for (auto& [_, v] : p.dist) v /= static_cast<double>(p.related.size());
  return p;
}

struct CategoryCell {
  std::map<CategoryId, double> mean;  // related category -> mean proportion
  std::size_t n_seeds = 0;
};

struct AggregateCell {
  std::size_t k = 0;
  double same_er = 0.0;
  double other_er = 0.0;
  double non_er = 0.0;
  std::size_t n_seeds = 0;
};

struct SkipRecord {
  std::string seed;
  std::size_t k = 0;  // 0: skipped for every k
  std::string reason;
};

struct BubbleReport {
  std::vector<std::size_t> ks;
  std::map<std::pair<CategoryId, std::size_t>, CategoryCell> cells;  // (seed ER category, k)
  std::vector<AggregateCell> aggregate;                              // one per k
  std::vector<CategoryId> empty_groups;                              // ER categories with no seed
  std::vector<SkipRecord> exclusions;
  std::vector<std::string> er_seeds;           // ER-categorized seeds considered
  std::vector<std::string> contributing_seeds;  // those contributing to at least one cell
};

/// Per ER category and k, the unweighted mean over that category's seeds of
/// their related-category distributions; plus the same/other/non-ER
/// aggregate over all ER seeds.
inline BubbleReport category_report(const std::vector<std::string>& seeds, const std::vector<std::size_t>& ks,
                                    const RankingIndex& rankings, const ChannelCategorization& cats,
                                    const CategoryScheme& scheme) {
  BubbleReport report;
  report.ks = ks;
  for (std::size_t i = 1; i < ks.size(); ++i)
    if (ks[i] <= ks[i - 1]) throw Error(ErrorCode::ConfigInvalid, "k list must be strictly ascending");

  struct Sums {
    std::map<CategoryId, double> total;
    std::size_t n = 0;
  };
  std::map<std::pair<CategoryId, std::size_t>, Sums> sums;
  std::map<std::size_t, AggregateCell> agg;
  std::set<CategoryId> populated;

  std::vector<std::string> ordered(seeds.begin(), seeds.end());
  std::sort(ordered.begin(), ordered.end());
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

  for (const auto& seed : ordered) {
    auto cat = cats.find(seed);
    if (cat == cats.end()) {
      report.exclusions.push_back({seed, 0, "seed has no categorization"});
      continue;
    }
    if (!cat->second.categorized()) {
      report.exclusions.push_back({seed, 0, "seed is " + to_string(cat->second.kind)});
      continue;
    }
    std::set<CategoryId> er_set;
    for (CategoryId c : cat->second.categories)
      if (scheme.is_er(c)) er_set.insert(c);
    if (er_set.empty()) {
      report.exclusions.push_back({seed, 0, "seed has no ER category"});
      continue;
    }
    report.er_seeds.push_back(seed);
    for (CategoryId c : er_set) populated.insert(c);
    auto r = rankings.find(seed);
    if (r == rankings.end()) {
      report.exclusions.push_back({seed, 0, "no aggregated ranking"});
      continue;
    }
    bool contributed = false;
    for (std::size_t k : ks) {
      auto p = seed_proportions(seed, k, r->second, cats);
      if (!p) {
        report.exclusions.push_back({seed, k, "no categorized related channel in top k"});
        continue;
      }
      contributed = true;
      for (CategoryId c : er_set) {
        auto& s = sums[{c, k}];
        ++s.n;
        for (const auto& [rc, v] : p->dist) s.total[rc] += v;
      }
      auto& a = agg[k];
      a.k = k;
      ++a.n_seeds;
      for (const auto& [rc, v] : p->dist) {
        if (er_set.count(rc)) a.same_er += v;
        else if (scheme.is_er(rc)) a.other_er += v;
        else a.non_er += v;
      }
    }
    if (contributed) report.contributing_seeds.push_back(seed);
    else report.exclusions.push_back({seed, 0, "skipped at every k"});
  }

  for (CategoryId c : scheme.ids(Family::ER)) {
    if (!populated.count(c)) {
      report.empty_groups.push_back(c);
      continue;
    }
    for (std::size_t k : ks) {
      CategoryCell cell;
      auto it = sums.find({c, k});
      if (it != sums.end()) {
        cell.n_seeds = it->second.n;
        for (const auto& [rc, v] : it->second.total) cell.mean[rc] = v / static_cast<double>(cell.n_seeds);
      }
      report.cells[{c, k}] = std::move(cell);
    }
  }
  for (std::size_t k : ks) {
    AggregateCell a = agg.count(k) ? agg[k] : AggregateCell{k, 0, 0, 0, 0};
    if (a.n_seeds) {
      const double n = static_cast<double>(a.n_seeds);
      a.same_er /= n;
      a.other_er /= n;
      a.non_er /= n;
    }
    report.aggregate.push_back(a);
  }
  return report;
}

struct CycleStat {
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  double fraction = 0.0;
};

/// Share of the given ER seeds that occur in some other ER seed's top-k_max
/// aggregated related list.
inline CycleStat cycle_stat(const std::vector<std::string>& er_seeds, const RankingIndex& rankings, std::size_t k_max) {
  if (k_max < 1) throw Error(ErrorCode::ConfigInvalid, "k_max must be >= 1");
  std::set<std::string> seeds(er_seeds.begin(), er_seeds.end());
  std::set<std::string> reached;
  for (const auto& s : seeds) {
    auto r = rankings.find(s);
    if (r == rankings.end()) continue;
    for (const auto& c : top_k(r->second, k_max))
      if (c != s && seeds.count(c)) reached.insert(c);
  }
  CycleStat out{reached.size(), seeds.size(), 0.0};
  if (out.denominator) out.fraction = static_cast<double>(out.numerator) / static_cast<double>(out.denominator);
  return out;
}

struct Verdict {
  // (seed ER category, k) -> the top related category by mean is an ER category
  std::map<std::pair<CategoryId, std::size_t>, bool> cells;
  std::map<std::pair<CategoryId, std::size_t>, std::vector<CategoryId>> top_related;
  // per k: same-ER share is the largest of the three; ER total >= non-ER
  std::map<std::size_t, bool> same_er_dominant;
  std::map<std::size_t, bool> er_outweighs_non_er;
};

inline Verdict bubble_verdict(const BubbleReport& report, const CategoryScheme& scheme) {
  Verdict v;
  for (const auto& [key, cell] : report.cells) {
    if (cell.n_seeds == 0 || cell.mean.empty()) continue;
    double best = 0.0;
    for (const auto& [_, m] : cell.mean) best = std::max(best, m);
    std::vector<CategoryId> top;
    for (const auto& [rc, m] : cell.mean)
      if (m >= best - kCategoryTieTolerance) top.push_back(rc);
    v.cells[key] = std::any_of(top.begin(), top.end(), [&](CategoryId c) { return scheme.is_er(c); });
    v.top_related[key] = std::move(top);
  }
  for (const auto& a : report.aggregate) {
    if (a.n_seeds == 0) continue;
    v.same_er_dominant[a.k] = a.same_er >= a.other_er && a.same_er >= a.non_er;
    v.er_outweighs_non_er[a.k] = a.same_er + a.other_er >= a.non_er;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Output

inline std::string plot_file_name(const std::string& key) {
  std::string s;
  for (char c : key) s.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return "category_" + s + ".csv";
}

/// Writes report.tsv, aggregate.tsv, verdicts.tsv, cycle.tsv, exclusions.tsv
/// and plots/*.csv into dir.
inline void write_bubble_outputs(const BubbleReport& report, const Verdict& verdict, const CycleStat& cycle,
                                 const CategoryScheme& scheme, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "plots");
  auto open = [&](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
    out << std::setprecision(17);
    return out;
  };
  {
    auto out = open(dir / "report.tsv");
    out << "category\tk\trelated_category\tmean\tn_seeds\n";
    for (const auto& [key, cell] : report.cells)
      for (const auto& [rc, m] : cell.mean)
        out << scheme.key(key.first) << '\t' << key.second << '\t' << scheme.key(rc) << '\t' << m << '\t'
            << cell.n_seeds << '\n';
  }
  {
    auto out = open(dir / "aggregate.tsv");
    out << "k\tsame_er\tother_er\tnon_er\tn_seeds\n";
    for (const auto& a : report.aggregate)
      out << a.k << '\t' << a.same_er << '\t' << a.other_er << '\t' << a.non_er << '\t' << a.n_seeds << '\n';
    auto plot = open(dir / "plots" / "aggregate.csv");
    plot << "k,same_er,other_er,non_er,n_seeds\n";
    for (const auto& a : report.aggregate)
      plot << a.k << ',' << a.same_er << ',' << a.other_er << ',' << a.non_er << ',' << a.n_seeds << '\n';
  }
  for (CategoryId c : scheme.ids(Family::ER)) {
    if (std::find(report.empty_groups.begin(), report.empty_groups.end(), c) != report.empty_groups.end()) continue;
    auto plot = open(dir / "plots" / plot_file_name(scheme.key(c)));
    plot << "k,related_category,mean,n_seeds\n";
    for (std::size_t k : report.ks) {
      const auto& cell = report.cells.at({c, k});
      for (const auto& [rc, m] : cell.mean) plot << k << ",\"" << scheme.key(rc) << "\"," << m << ',' << cell.n_seeds << '\n';
    }
  }
  {
    auto out = open(dir / "verdicts.tsv");
    out << "category\tk\tbubble\ttop_related\n";
    for (const auto& [key, b] : verdict.cells) {
      out << scheme.key(key.first) << '\t' << key.second << '\t' << (b ? "true" : "false") << '\t';
      const auto& top = verdict.top_related.at(key);
      for (std::size_t i = 0; i < top.size(); ++i) out << (i ? "," : "") << scheme.key(top[i]);
      out << '\n';
    }
    for (const auto& [k, b] : verdict.same_er_dominant)
      out << "aggregate\t" << k << "\tsame_er_dominant=" << (b ? "true" : "false")
          << "\ter_outweighs_non_er=" << (verdict.er_outweighs_non_er.at(k) ? "true" : "false") << '\n';
  }
  {
    auto out = open(dir / "cycle.tsv");
    out << "numerator\tdenominator\tfraction\n" << cycle.numerator << '\t' << cycle.denominator << '\t' << cycle.fraction << '\n';
  }
  {
    auto out = open(dir / "exclusions.tsv");
    out << "seed\tk\treason\n";
    for (const auto& e : report.exclusions) out << e.seed << '\t' << (e.k ? std::to_string(e.k) : "*") << '\t' << e.reason << '\n';
    for (CategoryId c : report.empty_groups) out << "-\t*\tEmptyCategoryGroup(" << scheme.key(c) << ")\n";
  }
}

/// Human-readable summary. Related categories below `cutoff` are left out of
/// the listing only; stored numbers are unaffected.
inline std::string render_report(const BubbleReport& report, const Verdict& verdict, const CycleStat& cycle,
                                 const CategoryScheme& scheme, double cutoff = kDefaultDisplayCutoff) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << "ER seeds: " << report.er_seeds.size() << " (contributing: " << report.contributing_seeds.size() << ")\n\n";
  for (CategoryId c : scheme.ids(Family::ER)) {
    out << scheme.key(c);
    if (std::find(report.empty_groups.begin(), report.empty_groups.end(), c) != report.empty_groups.end()) {
      out << ": no seeds\n\n";
      continue;
    }
    out << '\n';
    for (std::size_t k : report.ks) {
      const auto& cell = report.cells.at({c, k});
      out << "  k=" << std::setw(2) << k << "  n=" << cell.n_seeds;
      if (auto v = verdict.cells.find({c, k}); v != verdict.cells.end()) out << (v->second ? "  bubble" : "  no-bubble");
      out << "\n";
      std::vector<std::pair<double, CategoryId>> rows;
      for (const auto& [rc, m] : cell.mean)
        if (m >= cutoff) rows.emplace_back(-m, rc);
      std::sort(rows.begin(), rows.end());
      for (const auto& [neg, rc] : rows) out << "      " << std::setw(28) << std::left << scheme.key(rc) << std::right << -neg << '\n';
    }
    out << '\n';
  }
  out << "Aggregate (same ER / other ER / non-ER)\n";
  for (const auto& a : report.aggregate)
    out << "  k=" << std::setw(2) << a.k << "  " << a.same_er << " / " << a.other_er << " / " << a.non_er
        << "  n=" << a.n_seeds << '\n';
  out << "\nER seeds in another ER seed's top-k: " << cycle.numerator << " of " << cycle.denominator << " ("
      << cycle.fraction * 100.0 << "%)\n";
  return out.str();
}

}  // namespace filterbubble
