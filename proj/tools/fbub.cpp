// fbub: runs the filter-bubble pipeline stage by stage or end to end.
//
//   fbub run-all --config configs/english.json
//   fbub fit --config configs/english.json --topics 60
//   fbub run-all --config configs/english.json --dry-run
//
// Exit status: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "filterbubble/pipeline.hpp"

namespace fb = filterbubble;
namespace pl = filterbubble::pipeline;
using nlohmann::json;

namespace {

struct Overrides {
  std::optional<int> topics;
  std::optional<std::uint64_t> rng_seed;
  std::optional<std::size_t> sample_cap, retrieval_cap, min_df, min_len;
  std::optional<unsigned> workers;
  std::optional<std::string> output_dir, labels, score_mode;
  std::vector<std::string> set;

  std::map<std::string, json> to_map() const {
    std::map<std::string, json> m;
    if (topics) m["topics"] = *topics;
    if (rng_seed) m["sampling.rng_seed"] = *rng_seed;
    if (sample_cap) m["sampling.sample_cap"] = *sample_cap;
    if (retrieval_cap) m["sampling.retrieval_cap"] = *retrieval_cap;
    if (min_df) m["min_df"] = *min_df;
    if (min_len) m["min_len"] = *min_len;
    if (workers) m["workers"] = *workers;
    // Paths given on the command line are relative to the working directory.
    if (output_dir) m["output_dir"] = std::filesystem::absolute(*output_dir).string();
    if (labels) m["labels"] = std::filesystem::absolute(*labels).string();
    if (score_mode) m["score_mode"] = *score_mode;
    for (const auto& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw fb::Error(fb::ErrorCode::ConfigInvalid, "--set: expected key=value, got '" + kv + "'");
      const std::string value = kv.substr(eq + 1);
      json parsed = json::parse(value, nullptr, false);
      m[kv.substr(0, eq)] = parsed.is_discarded() ? json(value) : parsed;
    }
    return m;
  }
};

void print_dry_run_stage(const pl::PipelineConfig& c, pl::StageName s) {
  bool ok = true;
  for (pl::StageName up : pl::upstream_of(s)) {
    const auto st = pl::artifact_status(c, up);
    std::cout << "  needs " << pl::to_string(up) << ": " << pl::to_string(st) << '\n';
    ok &= st == pl::ArtifactStatus::Valid;
  }
  std::cout << pl::to_string(s) << ": " << (ok ? "ready" : "blocked") << " (own artifact "
            << pl::to_string(pl::artifact_status(c, s)) << ")\n";
  if (!ok) throw fb::Error(fb::ErrorCode::StaleUpstream, pl::to_string(s) + " cannot run until its upstream stages do");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Filter-bubble analysis pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  bool dry_run = false;
  Overrides ov;
  app.add_option("-c,--config", config_path, "pipeline config (JSON)")->required();
  app.add_flag("--dry-run", dry_run, "validate config and the stage DAG, print the plan, run nothing");
  app.add_option("--topics", ov.topics, "number of topics T");
  app.add_option("--rng-seed", ov.rng_seed, "sampling seed");
  app.add_option("--sample-cap", ov.sample_cap, "videos sampled per channel");
  app.add_option("--retrieval-cap", ov.retrieval_cap, "uploads considered per channel");
  app.add_option("--min-df", ov.min_df, "minimum seed document frequency");
  app.add_option("--min-len", ov.min_len, "minimum in-vocabulary document length");
  app.add_option("--workers", ov.workers, "worker threads (0: all cores)");
  app.add_option("--output-dir", ov.output_dir, "artifact directory");
  app.add_option("--labels", ov.labels, "topic labels file");
  app.add_option("--score-mode", ov.score_mode, "score | raw_rank");
  app.add_option("--set", ov.set, "override any config field, e.g. --set solver.tol=1e-5");

  std::vector<CLI::App*> subs;
  for (pl::StageName s : pl::kAllStages)
    subs.push_back(app.add_subcommand(pl::to_string(s), "run the " + pl::to_string(s) + " stage")->fallthrough());
  CLI::App* run_all = app.add_subcommand("run-all", "run every stage that is not up to date")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const pl::PipelineConfig config = pl::validate_config(config_path, ov.to_map());
    if (dry_run) std::cout << "config: " << config.echo().dump(2) << '\n';

    if (run_all->parsed()) {
      const auto summary = pl::run_all(config, dry_run ? std::cout : std::cerr, dry_run);
      if (!dry_run) std::cerr << "run-all: " << summary.executed.size() << " stage(s) executed\n";
      return 0;
    }
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      const pl::StageName s = pl::kAllStages[i];
      if (dry_run) {
        print_dry_run_stage(config, s);
      } else {
        const auto artifact = pl::run_stage(config, s, std::cerr);
        std::cout << pl::to_string(s) << '\t' << artifact.hash << '\n';
      }
    }
  } catch (const fb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return fb::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
