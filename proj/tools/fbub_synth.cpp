// Generates the bundled synthetic corpus and, for that corpus only, a topic
// labeling derived from the planted word prefixes.
//
//   fbub_synth corpus --out data/synthetic [--seed 7]
//   fbub_synth label --topics out/inspect/topics.tsv --count 80 --scheme configs/scheme.tsv --out labels.tsv

#include <iostream>

#include <CLI11.hpp>

#include "synth.hpp"

using namespace fbsynth;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic corpus generator for fbub"};
  app.require_subcommand(1);

  Params params;
  fs::path out_dir = "data/synthetic";
  auto* corpus = app.add_subcommand("corpus", "write the synthetic corpus");
  corpus->add_option("--out", out_dir, "output directory");
  corpus->add_option("--seed", params.seed, "generator seed");
  corpus->add_option("--seeds", params.seeds, "number of seed channels");
  corpus->add_option("--related", params.related, "number of related-only channels");

  fs::path topics, scheme, labels_out;
  int count = 0;
  auto* label = app.add_subcommand("label", "label topics of a fit on this corpus from planted prefixes");
  label->add_option("--topics", topics, "inspect/topics.tsv")->required();
  label->add_option("--count", count, "number of topics T")->required()->check(CLI::PositiveNumber);
  label->add_option("--scheme", scheme, "category scheme")->required();
  label->add_option("--out", labels_out, "labels file to write")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (corpus->parsed()) {
      Synth synth(params);
      synth.write(out_dir);
      std::cout << "wrote " << synth.summary() << " to " << out_dir.string() << '\n';
    }
    if (label->parsed()) label_topics(topics, count, scheme, labels_out);
  } catch (const filterbubble::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return filterbubble::exit_code_for(e);
  }
  return 0;
}
