// Writes a synthetic raw corpus as JSONL.
#include <iostream>

#include "CLI11.hpp"
#include "socsum/corpus.h"
#include "socsum/synthetic.h"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic thread corpus", "socsum-synth"};
  app.option_defaults()->always_capture_default();
  socsum::synthetic::Options o;
  std::string out;
  bool toy = false;
  app.add_option("--out", out, "Output JSONL")->required();
  app.add_option("--count", o.n_threads, "Number of threads");
  app.add_option("--min-comments", o.min_comments, "Fewest comments per thread");
  app.add_option("--max-comments", o.max_comments, "Most comments per thread");
  app.add_option("--salient", o.n_salient, "Well-liked on-topic comments per thread");
  app.add_option("--noise", o.noise, "Add markup, links, mentions and laughter");
  app.add_option("--seed", o.seed, "Generator seed");
  app.add_flag("--toy", toy, "Write the fixed five-thread toy corpus instead");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto threads = toy ? socsum::synthetic::toy_corpus() : socsum::synthetic::generate(o);
    socsum::corpus::write_text_file(out, socsum::corpus::serialize_raw_corpus(threads));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
