#pragma once

#include <cstdint>
#include <vector>

#include "socsum/corpus.h"

// Seeded generator of Spanish-like comment threads. Each thread has a topic;
// its title and its well-liked comments are written from the topic's words,
// while the remaining comments are low-liked chatter that drifts to another
// topic. Raw noise (markup, links, mentions, laughter, punctuation runs and
// too-short comments) exercises the cleaning rules.
namespace socsum::synthetic {

struct Options {
  int n_threads = 20;
  int min_comments = 5;
  int max_comments = 9;
  int n_salient = 3;
  bool noise = true;
  uint64_t seed = 1;
};

std::vector<corpus::RawThread> generate(const Options& options);

// Five short threads with exactly one liked comment each.
std::vector<corpus::RawThread> toy_corpus();

}  // namespace socsum::synthetic
