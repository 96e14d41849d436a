#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "socsum/corpus.h"
#include "socsum/model.h"
#include "socsum/tokenizer.h"

namespace socsum::training {
struct TrainState;
}

namespace socsum::decoding {

struct DecodeConfig {
  int beam_size = 5;
  int block_ngram = 3;  // 0 disables blocking
  int max_out_len = 128;
  double length_penalty_alpha = 0.6;

  void validate() const;
};

struct Hypothesis {
  std::vector<int> ids;   // starts with BOS
  double log_prob = 0.0;  // sum of per-step log probabilities
  bool finished = false;  // EOS emitted, or cut at max_out_len
  double score = 0.0;     // log_prob / length_penalty(generated length)
};

// ((5 + len) / 6)^alpha
double length_penalty(int generated_len, double alpha);

// True when appending `token` to `ids` would complete an n-gram that already
// occurs in `ids`.
bool completes_repeated_ngram(std::span<const int> ids, int token, int n);

// Next-token probabilities for a prefix (BOS first).
using StepFunction = std::function<std::vector<double>(std::span<const int> prefix)>;

// Called after every expansion step with the current finished pool.
using PoolObserver = std::function<void(int step, const std::vector<Hypothesis>& finished)>;

// Beam search with length-normalized scoring and repeated n-gram blocking.
// Candidates are ranked by normalized score (ties: lower token id, then
// earlier parent). Search stops once beam_size hypotheses have finished and
// no live one can still beat the worst of them, or at max_out_len; live
// hypotheses left at that point are returned as finished without EOS.
// The result is sorted best first and never empty.
std::vector<Hypothesis> beam_search(const StepFunction& step, const DecodeConfig& cfg,
                                    const PoolObserver& observer = nullptr);

// Arg-max decoding with the same blocking and stopping rule.
Hypothesis greedy_search(const StepFunction& step, const DecodeConfig& cfg);

// Model-backed search. PAD and BOS are never generated.
std::vector<Hypothesis> beam_search(const model::ModelParams& params,
                                    const model::Matrix<float>& enc_att,
                                    const DecodeConfig& cfg);

struct Summary {
  std::string title_part;
  std::vector<std::string> comment_parts;
  std::string raw;
  std::vector<int> ids;
};

// Splits generated ids at SEP. For title variants the first segment is the
// title; otherwise every segment is a comment part.
Summary split_summary(const tokenizer::Vocab& vocab, std::span<const int> ids,
                      bool include_title);

// Encodes the thread (all-ones weights unless provide_likes), runs beam
// search, and splits the best hypothesis.
Summary summarize(const training::TrainState& state, const tokenizer::Vocab& vocab,
                  const corpus::CleanThread& thread, const DecodeConfig& cfg,
                  bool provide_likes = false);

}  // namespace socsum::decoding
