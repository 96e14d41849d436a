#include "socsum/decoding.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "socsum/training.h"

namespace socsum::decoding {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ArgumentError("decode config: beam_size must be >= 1");
  if (block_ngram != 0 && block_ngram < 2) {
    throw ArgumentError("decode config: block_ngram must be 0 or >= 2");
  }
  if (max_out_len < 1) throw ArgumentError("decode config: max_out_len must be >= 1");
  if (!(length_penalty_alpha >= 0.0)) {
    throw ArgumentError("decode config: length_penalty_alpha must be >= 0");
  }
}

double length_penalty(int generated_len, double alpha) {
  return std::pow((5.0 + generated_len) / 6.0, alpha);
}

bool completes_repeated_ngram(std::span<const int> ids, int token, int n) {
  if (n <= 0) return false;
  const size_t k = static_cast<size_t>(n);
  if (ids.size() + 1 < k + 1) return false;
  // The new n-gram is ids[len-n+1 ..] + token; compare with every earlier one.
  const size_t len = ids.size();
  const size_t tail = len - (k - 1);
  for (size_t start = 0; start + k <= len; ++start) {
    bool same = ids[start + k - 1] == token;
    for (size_t j = 0; same && j + 1 < k; ++j) same = ids[start + j] == ids[tail + j];
    if (same) return true;
  }
  return false;
}

namespace {

struct Candidate {
  size_t parent;
  int token;
  double log_prob;
  double score;
};

double score_of(double log_prob, int generated, double alpha) {
  return log_prob / length_penalty(generated, alpha);
}

void sort_ranked(std::vector<Hypothesis>& hyps) {
  std::stable_sort(hyps.begin(), hyps.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
}

// Allowed next tokens with their log probabilities.
std::vector<std::pair<int, double>> expansions(const StepFunction& step,
                                               const std::vector<int>& ids, int block) {
  const std::vector<double> probs = step(ids);
  std::vector<std::pair<int, double>> out;
  for (size_t v = 0; v < probs.size(); ++v) {
    if (!(probs[v] > 0.0)) continue;
    const int token = static_cast<int>(v);
    if (block > 0 && completes_repeated_ngram(ids, token, block)) continue;
    out.emplace_back(token, std::log(probs[v]));
  }
  return out;
}

}  // namespace

std::vector<Hypothesis> beam_search(const StepFunction& step, const DecodeConfig& cfg,
                                    const PoolObserver& observer) {
  cfg.validate();
  const double alpha = cfg.length_penalty_alpha;
  const double max_penalty = length_penalty(cfg.max_out_len, alpha);
  std::vector<Hypothesis> live{Hypothesis{{tokenizer::kBos}, 0.0, false, 0.0}};
  std::vector<Hypothesis> finished;

  for (int t = 0; t < cfg.max_out_len && !live.empty(); ++t) {
    const int generated = t + 1;
    std::vector<Candidate> cands;
    for (size_t h = 0; h < live.size(); ++h) {
      for (const auto& [token, lp] : expansions(step, live[h].ids, cfg.block_ngram)) {
        const double total = live[h].log_prob + lp;
        cands.push_back({h, token, total, score_of(total, generated, alpha)});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    if (cands.size() > static_cast<size_t>(cfg.beam_size)) cands.resize(cfg.beam_size);

    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      Hypothesis h{live[c.parent].ids, c.log_prob, false, c.score};
      h.ids.push_back(c.token);
      if (c.token == tokenizer::kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    if (next.empty() && finished.empty()) {
      // Every continuation was blocked: keep what we had.
      for (auto& h : live) h.finished = true;
      finished = std::move(live);
      live.clear();
      break;
    }
    live = std::move(next);
    if (t + 1 == cfg.max_out_len) {
      for (auto& h : live) {
        h.finished = true;
        finished.push_back(std::move(h));
      }
      live.clear();
    }
    sort_ranked(finished);
    if (observer) observer(t, finished);

    if (finished.size() >= static_cast<size_t>(cfg.beam_size) && !live.empty()) {
      const double worst = finished[cfg.beam_size - 1].score;
      // Log probabilities only fall and the penalty is largest at max_out_len,
      // so log_prob / max_penalty bounds every future score of a live beam.
      const bool hopeless = std::all_of(live.begin(), live.end(), [&](const Hypothesis& h) {
        return h.log_prob / max_penalty <= worst;
      });
      if (hopeless) live.clear();
    }
  }
  sort_ranked(finished);
  return finished;
}

Hypothesis greedy_search(const StepFunction& step, const DecodeConfig& cfg) {
  cfg.validate();
  Hypothesis h{{tokenizer::kBos}, 0.0, false, 0.0};
  for (int t = 0; t < cfg.max_out_len; ++t) {
    const auto options = expansions(step, h.ids, cfg.block_ngram);
    if (options.empty()) break;
    auto best = options.front();
    for (const auto& o : options) {
      if (o.second > best.second) best = o;
    }
    h.ids.push_back(best.first);
    h.log_prob += best.second;
    if (best.first == tokenizer::kEos) break;
  }
  h.finished = true;
  h.score = score_of(h.log_prob, static_cast<int>(h.ids.size()) - 1, cfg.length_penalty_alpha);
  return h;
}

std::vector<Hypothesis> beam_search(const model::ModelParams& params,
                                    const model::Matrix<float>& enc_att,
                                    const DecodeConfig& cfg) {
  if (enc_att.rows() == 0) throw ArgumentError("beam_search: empty encoding");
  DecodeConfig capped = cfg;
  const int room = static_cast<int>(params.position_embedding.rows()) - 1;
  capped.max_out_len = std::min(cfg.max_out_len, room);
  const model::DecoderSession session(params, enc_att);
  const StepFunction step = [&](std::span<const int> prefix) {
    const std::vector<float> p = session.next_token_probs(prefix);
    std::vector<double> out(p.begin(), p.end());
    out[tokenizer::kPad] = 0.0;
    out[tokenizer::kBos] = 0.0;
    return out;
  };
  return beam_search(step, capped);
}

Summary split_summary(const tokenizer::Vocab& vocab, std::span<const int> ids,
                      bool include_title) {
  Summary s;
  s.ids.assign(ids.begin(), ids.end());
  s.raw = text::normalize_ws(tokenizer::decode(vocab, ids));
  std::vector<std::vector<int>> segments(1);
  for (int id : ids) {
    if (id == tokenizer::kSep) {
      segments.emplace_back();
    } else if (id != tokenizer::kBos && id != tokenizer::kEos && id != tokenizer::kPad) {
      segments.back().push_back(id);
    }
  }
  for (size_t i = 0; i < segments.size(); ++i) {
    std::string part = text::normalize_ws(tokenizer::decode(vocab, segments[i]));
    if (i == 0 && include_title) {
      s.title_part = std::move(part);
    } else if (!part.empty()) {
      s.comment_parts.push_back(std::move(part));
    }
  }
  return s;
}

Summary summarize(const training::TrainState& state, const tokenizer::Vocab& vocab,
                  const corpus::CleanThread& thread, const DecodeConfig& cfg,
                  bool provide_likes) {
  if (thread.comments.empty()) throw ArgumentError("summarize: thread has no comments");
  std::vector<std::string> texts{thread.title};
  for (const auto& c : thread.comments) texts.push_back(c.text);
  const tokenizer::TokenSeq seq = tokenizer::encode(vocab, texts, state.config.max_len);
  const model::AttentionWeights weights = provide_likes
                                              ? model::attention_weights(thread)
                                              : model::uniform_weights(thread.comments.size());
  const auto encoded = model::encode_thread(state.params, seq, weights,
                                            !state.variant.attention_encoding);
  const auto hyps = beam_search(state.params, encoded.enc_att, cfg);
  return split_summary(vocab, hyps.front().ids, state.variant.include_title);
}

}  // namespace socsum::decoding
