// Acceptance checks: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "socsum/cli.h"
#include "socsum/common.h"
#include "socsum/corpus.h"
#include "socsum/decoding.h"
#include "socsum/evaluation.h"
#include "socsum/model.h"
#include "socsum/synthetic.h"
#include "socsum/tokenizer.h"
#include "socsum/training.h"

namespace fs = std::filesystem;
using namespace socsum;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Outcome attention_law() {
  Rng rng(101);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 1 + rng.below(20);
    std::vector<int64_t> likes(n);
    const uint64_t range = rng.uniform() < 0.2 ? 3 : 100000;
    for (auto& l : likes) l = static_cast<int64_t>(rng.below(range));
    const auto w = model::attention_weights(likes).weights;
    const int64_t max_likes = *std::max_element(likes.begin(), likes.end());
    bool ok = w.size() == n + 1 && w[0] == 1.0;
    for (size_t i = 0; ok && i < n; ++i) {
      ok = w[i + 1] >= 0.0 && w[i + 1] <= 1.0;
      if (max_likes > 0 && likes[i] == max_likes) ok = ok && w[i + 1] == 1.0;
      for (size_t j = 0; ok && j < n; ++j) {
        if (likes[i] >= likes[j]) ok = w[i + 1] >= w[j + 1];
      }
    }
    std::vector<int64_t> scaled(likes);
    const int64_t factor = 1 + static_cast<int64_t>(rng.below(1000));
    for (auto& l : scaled) l *= factor;
    ok = ok && model::attention_weights(scaled).weights == w;
    violations += ok ? 0 : 1;
  }
  return {violations == 0, "1000 threads, violations " + std::to_string(violations)};
}

Outcome hadamard_contract() {
  model::ModelConfig c;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_ff = 64;
  c.n_enc_blocks = 2;
  c.n_dec_blocks = 1;
  c.max_len = 64;
  c.vocab_size = 40;
  const auto params = model::init_params<float>(c, 5);
  const auto seq = tokenizer::assemble({{5, 6, 7}, {8, 9, 10}, {11, 12}, {13, 14, 15, 16}}, 64);
  const auto ones = model::encode_thread(params, seq, model::uniform_weights(3), false);
  bool ok = (ones.enc_att.array() == ones.enc.array()).all();
  const model::AttentionWeights w{{1.0, 0.0, 0.7, 0.0}};
  const auto scaled = model::encode_thread(params, seq, w, false);
  const auto sources = seq.sources();
  int zero_rows = 0;
  for (size_t t = 0; t < sources.size(); ++t) {
    if (w.weights[sources[t]] == 0.0) {
      ok = ok && scaled.enc_att.row(t).isZero(0.0f);
      ++zero_rows;
    }
  }
  return {ok && zero_rows > 0,
          "exact equality under all-ones, " + std::to_string(zero_rows) + " zeroed rows"};
}

Outcome gradient_check() {
  model::ModelConfig c;
  c.d_model = 8;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_len = 16;
  c.vocab_size = 20;
  c.dropout = 0.0;
  c.label_smoothing = 0.1;
  auto params = model::init_params<double>(c, 21, 0.5);
  Rng perturb(4);
  params.for_each([&](const std::string& name, model::Matrix<double>& m) {
    if (name.ends_with(".gain") || name.ends_with(".bias") || name.ends_with(".b")) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.3 * perturb.normal();
    }
  });
  const auto seq = tokenizer::assemble({{5, 6, 7}, {8, 9}, {10, 11, 12}}, 16);
  const model::AttentionWeights w{{1.0, 0.6, 0.25}};
  const std::vector<int> target = {tokenizer::kBos, 8, 9, tokenizer::kSep, 10, 11, 13,
                                   tokenizer::kEos};
  auto grads = model::zero_params<double>(c);
  model::forward_loss(params, seq, w, target, c, false, &grads);
  auto loss = [&] {
    return model::forward_loss(params, seq, w, target, c, false,
                               static_cast<model::BasicParams<double>*>(nullptr))
        .loss;
  };
  constexpr double kStep = 1e-4;
  Rng pick(99);
  auto tensors = params.tensors();
  const auto grad_tensors = grads.tensors();
  int checked = 0;
  double worst = 0.0;
  for (size_t ti = 0; ti < tensors.size(); ++ti) {
    auto& m = *tensors[ti];
    for (int s = 0; s < 20; ++s) {
      const Eigen::Index k = static_cast<Eigen::Index>(pick.below(m.size()));
      const double saved = m.data()[k];
      m.data()[k] = saved + kStep;
      const double up = loss();
      m.data()[k] = saved - kStep;
      const double down = loss();
      m.data()[k] = saved;
      const double numeric = (up - down) / (2 * kStep);
      const double analytic = grad_tensors[ti]->data()[k];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      const double diff = std::abs(numeric - analytic);
      const double err = scale < 1e-9 ? diff : diff / scale;
      worst = std::max(worst, err);
      ++checked;
    }
  }
  return {worst <= 1e-4, std::to_string(checked) + " entries, worst rel err " + fmt(worst, 3)};
}

Outcome overfit(const fs::path& data_dir) {
  const auto threads = corpus::preprocess(corpus::load_corpus(data_dir / "toy_5.jsonl"));
  const auto vocab = tokenizer::train_vocab(threads, 200, 1);
  model::ModelConfig c;
  c.dropout = 0.0;
  training::TrainOptions o;
  o.optimizer.lr = 1e-3;
  o.optimizer.warmup = 50;
  o.optimizer.batch_size = 5;
  o.max_steps = 500;
  o.eval_every = 500;
  const auto state =
      training::train(threads, {}, vocab, training::TaskVariant::from_id(1), c, o, 1);
  return {state.last_train_loss < 0.1,
          "loss " + fmt(state.last_train_loss, 4) + " after " + std::to_string(state.step) +
              " steps"};
}

std::vector<double> inclusion_oracle(const std::vector<double>& w, int k) {
  std::vector<double> p(w.size(), 0.0);
  std::vector<bool> used(w.size(), false);
  std::function<void(int, double)> rec = [&](int left, double prob) {
    if (left == 0) {
      for (size_t i = 0; i < w.size(); ++i) p[i] += used[i] ? prob : 0.0;
      return;
    }
    double total = 0.0;
    for (size_t i = 0; i < w.size(); ++i) total += used[i] ? 0.0 : w[i];
    for (size_t i = 0; i < w.size(); ++i) {
      if (used[i] || w[i] <= 0.0) continue;
      used[i] = true;
      rec(left - 1, prob * w[i] / total);
      used[i] = false;
    }
  };
  rec(k, 1.0);
  return p;
}

Outcome sampling_law() {
  double worst = 0.0;
  const std::vector<std::pair<std::vector<int64_t>, int>> cases = {
      {{9, 3}, 1}, {{100, 49, 25, 4, 1}, 3}, {{7, 7, 0, 30, 2, 11}, 3}};
  Rng rng(2024);
  for (const auto& [likes, k] : cases) {
    const auto w = model::attention_weights(likes);
    const auto oracle =
        inclusion_oracle(std::vector<double>(w.weights.begin() + 1, w.weights.end()), k);
    std::vector<int> hits(likes.size(), 0);
    constexpr int kDraws = 10000;
    for (int d = 0; d < kDraws; ++d) {
      for (int idx : training::sample_comments(w, k, rng)) ++hits[idx - 1];
    }
    for (size_t i = 0; i < likes.size(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(hits[i]) / kDraws - oracle[i]));
    }
  }
  return {worst <= 0.02, "10k draws per case, worst abs deviation " + fmt(worst, 3)};
}

evaluation::RougeScore brute_rouge(const std::string& cand, const std::string& ref, int n) {
  auto grams = [&](const std::string& s) {
    std::vector<std::string> words;
    std::string w;
    for (char ch : s + " ") {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isspace(c) || std::ispunct(c)) {
        if (!w.empty()) words.push_back(w);
        w.clear();
      } else {
        w += static_cast<char>(std::tolower(c));
      }
    }
    std::vector<std::vector<std::string>> out;
    for (size_t i = 0; i + n <= words.size(); ++i) {
      out.emplace_back(words.begin() + i, words.begin() + i + n);
    }
    return out;
  };
  const auto c = grams(cand);
  const auto r = grams(ref);
  auto pool = r;
  int matched = 0;
  for (const auto& g : c) {
    const auto it = std::find(pool.begin(), pool.end(), g);
    if (it != pool.end()) {
      ++matched;
      pool.erase(it);
    }
  }
  evaluation::RougeScore s;
  s.recall = r.empty() ? 0.0 : static_cast<double>(matched) / r.size();
  s.precision = c.empty() ? 0.0 : static_cast<double>(matched) / c.size();
  return s;
}

Outcome rouge_oracle() {
  const std::vector<std::string> words = {"el", "la", "gol", "El", "gol,", "la.", "voto", "!",
                                          "de", "(de)"};
  Rng rng(55);
  auto random_text = [&] {
    std::string s;
    const int n = static_cast<int>(rng.below(12));
    for (int i = 0; i < n; ++i) s += words[rng.below(words.size())] + " ";
    return s;
  };
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::string a = random_text(), b = random_text();
    for (int n : {1, 2}) {
      const auto got = evaluation::rouge_n(a, b, n);
      const auto want = brute_rouge(a, b, n);
      if (got.recall != want.recall || got.precision != want.precision) ++mismatches;
    }
  }
  return {mismatches == 0, "2000 comparisons, mismatches " + std::to_string(mismatches)};
}

Outcome xent_gibbs() {
  Rng rng(77);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 1 + rng.below(10);
    std::vector<int64_t> likes(n);
    std::vector<double> recalls(n);
    for (auto& l : likes) l = static_cast<int64_t>(rng.below(60));
    const bool same = trial % 4 == 0;
    std::vector<double> likes_d(likes.begin(), likes.end());
    for (size_t i = 0; i < n; ++i) recalls[i] = same ? likes_d[i] : rng.uniform();
    const auto p = evaluation::smoothed_distribution(likes_d);
    const auto q = evaluation::smoothed_distribution(recalls);
    const double xent = evaluation::cross_entropy(p, q);
    const double h = evaluation::entropy(p);
    double diff = 0.0;
    for (size_t i = 0; i < n; ++i) diff = std::max(diff, std::abs(p[i] - q[i]));
    const bool equal = diff < 1e-12;
    const bool tight = std::abs(xent - h) <= 1e-9;
    if (xent < h - 1e-12 || equal != tight) ++violations;
  }
  const double worked = evaluation::cross_entropy({0.75, 0.25}, {0.5, 0.5});
  const double err = std::abs(worked - std::numbers::ln2);
  return {violations == 0 && err <= 1e-12,
          "1000 pairs, violations " + std::to_string(violations) + ", ln2 error " + fmt(err, 3)};
}

decoding::StepFunction table_model(int vocab, uint64_t seed, double eos_bias) {
  return [=](std::span<const int> prefix) {
    uint64_t h = fnv1a64("", seed);
    for (int id : prefix) h = fnv1a64(std::to_string(id) + ",", h);
    Rng rng(h);
    std::vector<double> p(vocab, 0.0);
    double total = 0.0;
    for (int v = 2; v < vocab; ++v) {
      p[v] = 0.05 + rng.uniform() * (v == tokenizer::kEos ? eos_bias : 1.0);
      total += p[v];
    }
    for (double& x : p) x /= total;
    return p;
  };
}

bool repeats(const std::vector<int>& ids, int n) {
  std::set<std::vector<int>> seen;
  for (size_t i = 0; i + n <= ids.size(); ++i) {
    if (!seen.insert(std::vector<int>(ids.begin() + i, ids.begin() + i + n)).second) return true;
  }
  return false;
}

decoding::Hypothesis enumerate_best(const decoding::StepFunction& step,
                                    const decoding::DecodeConfig& cfg) {
  decoding::Hypothesis best;
  best.score = -std::numeric_limits<double>::infinity();
  std::function<void(std::vector<int>&, double)> rec = [&](std::vector<int>& ids, double lp) {
    const int generated = static_cast<int>(ids.size()) - 1;
    if (generated > 0 && (ids.back() == tokenizer::kEos || generated == cfg.max_out_len)) {
      const double s = lp / decoding::length_penalty(generated, cfg.length_penalty_alpha);
      if (s > best.score) best = {ids, lp, true, s};
      return;
    }
    const auto p = step(ids);
    for (size_t v = 0; v < p.size(); ++v) {
      if (p[v] <= 0.0) continue;
      ids.push_back(static_cast<int>(v));
      if (!(cfg.block_ngram > 0 && repeats(ids, cfg.block_ngram))) rec(ids, lp + std::log(p[v]));
      ids.pop_back();
    }
  };
  std::vector<int> start{tokenizer::kBos};
  rec(start, 0.0);
  return best;
}

Outcome beam_oracle() {
  int oracle_miss = 0, greedy_miss = 0, blocked = 0;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    decoding::DecodeConfig cfg;
    cfg.max_out_len = 4;
    cfg.beam_size = 625;
    cfg.block_ngram = seed % 2 ? 3 : 0;
    const auto step = table_model(5, seed, 0.3);
    if (decoding::beam_search(step, cfg).front().ids != enumerate_best(step, cfg).ids) {
      ++oracle_miss;
    }
    cfg.beam_size = 1;
    cfg.block_ngram = 3;
    cfg.max_out_len = 16;
    const auto greedy = decoding::greedy_search(table_model(7, seed, 0.1), cfg);
    const auto beam1 = decoding::beam_search(table_model(7, seed, 0.1), cfg);
    if (beam1.front().ids != greedy.ids) ++greedy_miss;
    cfg.beam_size = 5;
    for (const auto& h : decoding::beam_search(table_model(6, seed, 0.05), cfg)) {
      if (repeats(h.ids, 3)) ++blocked;
    }
    if (repeats(greedy.ids, 3)) ++blocked;
  }
  return {oracle_miss + greedy_miss + blocked == 0,
          "50 tables: oracle misses " + std::to_string(oracle_miss) + ", beam-1 vs greedy " +
              std::to_string(greedy_miss) + ", repeated trigrams " + std::to_string(blocked)};
}

Outcome directional(int steps, int n_seeds) {
  const auto threads = corpus::partition(
      corpus::preprocess(synthetic::generate({.n_threads = 200, .seed = 7})), {}, 1);
  const auto train = corpus::select_fold(threads, corpus::Fold::kTrain);
  const auto validation = corpus::select_fold(threads, corpus::Fold::kValidation);
  const auto test = corpus::select_fold(threads, corpus::Fold::kTest);
  const auto vocab = tokenizer::train_vocab(train, 600, 2);
  model::ModelConfig c;
  c.d_model = 64;
  c.d_ff = 256;
  training::TrainOptions o;
  o.optimizer.lr = 1e-3;
  o.max_steps = steps;
  o.eval_every = steps;
  o.validation_decode.max_out_len = 60;
  decoding::DecodeConfig dc;
  dc.max_out_len = 60;

  int wins = 0;
  std::string detail;
  for (int s = 1; s <= n_seeds; ++s) {
    double xent[2] = {0.0, 0.0};
    double with_likes = 0.0;
    for (int k = 0; k < 2; ++k) {
      const auto variant = training::TaskVariant::from_id(k == 0 ? 5 : 7);
      const auto state = training::train(train, validation, vocab, variant, c, o, s);
      xent[k] = evaluation::evaluate_fold(state, vocab, test, dc).mean_xent;
      if (k == 1) {
        // Not part of the criterion: the same model decoding with likes shown.
        std::vector<std::string> raw;
        for (const auto& t : test) raw.push_back(decoding::summarize(state, vocab, t, dc, true).raw);
        with_likes = evaluation::evaluate_summaries(raw, test, 3).mean_xent;
      }
    }
    wins += xent[1] < xent[0] ? 1 : 0;
    detail += " seed" + std::to_string(s) + " v5=" + fmt(xent[0], 4) + " v7=" + fmt(xent[1], 4) +
              " (v7 with likes " + fmt(with_likes, 4) + ")";
  }
  const int needed = n_seeds / 2 + 1;
  return {wins >= needed, "variant 7 wins " + std::to_string(wins) + "/" +
                              std::to_string(n_seeds) + ";" + detail};
}

std::string slurp(const fs::path& p) { return corpus::read_text_file(p); }

Outcome determinism(const fs::path& data_dir, const fs::path& work) {
  std::vector<std::map<std::string, std::string>> runs;
  for (int r = 0; r < 2; ++r) {
    const fs::path dir = work / ("run" + std::to_string(r));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();
    const std::vector<std::vector<std::string>> steps = {
        {"preprocess", "--in", (data_dir / "synthetic_20.jsonl").string(), "--out",
         d + "/clean.jsonl", "--seed", "3"},
        {"build-vocab", "--corpus", d + "/clean.jsonl", "--out", d + "/vocab.txt",
         "--vocab-size", "300"},
        {"train", "--corpus", d + "/clean.jsonl", "--vocab", d + "/vocab.txt", "--out-dir",
         d + "/ckpt", "--variant", "7", "--steps", "40", "--eval-every", "20", "--d-model",
         "32", "--d-ff", "64", "--heads", "2", "--enc-blocks", "1", "--dec-blocks", "1",
         "--max-out-len", "16", "--threads", r == 0 ? "1" : "2", "--seed", "5"},
        {"evaluate", "--corpus", d + "/clean.jsonl", "--vocab", d + "/vocab.txt",
         "--checkpoint", d + "/ckpt/final.ckpt", "--reports", d + "/reports.jsonl",
         "--max-out-len", "16"}};
    for (const auto& args : steps) {
      std::ostringstream out, err;
      if (cli::run(args, out, err) != 0) return {false, args[0] + " failed: " + err.str()};
    }
    std::map<std::string, std::string> files;
    for (const auto& name : {"clean.jsonl", "vocab.txt", "reports.jsonl"}) {
      files[name] = slurp(dir / name);
    }
    for (const auto& e : fs::directory_iterator(dir / "ckpt")) {
      if (e.path().extension() == ".ckpt") files[e.path().filename().string()] = slurp(e.path());
    }
    runs.push_back(std::move(files));
  }
  fs::remove_all(work);
  int differing = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) ++differing;
  }
  const bool ok = differing == 0 && runs[0].size() == runs[1].size() && runs[0].size() >= 6;
  return {ok, std::to_string(runs[0].size()) + " artifacts compared, " +
                  std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string data_dir = SOCSUM_DATA_DIR;
  std::vector<std::string> only;
  std::vector<std::string> known_failures;
  int directional_steps = 2000;
  int directional_seeds = 3;
  std::string output;
  app.add_option("--data-dir", data_dir, "Directory holding the bundled corpora");
  app.add_option("--only", only, "Run just these criteria");
  app.add_option("--known-failure", known_failures,
                 "Criteria whose FAIL does not change the exit status");
  app.add_option("--directional-steps", directional_steps, "Training steps per run");
  app.add_option("--directional-seeds", directional_seeds, "Seeds for the directional run");
  app.add_option("--output", output, "Also write the result lines to this file");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = fs::temp_directory_path() / "socsum_acceptance";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"attention-weight-law", attention_law},
      {"hadamard-contract", hadamard_contract},
      {"gradient-check", gradient_check},
      {"overfit-sanity", [&] { return overfit(data_dir); }},
      {"sampling-law", sampling_law},
      {"rouge-oracle", rouge_oracle},
      {"xent-gibbs", xent_gibbs},
      {"beam-oracle", beam_oracle},
      {"directional", [&] { return directional(directional_steps, directional_seeds); }},
      {"determinism", [&] { return determinism(data_dir, work); }},
  };

  std::ostringstream lines;
  int unexpected = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool known =
        std::find(known_failures.begin(), known_failures.end(), name) != known_failures.end();
    std::ostringstream line;
    line << (outcome.pass ? "PASS " : "FAIL ") << name << " (" << fmt(secs, 3) << " s) "
         << outcome.detail << (!outcome.pass && known ? " [known failure]" : "") << '\n';
    std::cout << line.str() << std::flush;
    lines << line.str();
    if (!outcome.pass && !known) ++unexpected;
  }
  if (!output.empty()) corpus::write_text_file(output, lines.str());
  return unexpected == 0 ? 0 : 1;
}
