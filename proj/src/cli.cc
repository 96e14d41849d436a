#include "socsum/cli.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "socsum/corpus.h"
#include "socsum/decoding.h"
#include "socsum/evaluation.h"
#include "socsum/tokenizer.h"
#include "socsum/training.h"

namespace socsum::cli {

namespace fs = std::filesystem;

std::vector<std::string> config_file_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read config file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = text::normalize_ws(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ArgumentError("config file '" + path + "' line " + std::to_string(line_no) +
                          ": expected key=value");
    }
    out.push_back("--" + text::normalize_ws(line.substr(0, eq)) + "=" +
                  text::normalize_ws(line.substr(eq + 1)));
  }
  return out;
}

namespace {

struct Common {
  uint64_t seed = 1;
  int threads = 1;
  std::string config;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed for every random choice");
  cmd->add_option("--threads", c.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  cmd->add_option("--config", c.config, "key=value file; flags given on the command line win");
}

void add_decode(CLI::App* cmd, decoding::DecodeConfig& d) {
  cmd->add_option("--beam-size", d.beam_size, "Beam width")->check(CLI::PositiveNumber);
  cmd->add_option("--block-ngram", d.block_ngram, "Repeated n-gram size to block (0 = off)");
  cmd->add_option("--max-out-len", d.max_out_len, "Maximum generated tokens")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--length-penalty", d.length_penalty_alpha, "Length penalty alpha");
}

void add_model(CLI::App* cmd, model::ModelConfig& m) {
  cmd->add_option("--d-model", m.d_model, "Model width");
  cmd->add_option("--enc-blocks", m.n_enc_blocks, "Encoder blocks");
  cmd->add_option("--dec-blocks", m.n_dec_blocks, "Decoder blocks");
  cmd->add_option("--heads", m.n_heads, "Attention heads");
  cmd->add_option("--d-ff", m.d_ff, "Feed-forward width");
  cmd->add_option("--max-len", m.max_len, "Maximum sequence length in subtokens");
  cmd->add_option("--dropout", m.dropout, "Dropout rate");
  cmd->add_option("--label-smoothing", m.label_smoothing, "Label smoothing mass");
}

void add_optimizer(CLI::App* cmd, training::OptimizerConfig& o) {
  cmd->add_option("--lr", o.lr, "Peak learning rate");
  cmd->add_option("--warmup", o.warmup, "Warmup steps");
  cmd->add_option("--beta1", o.beta1, "Adam beta1");
  cmd->add_option("--beta2", o.beta2, "Adam beta2");
  cmd->add_option("--adam-eps", o.eps, "Adam epsilon");
  cmd->add_option("--batch-size", o.batch_size, "Threads per optimizer step")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--max-grad-norm", o.max_grad_norm, "Gradient clipping norm (0 = off)");
}

std::vector<corpus::CleanThread> pick_fold(const std::vector<corpus::CleanThread>& all,
                                           const std::string& fold) {
  if (fold == "all") return all;
  return corpus::select_fold(all, corpus::parse_fold(fold));
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// Places config-file arguments right after the subcommand so that later
// command-line flags take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  for (size_t i = 1; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    std::vector<std::string> out{args[0]};
    for (auto& a : config_file_args(path)) out.push_back(std::move(a));
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
  }
  return args;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Abstractive summarization of news comment threads", "socsum"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;
  std::function<void()> action;

  // preprocess
  std::string pre_in, pre_out;
  int min_words = 5;
  corpus::FoldRatios ratios;
  auto* pre = app.add_subcommand("preprocess", "Clean, filter and split a raw corpus");
  pre->add_option("--in", pre_in, "Raw thread JSONL")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "Clean corpus JSONL")->required();
  pre->add_option("--min-words", min_words, "Minimum words per kept comment")
      ->check(CLI::PositiveNumber);
  pre->add_option("--train-ratio", ratios.train, "Training share");
  pre->add_option("--val-ratio", ratios.validation, "Validation share");
  pre->add_option("--test-ratio", ratios.test, "Test share");
  add_common(pre, common);
  pre->callback([&] {
    action = [&] {
      const auto raw = corpus::load_corpus(pre_in);
      auto clean = corpus::partition(corpus::preprocess(raw, min_words), ratios, common.seed);
      corpus::write_text_file(pre_out, corpus::serialize_clean_corpus(clean));
      out << "kept " << clean.size() << " of " << raw.size() << " threads\n";
    };
  });

  // build-vocab
  std::string bv_corpus, bv_out, bv_fold = "train";
  int vocab_size = 4000, min_freq = 2;
  bool lowercase = true;
  auto* bv = app.add_subcommand("build-vocab", "Train a subword vocabulary");
  bv->add_option("--corpus", bv_corpus, "Clean corpus JSONL")->required()->check(CLI::ExistingFile);
  bv->add_option("--out", bv_out, "Vocabulary file (a .meta sidecar is written next to it)")
      ->required();
  bv->add_option("--fold", bv_fold, "Fold to learn from (train, validation, test, all)");
  bv->add_option("--vocab-size", vocab_size, "Target vocabulary size");
  bv->add_option("--min-freq", min_freq, "Minimum pair frequency for a merge")
      ->check(CLI::PositiveNumber);
  bv->add_option("--lowercase", lowercase, "Lowercase text before tokenizing");
  add_common(bv, common);
  bv->callback([&] {
    action = [&] {
      const auto threads = pick_fold(corpus::load_clean_corpus(bv_corpus), bv_fold);
      const auto vocab = tokenizer::train_vocab(threads, vocab_size, min_freq, lowercase);
      tokenizer::save_vocab(vocab, bv_out);
      out << "vocab " << vocab.size() << " tokens, " << vocab.num_merges() << " merges\n";
    };
  });

  // train
  std::string tr_corpus, tr_vocab, tr_out, tr_resume;
  int variant_id = 1;
  int64_t steps = 20000;
  model::ModelConfig model_cfg;
  training::TrainOptions topts;
  auto* tr = app.add_subcommand("train", "Train one model variant");
  tr->add_option("--corpus", tr_corpus, "Clean corpus JSONL (train and validation folds are used)")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--vocab", tr_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out-dir", tr_out, "Directory for checkpoints and metrics.jsonl")->required();
  tr->add_option("--variant", variant_id, "Task variant 1..8")->check(CLI::Range(1, 8));
  tr->add_option("--steps", steps, "Total optimizer steps");
  tr->add_option("--eval-every", topts.eval_every, "Checkpoint and validation cadence");
  tr->add_option("--resume", tr_resume, "Continue from this checkpoint")
      ->check(CLI::ExistingFile);
  add_model(tr, model_cfg);
  add_optimizer(tr, topts.optimizer);
  add_decode(tr, topts.validation_decode);
  add_common(tr, common);
  tr->callback([&] {
    action = [&] {
      const auto vocab = tokenizer::load_vocab(tr_vocab);
      const auto all = corpus::load_clean_corpus(tr_corpus);
      const auto variant = training::TaskVariant::from_id(variant_id);
      model::ModelConfig cfg = model_cfg;
      cfg.vocab_size = vocab.size();
      topts.validation_decode.validate();
      fs::create_directories(tr_out);
      topts.checkpoint_dir = tr_out;
      topts.metrics_log = fs::path(tr_out) / "metrics.jsonl";
      topts.threads = common.threads;
      topts.max_steps = steps;

      training::TrainState state;
      if (tr_resume.empty()) {
        state = training::init_state(cfg, variant, topts.optimizer, vocab, common.seed);
        std::ofstream(topts.metrics_log, std::ios::trunc);
      } else {
        state = training::resume(tr_resume, vocab, cfg);
        if (!(state.variant == variant)) throw Error("checkpoint variant differs from --variant");
      }
      training::Trainer trainer(vocab, corpus::select_fold(all, corpus::Fold::kTrain),
                                corpus::select_fold(all, corpus::Fold::kValidation), topts);
      trainer.run(state, steps);
      const fs::path final_path = fs::path(tr_out) / "final.ckpt";
      training::save_checkpoint(state, final_path);
      char loss[32];
      std::snprintf(loss, sizeof loss, "%.6f", state.last_train_loss);
      out << "variant " << variant.id << " step " << state.step << " loss " << loss
          << " checkpoint " << final_path.string();
      if (!state.best_checkpoint.empty()) {
        out << " best " << (fs::path(tr_out) / state.best_checkpoint).string();
      }
      out << "\n";
    };
  });

  // summarize
  std::string su_corpus, su_vocab, su_ckpt, su_out, su_fold = "test";
  bool provide_likes = false;
  decoding::DecodeConfig su_decode;
  auto* su = app.add_subcommand("summarize", "Generate summaries for a fold");
  su->add_option("--corpus", su_corpus, "Clean corpus JSONL")->required()->check(CLI::ExistingFile);
  su->add_option("--vocab", su_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  su->add_option("--checkpoint", su_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  su->add_option("--out", su_out, "Summary JSONL")->required();
  su->add_option("--fold", su_fold, "Fold to summarize (train, validation, test, all)");
  su->add_option("--provide-likes", provide_likes, "Scale the encoding by like weights");
  add_decode(su, su_decode);
  add_common(su, common);
  su->callback([&] {
    action = [&] {
      const auto vocab = tokenizer::load_vocab(su_vocab);
      const auto state = training::resume(su_ckpt, vocab);
      std::string lines;
      int n = 0;
      for (const auto& t : pick_fold(corpus::load_clean_corpus(su_corpus), su_fold)) {
        const auto s = decoding::summarize(state, vocab, t, su_decode, provide_likes);
        nlohmann::ordered_json j;
        j["thread_id"] = t.id;
        j["title_part"] = s.title_part;
        j["comment_parts"] = s.comment_parts;
        j["raw"] = s.raw;
        j["variant"] = state.variant.id;
        j["checkpoint"] = su_ckpt;
        lines += j.dump() + "\n";
        ++n;
      }
      corpus::write_text_file(su_out, lines);
      out << "summarized " << n << " threads\n";
    };
  });

  // evaluate
  std::string ev_corpus, ev_vocab, ev_ckpt, ev_reports, ev_aggregate, ev_fold = "test";
  std::string baseline = "model";
  int rouge_order = 1, centroid_k = 0;
  decoding::DecodeConfig ev_decode;
  auto* ev = app.add_subcommand("evaluate", "Score summaries of a fold");
  ev->add_option("--corpus", ev_corpus, "Clean corpus JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--vocab", ev_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--reports", ev_reports, "Per-thread report JSONL")->required();
  ev->add_option("--aggregate", ev_aggregate, "Aggregate CSV (variant,xent,recall_w,title_rouge)");
  ev->add_option("--fold", ev_fold, "Fold to evaluate (train, validation, test, all)");
  ev->add_option("--rouge-n", rouge_order, "ROUGE n-gram order")->check(CLI::PositiveNumber);
  ev->add_option("--baseline", baseline, "Summary source")
      ->check(CLI::IsMember({"model", "centroid"}));
  ev->add_option("--centroid-k", centroid_k,
                 "Comments picked by the centroid baseline (0 = the variant's comment count)");
  add_decode(ev, ev_decode);
  add_common(ev, common);
  ev->callback([&] {
    action = [&] {
      const auto vocab = tokenizer::load_vocab(ev_vocab);
      const auto state = training::resume(ev_ckpt, vocab);
      const auto fold = pick_fold(corpus::load_clean_corpus(ev_corpus), ev_fold);
      evaluation::FoldEvaluation e;
      std::string label = std::to_string(state.variant.id);
      if (baseline == "model") {
        e = evaluation::evaluate_fold(state, vocab, fold, ev_decode, rouge_order);
      } else {
        const int k = centroid_k > 0 ? centroid_k : state.variant.n_comments;
        std::vector<std::string> summaries;
        for (const auto& t : fold) {
          summaries.push_back(
              evaluation::centroid_baseline(t, vocab, state.params.token_embedding, k));
        }
        e = evaluation::evaluate_summaries(summaries, fold, state.variant.n_comments,
                                           rouge_order);
        label = "centroid";
      }
      corpus::write_text_file(ev_reports, evaluation::reports_jsonl(e.reports));
      if (!ev_aggregate.empty()) {
        corpus::write_text_file(ev_aggregate, evaluation::aggregate_csv(label, e));
      }
      char buf[160];
      std::snprintf(buf, sizeof buf, "xent %.6f recall_w %.6f title_rouge %.6f threads %zu skipped %d\n",
                    e.mean_xent, e.mean_recall_w, e.mean_title_rouge, e.reports.size(),
                    e.skipped);
      out << buf;
    };
  });

  // characterize
  std::string ch_reports, ch_out;
  auto* ch = app.add_subcommand("characterize", "Quartile characterization of eval reports");
  ch->add_option("--reports", ch_reports, "Report JSONL from evaluate")
      ->required()
      ->check(CLI::ExistingFile);
  ch->add_option("--out", ch_out, "Quartile CSV")->required();
  add_common(ch, common);
  ch->callback([&] {
    action = [&] {
      const auto reports =
          evaluation::parse_reports_jsonl(corpus::read_text_file(ch_reports));
      corpus::write_text_file(ch_out, evaluation::quartile_csv(evaluation::quartile_report(reports)));
      out << "characterized " << reports.size() << " threads\n";
    };
  });

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    err << app.help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n" << app.help();
    return 2;
  }

  try {
    action();
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace socsum::cli
