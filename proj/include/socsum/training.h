#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "socsum/common.h"
#include "socsum/corpus.h"
#include "socsum/decoding.h"
#include "socsum/model.h"
#include "socsum/tokenizer.h"

namespace socsum::training {

// One of the eight task variants: attention encoding on/off, title
// generation on/off, one or three target comments.
struct TaskVariant {
  int id = 1;
  bool attention_encoding = false;
  bool include_title = true;
  int n_comments = 1;

  static TaskVariant from_id(int id);
  bool operator==(const TaskVariant&) const = default;
};

// Title and comments tokenized once; targets are assembled from these.
struct TokenizedThread {
  std::string id;
  std::vector<std::vector<int>> texts;  // [0] = title, [i] = comment i
  std::vector<int64_t> likes;           // per comment
};

TokenizedThread tokenize_thread(const tokenizer::Vocab& vocab,
                                const corpus::CleanThread& thread);

struct TrainingExample {
  std::string thread_id;
  tokenizer::TokenSeq input_seq;
  model::AttentionWeights weights;
  std::vector<int> target;
  std::vector<int> sampled_comment_indices;  // 1-based, ascending
};

// Draws `count` distinct comment indices (1-based) without replacement with
// probability proportional to weights[i]. When fewer than `count` comments
// have positive weight, all of them are taken and the rest are drawn
// uniformly from the zero-weight comments. Result is in thread order.
std::vector<int> sample_comments(const model::AttentionWeights& weights, int count, Rng& rng);

// target = BOS [title SEP] c_1 SEP c_2 ... EOS, cut to max_len (EOS kept).
TrainingExample sample_target(const TokenizedThread& thread,
                              const model::AttentionWeights& weights,
                              const TaskVariant& variant, Rng& rng, int max_len);
TrainingExample sample_target(const tokenizer::Vocab& vocab,
                              const corpus::CleanThread& thread,
                              const model::AttentionWeights& weights,
                              const TaskVariant& variant, Rng& rng, int max_len = 512);

struct OptimizerConfig {
  double lr = 3e-4;  // peak
  int warmup = 400;
  double beta1 = 0.9;
  double beta2 = 0.998;
  double eps = 1e-9;
  int batch_size = 8;
  double max_grad_norm = 1.0;  // 0 disables clipping

  // peak * min(step / warmup, sqrt(warmup / step)), step counted from 1.
  double learning_rate(int64_t step) const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct TrainState {
  model::ModelConfig config;
  model::ModelParams params;
  model::ModelParams adam_m;
  model::ModelParams adam_v;
  int64_t step = 0;
  Rng rng;
  TaskVariant variant;
  OptimizerConfig optimizer;
  std::string vocab_hash;
  double best_val_xent = std::numeric_limits<double>::infinity();
  std::string best_checkpoint;
  double last_train_loss = std::numeric_limits<double>::quiet_NaN();
};

TrainState init_state(const model::ModelConfig& config, const TaskVariant& variant,
                      const OptimizerConfig& optimizer, const tokenizer::Vocab& vocab,
                      uint64_t seed);

// Binary container: magic, key/value header (config, hashes, rng state,
// counters), named little-endian float32 tensors, trailing FNV-1a checksum.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

// load_checkpoint plus artifact checks: the embedded vocab hash must equal
// the given vocab's, and the config must match `expected` when provided.
TrainState resume(const std::filesystem::path& path, const tokenizer::Vocab& vocab,
                  const std::optional<model::ModelConfig>& expected = std::nullopt);

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::string last_good)
      : Error(what), last_good_checkpoint(std::move(last_good)) {}
  std::string last_good_checkpoint;
};

struct CheckpointRecord {
  int64_t step = 0;
  double train_loss = 0.0;
  double val_xent = 0.0;
  double val_recall_w = 0.0;
  std::string checkpoint_path;
};

struct TrainOptions {
  OptimizerConfig optimizer;  // used by train() to initialize the state
  int64_t max_steps = 0;
  int64_t eval_every = 2000;
  int threads = 1;
  int max_target_len = 512;
  std::filesystem::path checkpoint_dir;  // empty: checkpoints are not written
  std::filesystem::path metrics_log;     // empty: no metrics file
  decoding::DecodeConfig validation_decode;
  std::function<void(int64_t step, double loss)> on_step;
};

// Runs the optimization loop. Each step draws batch_size threads uniformly,
// samples fresh targets, and applies one Adam update of the token-mean loss.
class Trainer {
 public:
  Trainer(const tokenizer::Vocab& vocab, std::vector<corpus::CleanThread> train_fold,
          std::vector<corpus::CleanThread> validation_fold, TrainOptions options);

  // Trains until state.step == until_step, checkpointing every eval_every.
  void run(TrainState& state, int64_t until_step);

  // One optimizer step; returns the batch loss.
  double step(TrainState& state);

  CheckpointRecord checkpoint(TrainState& state, double train_loss);

  const std::vector<CheckpointRecord>& records() const { return records_; }

 private:
  const tokenizer::Vocab& vocab_;
  std::vector<corpus::CleanThread> train_;
  std::vector<corpus::CleanThread> validation_;
  std::vector<TokenizedThread> tokenized_;
  std::vector<model::AttentionWeights> weights_;
  TrainOptions options_;
  std::vector<CheckpointRecord> records_;
  std::vector<model::ModelParams> grads_;  // one buffer per batch slot
  std::string last_good_;
};

TrainState train(const std::vector<corpus::CleanThread>& train_fold,
                 const std::vector<corpus::CleanThread>& validation_fold,
                 const tokenizer::Vocab& vocab, const TaskVariant& variant,
                 const model::ModelConfig& config, const TrainOptions& options,
                 uint64_t seed);

// Hash over all parameter bytes; equal hashes mean bit-identical params.
std::string params_checksum(const model::ModelParams& params);

}  // namespace socsum::training
