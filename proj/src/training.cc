#include "socsum/training.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "socsum/evaluation.h"

namespace socsum::training {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

TaskVariant TaskVariant::from_id(int id) {
  //                 attention  title  comments
  static const TaskVariant table[] = {
      {1, false, true, 1}, {2, false, false, 1}, {3, true, true, 1}, {4, true, false, 1},
      {5, false, true, 3}, {6, false, false, 3}, {7, true, true, 3}, {8, true, false, 3},
  };
  if (id < 1 || id > 8) {
    throw ArgumentError("variant must be in 1..8, got " + std::to_string(id));
  }
  return table[id - 1];
}

TokenizedThread tokenize_thread(const tokenizer::Vocab& vocab,
                                const corpus::CleanThread& thread) {
  TokenizedThread t;
  t.id = thread.id;
  t.texts.push_back(tokenizer::tokenize(vocab, thread.title));
  for (const auto& c : thread.comments) {
    t.texts.push_back(tokenizer::tokenize(vocab, c.text));
    t.likes.push_back(c.likes);
  }
  return t;
}

std::vector<int> sample_comments(const model::AttentionWeights& weights, int count, Rng& rng) {
  const int n = static_cast<int>(weights.weights.size()) - 1;
  if (n < 1) throw ArgumentError("sample_target: thread has no comments");
  count = std::min(count, n);
  std::vector<int> positive, zero;
  for (int i = 1; i <= n; ++i) (weights.weights[i] > 0.0 ? positive : zero).push_back(i);

  std::vector<int> chosen;
  if (static_cast<int>(positive.size()) <= count) {
    chosen = positive;
    while (static_cast<int>(chosen.size()) < count) {
      const size_t k = rng.below(zero.size());
      chosen.push_back(zero[k]);
      zero.erase(zero.begin() + static_cast<std::ptrdiff_t>(k));
    }
  } else {
    for (int draw = 0; draw < count; ++draw) {
      double total = 0.0;
      for (int i : positive) total += weights.weights[i];
      double r = rng.uniform() * total;
      size_t pick = positive.size() - 1;
      for (size_t k = 0; k < positive.size(); ++k) {
        r -= weights.weights[positive[k]];
        if (r < 0.0) {
          pick = k;
          break;
        }
      }
      chosen.push_back(positive[pick]);
      positive.erase(positive.begin() + static_cast<std::ptrdiff_t>(pick));
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

TrainingExample sample_target(const TokenizedThread& thread,
                              const model::AttentionWeights& weights,
                              const TaskVariant& variant, Rng& rng, int max_len) {
  if (thread.texts.size() < 2) throw ArgumentError("sample_target: thread has no comments");
  if (weights.weights.size() != thread.texts.size()) {
    throw ArgumentError("sample_target: weights do not match the thread");
  }
  if (max_len < 2) throw ArgumentError("sample_target: max_len must be >= 2");
  TrainingExample ex;
  ex.thread_id = thread.id;
  ex.weights = weights;
  ex.input_seq = tokenizer::assemble(thread.texts, max_len);
  ex.sampled_comment_indices = sample_comments(weights, variant.n_comments, rng);

  ex.target.push_back(tokenizer::kBos);
  bool first = true;
  auto append = [&](const std::vector<int>& part) {
    if (!first) ex.target.push_back(tokenizer::kSep);
    ex.target.insert(ex.target.end(), part.begin(), part.end());
    first = false;
  };
  if (variant.include_title) append(thread.texts[0]);
  for (int i : ex.sampled_comment_indices) append(thread.texts[i]);
  if (static_cast<int>(ex.target.size()) >= max_len) ex.target.resize(max_len - 1);
  ex.target.push_back(tokenizer::kEos);
  return ex;
}

TrainingExample sample_target(const tokenizer::Vocab& vocab, const corpus::CleanThread& thread,
                              const model::AttentionWeights& weights,
                              const TaskVariant& variant, Rng& rng, int max_len) {
  return sample_target(tokenize_thread(vocab, thread), weights, variant, rng, max_len);
}

double OptimizerConfig::learning_rate(int64_t step) const {
  if (step < 1) step = 1;
  if (warmup <= 0) return lr;
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return lr * std::min(s / w, std::sqrt(w / s));
}

TrainState init_state(const model::ModelConfig& config, const TaskVariant& variant,
                      const OptimizerConfig& optimizer, const tokenizer::Vocab& vocab,
                      uint64_t seed) {
  TrainState s;
  s.config = config;
  if (s.config.vocab_size == 0) s.config.vocab_size = vocab.size();
  if (s.config.vocab_size != vocab.size()) {
    throw ArgumentError("model vocab_size " + std::to_string(s.config.vocab_size) +
                        " differs from the vocabulary size " + std::to_string(vocab.size()));
  }
  s.config.validate();
  Rng master(seed);
  s.params = model::init_params<float>(s.config, master.next_u64());
  s.adam_m = model::zero_params<float>(s.config);
  s.adam_v = model::zero_params<float>(s.config);
  s.rng = Rng(master.next_u64());
  s.variant = variant;
  s.optimizer = optimizer;
  s.vocab_hash = tokenizer::vocab_hash(vocab);
  return s;
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'O', 'C', 'S', 'U', 'M', 'C', 'K'};
constexpr uint32_t kFormatVersion = 1;
constexpr uint8_t kFloat32 = 1;

std::string hexf(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<uint64_t>(s.size()));
    buf_ += s;
  }
  void bytes(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T pod() {
    T v;
    need(sizeof v);
    std::memcpy(&v, data_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const uint64_t n = pod<uint64_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void bytes(void* out, size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(uint64_t n) const {
    if (n > data_.size() - pos_) throw FormatError("checkpoint: truncated file");
  }
  std::string_view data_;
  size_t pos_ = 0;
};

std::map<std::string, std::string> header_of(const TrainState& s) {
  const auto& c = s.config;
  const auto& o = s.optimizer;
  return {
      {"config.d_model", std::to_string(c.d_model)},
      {"config.n_enc_blocks", std::to_string(c.n_enc_blocks)},
      {"config.n_dec_blocks", std::to_string(c.n_dec_blocks)},
      {"config.n_heads", std::to_string(c.n_heads)},
      {"config.d_ff", std::to_string(c.d_ff)},
      {"config.max_len", std::to_string(c.max_len)},
      {"config.vocab_size", std::to_string(c.vocab_size)},
      {"config.dropout", hexf(c.dropout)},
      {"config.label_smoothing", hexf(c.label_smoothing)},
      {"config_hash", c.hash()},
      {"vocab_hash", s.vocab_hash},
      {"step", std::to_string(s.step)},
      {"rng", s.rng.serialize()},
      {"variant", std::to_string(s.variant.id)},
      {"optimizer.lr", hexf(o.lr)},
      {"optimizer.warmup", std::to_string(o.warmup)},
      {"optimizer.beta1", hexf(o.beta1)},
      {"optimizer.beta2", hexf(o.beta2)},
      {"optimizer.eps", hexf(o.eps)},
      {"optimizer.batch_size", std::to_string(o.batch_size)},
      {"optimizer.max_grad_norm", hexf(o.max_grad_norm)},
      {"best_val_xent", hexf(s.best_val_xent)},
      {"best_checkpoint", s.best_checkpoint},
      {"last_train_loss", hexf(s.last_train_loss)},
  };
}

class Header {
 public:
  explicit Header(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}
  const std::string& str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw FormatError("checkpoint: missing header key '" + key + "'");
    return it->second;
  }
  int64_t integer(const std::string& key) const {
    try {
      size_t pos = 0;
      const int64_t v = std::stoll(str(key), &pos);
      if (pos == str(key).size()) return v;
    } catch (const std::logic_error&) {
    }
    throw FormatError("checkpoint: bad integer for '" + key + "'");
  }
  double real(const std::string& key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
      throw FormatError("checkpoint: bad number for '" + key + "'");
    }
    return v;
  }

 private:
  std::map<std::string, std::string> kv_;
};

void write_tensors(Writer& w, const std::string& prefix, const model::ModelParams& p) {
  p.for_each([&](const std::string& name, const model::Matrix<float>& m) {
    w.str(prefix + name);
    w.pod(kFloat32);
    w.pod(static_cast<uint32_t>(2));
    w.pod(static_cast<uint64_t>(m.rows()));
    w.pod(static_cast<uint64_t>(m.cols()));
    w.bytes(m.data(), sizeof(float) * static_cast<size_t>(m.size()));
  });
}

void read_tensors(Reader& r, const std::string& prefix, model::ModelParams& p) {
  p.for_each([&](const std::string& name, model::Matrix<float>& m) {
    const std::string got = r.str();
    if (got != prefix + name) {
      throw FormatError("checkpoint: expected tensor '" + prefix + name + "', found '" + got +
                        "'");
    }
    if (r.pod<uint8_t>() != kFloat32) throw FormatError("checkpoint: unsupported dtype");
    if (r.pod<uint32_t>() != 2) throw FormatError("checkpoint: unsupported rank");
    const uint64_t rows = r.pod<uint64_t>(), cols = r.pod<uint64_t>();
    if (rows != static_cast<uint64_t>(m.rows()) || cols != static_cast<uint64_t>(m.cols())) {
      throw FormatError("checkpoint: shape mismatch for '" + got + "'");
    }
    r.bytes(m.data(), sizeof(float) * static_cast<size_t>(m.size()));
  });
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.pod(kFormatVersion);
  const auto header = header_of(state);
  w.pod(static_cast<uint32_t>(header.size()));
  for (const auto& [k, v] : header) {
    w.str(k);
    w.str(v);
  }
  write_tensors(w, "param/", state.params);
  write_tensors(w, "adam_m/", state.adam_m);
  write_tensors(w, "adam_v/", state.adam_v);
  const uint64_t checksum = fnv1a64(w.buffer());
  w.pod(checksum);

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  if (data.size() < sizeof kMagic + sizeof(uint64_t) ||
      std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("checkpoint: not a checkpoint file '" + path.string() + "'");
  }
  const std::string_view body(data.data(), data.size() - sizeof(uint64_t));
  uint64_t stored;
  std::memcpy(&stored, data.data() + body.size(), sizeof stored);
  if (stored != fnv1a64(body)) throw FormatError("checkpoint: checksum mismatch (corrupt file)");

  Reader r(body.substr(sizeof kMagic));
  if (r.pod<uint32_t>() != kFormatVersion) throw FormatError("checkpoint: unsupported version");
  std::map<std::string, std::string> kv;
  const uint32_t n = r.pod<uint32_t>();
  for (uint32_t i = 0; i < n; ++i) {
    std::string k = r.str();
    kv[k] = r.str();
  }
  const Header h(std::move(kv));

  TrainState s;
  auto& c = s.config;
  c.d_model = static_cast<int>(h.integer("config.d_model"));
  c.n_enc_blocks = static_cast<int>(h.integer("config.n_enc_blocks"));
  c.n_dec_blocks = static_cast<int>(h.integer("config.n_dec_blocks"));
  c.n_heads = static_cast<int>(h.integer("config.n_heads"));
  c.d_ff = static_cast<int>(h.integer("config.d_ff"));
  c.max_len = static_cast<int>(h.integer("config.max_len"));
  c.vocab_size = static_cast<int>(h.integer("config.vocab_size"));
  c.dropout = h.real("config.dropout");
  c.label_smoothing = h.real("config.label_smoothing");
  if (c.hash() != h.str("config_hash")) throw FormatError("checkpoint: config hash mismatch");
  c.validate();
  s.vocab_hash = h.str("vocab_hash");
  s.step = h.integer("step");
  s.rng = Rng::deserialize(h.str("rng"));
  s.variant = TaskVariant::from_id(static_cast<int>(h.integer("variant")));
  auto& o = s.optimizer;
  o.lr = h.real("optimizer.lr");
  o.warmup = static_cast<int>(h.integer("optimizer.warmup"));
  o.beta1 = h.real("optimizer.beta1");
  o.beta2 = h.real("optimizer.beta2");
  o.eps = h.real("optimizer.eps");
  o.batch_size = static_cast<int>(h.integer("optimizer.batch_size"));
  o.max_grad_norm = h.real("optimizer.max_grad_norm");
  s.best_val_xent = h.real("best_val_xent");
  s.best_checkpoint = h.str("best_checkpoint");
  s.last_train_loss = h.real("last_train_loss");

  s.params = model::zero_params<float>(c);
  s.adam_m = model::zero_params<float>(c);
  s.adam_v = model::zero_params<float>(c);
  read_tensors(r, "param/", s.params);
  read_tensors(r, "adam_m/", s.adam_m);
  read_tensors(r, "adam_v/", s.adam_v);
  if (!r.done()) throw FormatError("checkpoint: trailing data");
  return s;
}

TrainState resume(const std::filesystem::path& path, const tokenizer::Vocab& vocab,
                  const std::optional<model::ModelConfig>& expected) {
  TrainState s = load_checkpoint(path);
  if (s.vocab_hash != tokenizer::vocab_hash(vocab)) throw Error("vocab hash mismatch");
  if (expected && expected->hash() != s.config.hash()) throw Error("config hash mismatch");
  return s;
}

// --- optimization -----------------------------------------------------------

Trainer::Trainer(const tokenizer::Vocab& vocab, std::vector<corpus::CleanThread> train_fold,
                 std::vector<corpus::CleanThread> validation_fold, TrainOptions options)
    : vocab_(vocab),
      train_(std::move(train_fold)),
      validation_(std::move(validation_fold)),
      options_(std::move(options)) {
  if (train_.empty()) throw ArgumentError("train: training fold is empty");
  for (const auto& t : train_) {
    tokenized_.push_back(tokenize_thread(vocab_, t));
    weights_.push_back(model::attention_weights(t));
  }
}

double Trainer::step(TrainState& state) {
  const OptimizerConfig& opt = state.optimizer;
  if (opt.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  const int max_target =
      std::max(2, std::min(options_.max_target_len, state.config.max_len));

  // Everything random is drawn here, in a fixed order, before any math.
  std::vector<TrainingExample> batch;
  std::vector<uint64_t> dropout_seeds;
  for (int b = 0; b < opt.batch_size; ++b) {
    const size_t idx = state.rng.below(train_.size());
    batch.push_back(sample_target(tokenized_[idx], weights_[idx], state.variant, state.rng,
                                  state.config.max_len));
    auto& target = batch.back().target;
    if (static_cast<int>(target.size()) > max_target) {
      target.resize(max_target - 1);
      target.push_back(tokenizer::kEos);
    }
    dropout_seeds.push_back(state.rng.next_u64());
  }
  int total_tokens = 0;
  for (const auto& ex : batch) total_tokens += static_cast<int>(ex.target.size()) - 1;

  if (grads_.size() != batch.size()) grads_.resize(batch.size());
  std::vector<model::LossResult> results(batch.size());
  std::vector<std::string> failures(batch.size());
  auto work = [&](size_t i) {
    if (grads_[i].encoder.size() != static_cast<size_t>(state.config.n_enc_blocks) ||
        grads_[i].token_embedding.rows() != state.params.token_embedding.rows()) {
      grads_[i] = model::zero_params<float>(state.config);
    } else {
      grads_[i].set_zero();
    }
    Rng dropout_rng(dropout_seeds[i]);
    model::LossOptions lo;
    lo.disable_attention = !state.variant.attention_encoding;
    lo.label_smoothing = state.config.label_smoothing;
    lo.dropout = state.config.dropout;
    lo.dropout_rng = &dropout_rng;
    lo.grad_scale = 1.0 / total_tokens;
    try {
      results[i] = model::forward_loss<float>(state.params, batch[i].input_seq, batch[i].weights,
                                              batch[i].target, lo, &grads_[i]);
    } catch (const model::NumericalError& e) {
      failures[i] = e.what();
    }
  };
  const size_t workers =
      std::min(batch.size(), static_cast<size_t>(std::max(1, options_.threads)));
  if (workers <= 1) {
    for (size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (size_t i = w; i < batch.size(); i += workers) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (!f.empty()) {
      throw TrainingDiverged("training diverged at step " + std::to_string(state.step + 1) +
                                 ": " + f,
                             last_good_);
    }
  }

  double loss_sum = 0.0;
  for (const auto& r : results) loss_sum += r.loss * r.tokens;
  const double loss = loss_sum / total_tokens;
  if (!std::isfinite(loss)) {
    throw TrainingDiverged("training diverged at step " + std::to_string(state.step + 1) +
                               ": loss is not finite",
                           last_good_);
  }

  // Per-example gradients are reduced in batch order, independent of threads.
  auto total = grads_[0].tensors();
  for (size_t i = 1; i < grads_.size(); ++i) {
    auto part = grads_[i].tensors();
    for (size_t k = 0; k < total.size(); ++k) *total[k] += *part[k];
  }
  double norm_sq = 0.0;
  for (const auto* g : total) norm_sq += g->cast<double>().squaredNorm();
  const double norm = std::sqrt(norm_sq);
  if (!std::isfinite(norm)) {
    throw TrainingDiverged("training diverged at step " + std::to_string(state.step + 1) +
                               ": gradient norm is not finite",
                           last_good_);
  }
  const float clip = opt.max_grad_norm > 0.0 && norm > opt.max_grad_norm
                         ? static_cast<float>(opt.max_grad_norm / norm)
                         : 1.0f;

  const int64_t t = state.step + 1;
  const double lr = opt.learning_rate(t);
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  const float b1 = static_cast<float>(opt.beta1), b2 = static_cast<float>(opt.beta2);
  const float step_size = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(opt.eps);
  auto params = state.params.tensors();
  auto m = state.adam_m.tensors();
  auto v = state.adam_v.tensors();
  for (size_t k = 0; k < params.size(); ++k) {
    if (clip != 1.0f) *total[k] *= clip;
    const auto g = total[k]->array();
    m[k]->array() = b1 * m[k]->array() + (1.0f - b1) * g;
    v[k]->array() = b2 * v[k]->array() + (1.0f - b2) * g.square();
    params[k]->array() -=
        step_size * m[k]->array() / (v[k]->array().sqrt() * inv_sqrt_bc2 + eps);
  }
  state.step = t;
  state.last_train_loss = loss;
  if (options_.on_step) options_.on_step(t, loss);
  return loss;
}

CheckpointRecord Trainer::checkpoint(TrainState& state, double train_loss) {
  CheckpointRecord rec;
  rec.step = state.step;
  rec.train_loss = train_loss;
  rec.val_xent = std::nan("");
  rec.val_recall_w = std::nan("");
  if (!validation_.empty()) {
    const auto eval =
        evaluation::evaluate_fold(state, vocab_, validation_, options_.validation_decode);
    rec.val_xent = eval.mean_xent;
    rec.val_recall_w = eval.mean_recall_w;
  }
  const std::string file = "step_" + std::to_string(state.step) + ".ckpt";
  if (!options_.checkpoint_dir.empty()) {
    rec.checkpoint_path = (options_.checkpoint_dir / file).string();
    if (rec.val_xent < state.best_val_xent) {
      state.best_val_xent = rec.val_xent;
      state.best_checkpoint = file;
    }
    std::filesystem::create_directories(options_.checkpoint_dir);
    save_checkpoint(state, rec.checkpoint_path);
    last_good_ = rec.checkpoint_path;
  } else if (rec.val_xent < state.best_val_xent) {
    state.best_val_xent = rec.val_xent;
  }
  if (!options_.metrics_log.empty()) {
    nlohmann::ordered_json j;
    auto num = [](double x) {
      return std::isfinite(x) ? nlohmann::ordered_json(x) : nlohmann::ordered_json(nullptr);
    };
    j["step"] = rec.step;
    j["train_loss"] = num(rec.train_loss);
    j["val_xent"] = num(rec.val_xent);
    j["val_recall_w"] = num(rec.val_recall_w);
    j["checkpoint_path"] = rec.checkpoint_path;
    std::ofstream out(options_.metrics_log, std::ios::app);
    if (!out) throw Error("cannot append to '" + options_.metrics_log.string() + "'");
    out << j.dump() << '\n';
  }
  records_.push_back(rec);
  return rec;
}

void Trainer::run(TrainState& state, int64_t until_step) {
  while (state.step < until_step) {
    const double loss = step(state);
    if (options_.eval_every > 0 && state.step % options_.eval_every == 0) {
      checkpoint(state, loss);
    }
  }
}

TrainState train(const std::vector<corpus::CleanThread>& train_fold,
                 const std::vector<corpus::CleanThread>& validation_fold,
                 const tokenizer::Vocab& vocab, const TaskVariant& variant,
                 const model::ModelConfig& config, const TrainOptions& options, uint64_t seed) {
  TrainState state = init_state(config, variant, options.optimizer, vocab, seed);
  Trainer trainer(vocab, train_fold, validation_fold, options);
  trainer.run(state, options.max_steps);
  return state;
}

std::string params_checksum(const model::ModelParams& params) {
  uint64_t h = fnv1a64("");
  params.for_each([&](const std::string& name, const model::Matrix<float>& m) {
    h = fnv1a64(name, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(m.data()),
                                 sizeof(float) * static_cast<size_t>(m.size())),
                h);
  });
  return hex64(h);
}

}  // namespace socsum::training
