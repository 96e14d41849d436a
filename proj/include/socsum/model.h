#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "socsum/common.h"
#include "socsum/corpus.h"
#include "socsum/tokenizer.h"

namespace socsum::model {

struct ModelConfig {
  int d_model = 128;
  int n_enc_blocks = 2;
  int n_dec_blocks = 2;
  int n_heads = 4;
  int d_ff = 512;
  int max_len = 512;
  int vocab_size = 0;
  double dropout = 0.1;
  double label_smoothing = 0.1;

  // Throws ArgumentError naming the first violated constraint.
  void validate() const;
  // Stable text form ("key=value;..."), and its hash for checkpoint headers.
  std::string describe() const;
  std::string hash() const;
  bool operator==(const ModelConfig&) const = default;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Biases, gains and shifts are 1 x n matrices so every tensor has one type.
template <typename T>
struct Linear {
  Matrix<T> w;
  Matrix<T> b;
};

template <typename T>
struct LayerNorm {
  Matrix<T> gain;
  Matrix<T> bias;
};

template <typename T>
struct AttentionParams {
  Linear<T> q, k, v, o;
};

template <typename T>
struct FeedForward {
  Linear<T> in, out;
};

template <typename T>
struct EncoderBlock {
  LayerNorm<T> ln1;
  AttentionParams<T> attn;
  LayerNorm<T> ln2;
  FeedForward<T> ffn;
};

template <typename T>
struct DecoderBlock {
  LayerNorm<T> ln1;
  AttentionParams<T> self_attn;
  LayerNorm<T> ln2;
  AttentionParams<T> cross_attn;
  LayerNorm<T> ln3;
  FeedForward<T> ffn;
};

// Every learnable tensor of the embedding / encoder / decoder / LM-head stack.
// Gradients use the same type.
template <typename T>
struct BasicParams {
  Matrix<T> token_embedding;     // vocab x d_model
  Matrix<T> position_embedding;  // max_len x d_model
  std::vector<EncoderBlock<T>> encoder;
  LayerNorm<T> encoder_norm;
  std::vector<DecoderBlock<T>> decoder;
  LayerNorm<T> decoder_norm;
  Linear<T> lm_head;  // d_model x vocab
  int n_heads = 1;    // not learnable; needed to split projections

  // Calls fn(name, tensor) for every tensor in a fixed order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  std::vector<Matrix<T>*> tensors() {
    std::vector<Matrix<T>*> out;
    for_each([&](const std::string&, Matrix<T>& m) { out.push_back(&m); });
    return out;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for_each([&](const std::string& n, const Matrix<T>&) { out.push_back(n); });
    return out;
  }
  size_t parameter_count() const {
    size_t n = 0;
    for_each([&](const std::string&, const Matrix<T>& m) { n += m.size(); });
    return n;
  }
  void set_zero() {
    for_each([](const std::string&, Matrix<T>& m) { m.setZero(); });
  }

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    auto linear = [&](const std::string& p, auto& l) {
      fn(p + ".w", l.w);
      fn(p + ".b", l.b);
    };
    auto norm = [&](const std::string& p, auto& n) {
      fn(p + ".gain", n.gain);
      fn(p + ".bias", n.bias);
    };
    auto attention = [&](const std::string& p, auto& a) {
      linear(p + ".q", a.q);
      linear(p + ".k", a.k);
      linear(p + ".v", a.v);
      linear(p + ".o", a.o);
    };
    fn(std::string("token_embedding"), self.token_embedding);
    fn(std::string("position_embedding"), self.position_embedding);
    for (size_t i = 0; i < self.encoder.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      auto& b = self.encoder[i];
      norm(p + ".ln1", b.ln1);
      attention(p + ".attn", b.attn);
      norm(p + ".ln2", b.ln2);
      linear(p + ".ffn.in", b.ffn.in);
      linear(p + ".ffn.out", b.ffn.out);
    }
    norm("encoder_norm", self.encoder_norm);
    for (size_t i = 0; i < self.decoder.size(); ++i) {
      const std::string p = "decoder." + std::to_string(i);
      auto& b = self.decoder[i];
      norm(p + ".ln1", b.ln1);
      attention(p + ".self_attn", b.self_attn);
      norm(p + ".ln2", b.ln2);
      attention(p + ".cross_attn", b.cross_attn);
      norm(p + ".ln3", b.ln3);
      linear(p + ".ffn.in", b.ffn.in);
      linear(p + ".ffn.out", b.ffn.out);
    }
    norm("decoder_norm", self.decoder_norm);
    linear("lm_head", self.lm_head);
  }
};

using ModelParams = BasicParams<float>;

// All tensors zero, shaped by config.
template <typename T>
BasicParams<T> zero_params(const ModelConfig& config);

// normal(0, stddev) projections and embeddings, unit gains, zero biases.
template <typename T>
BasicParams<T> init_params(const ModelConfig& config, uint64_t seed,
                           double stddev = 0.02);

template <typename To, typename From>
BasicParams<To> cast_params(const BasicParams<From>& params) {
  BasicParams<To> out;
  out.n_heads = params.n_heads;
  out.token_embedding = params.token_embedding.template cast<To>();
  out.position_embedding = params.position_embedding.template cast<To>();
  out.encoder.resize(params.encoder.size());
  out.decoder.resize(params.decoder.size());
  auto dst = out.tensors();
  size_t i = 0;
  params.for_each([&](const std::string&, const Matrix<From>& m) {
    *dst[i++] = m.template cast<To>();
  });
  return out;
}

// Per-text scaling: index 0 is the title (always 1), index i comment i.
struct AttentionWeights {
  std::vector<double> weights;
};

// weights[i] = sqrt(likes_i / max likes); all comments 0 when max likes is 0.
AttentionWeights attention_weights(const corpus::CleanThread& thread);
AttentionWeights attention_weights(std::span<const int64_t> likes);
AttentionWeights uniform_weights(size_t n_comments);

template <typename T>
struct EncodedThread {
  Matrix<T> enc;      // seq_len x d_model
  Matrix<T> enc_att;  // rows scaled by their text's weight
};

template <typename T>
EncodedThread<T> encode_thread(const BasicParams<T>& params,
                               const tokenizer::TokenSeq& seq,
                               const AttentionWeights& weights,
                               bool disable_attention);

// Next-token distribution after `prefix` (which starts with BOS).
template <typename T>
std::vector<T> decode_step(const BasicParams<T>& params, const Matrix<T>& enc_att,
                           std::span<const int> prefix);

// Teacher-forced next-token distributions for every position of `inputs`.
template <typename T>
Matrix<T> teacher_forced_probs(const BasicParams<T>& params,
                               const Matrix<T>& enc_att,
                               std::span<const int> inputs);

// Reuses the cross-attention keys/values across decoding steps.
class DecoderSession {
 public:
  DecoderSession(const ModelParams& params, const Matrix<float>& enc_att);
  ~DecoderSession() = default;
  DecoderSession(const DecoderSession&) = delete;
  DecoderSession& operator=(const DecoderSession&) = delete;

  std::vector<float> next_token_probs(std::span<const int> prefix) const;

 private:
  const ModelParams& params_;
  std::vector<Matrix<float>> keys_;
  std::vector<Matrix<float>> values_;
};

struct LossResult {
  double loss = 0.0;  // mean over counted positions
  int tokens = 0;     // counted (non-PAD) target positions
};

struct LossOptions {
  bool disable_attention = false;
  double label_smoothing = 0.0;
  double dropout = 0.0;
  Rng* dropout_rng = nullptr;  // dropout is skipped without one
  // Gradients are accumulated as d(loss_sum * scale); by default scale is
  // 1 / tokens, i.e. the gradient of the mean.
  double grad_scale = 0.0;
};

// Label-smoothed KL loss of `target` (BOS ... EOS) given the thread, with
// gradients added into *grads when it is non-null. Throws NumericalError
// naming the first tensor holding a non-finite value.
template <typename T>
LossResult forward_loss(const BasicParams<T>& params, const tokenizer::TokenSeq& seq,
                        const AttentionWeights& weights, std::span<const int> target,
                        const LossOptions& options, BasicParams<T>* grads);

// Convenience overload taking the smoothing and dropout settings from config.
template <typename T>
LossResult forward_loss(const BasicParams<T>& params, const tokenizer::TokenSeq& seq,
                        const AttentionWeights& weights, std::span<const int> target,
                        const ModelConfig& config, bool disable_attention,
                        BasicParams<T>* grads);

// Throws NumericalError naming the first tensor with a NaN/Inf entry.
template <typename T>
void check_finite(const BasicParams<T>& params, const std::string& what);

}  // namespace socsum::model
