#include "socsum/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace socsum::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ArgumentError("model config: " + msg); };
  if (d_model < 1) fail("d_model must be >= 1");
  if (n_enc_blocks < 1) fail("n_enc_blocks must be >= 1");
  if (n_dec_blocks < 1) fail("n_dec_blocks must be >= 1");
  if (n_heads < 1) fail("n_heads must be >= 1");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (max_len < 2) fail("max_len must be >= 2");
  if (vocab_size <= tokenizer::kNumSpecials) fail("vocab_size must exceed the special tokens");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    fail("label_smoothing must be in [0,1)");
  }
}

std::string ModelConfig::describe() const {
  std::ostringstream s;
  s << "d_model=" << d_model << ";n_enc_blocks=" << n_enc_blocks
    << ";n_dec_blocks=" << n_dec_blocks << ";n_heads=" << n_heads << ";d_ff=" << d_ff
    << ";max_len=" << max_len << ";vocab_size=" << vocab_size;
  char buf[64];
  std::snprintf(buf, sizeof buf, ";dropout=%a", dropout);
  s << buf;
  std::snprintf(buf, sizeof buf, ";label_smoothing=%a", label_smoothing);
  s << buf;
  return s.str();
}

std::string ModelConfig::hash() const { return hex64(fnv1a64(describe())); }

// --- parameters -------------------------------------------------------------

template <typename T>
BasicParams<T> zero_params(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  auto linear = [](int in, int out) {
    return Linear<T>{Matrix<T>::Zero(in, out), Matrix<T>::Zero(1, out)};
  };
  auto norm = [&] { return LayerNorm<T>{Matrix<T>::Zero(1, d), Matrix<T>::Zero(1, d)}; };
  auto attention = [&] {
    return AttentionParams<T>{linear(d, d), linear(d, d), linear(d, d), linear(d, d)};
  };
  BasicParams<T> p;
  p.n_heads = config.n_heads;
  p.token_embedding = Matrix<T>::Zero(config.vocab_size, d);
  p.position_embedding = Matrix<T>::Zero(config.max_len, d);
  for (int i = 0; i < config.n_enc_blocks; ++i) {
    p.encoder.push_back({norm(), attention(), norm(),
                         FeedForward<T>{linear(d, config.d_ff), linear(config.d_ff, d)}});
  }
  p.encoder_norm = norm();
  for (int i = 0; i < config.n_dec_blocks; ++i) {
    p.decoder.push_back({norm(), attention(), norm(), attention(), norm(),
                         FeedForward<T>{linear(d, config.d_ff), linear(config.d_ff, d)}});
  }
  p.decoder_norm = norm();
  p.lm_head = linear(d, config.vocab_size);
  return p;
}

template <typename T>
BasicParams<T> init_params(const ModelConfig& config, uint64_t seed, double stddev) {
  BasicParams<T> p = zero_params<T>(config);
  Rng rng(seed);
  p.for_each([&](const std::string& name, Matrix<T>& m) {
    if (name.ends_with(".gain")) {
      m.setOnes();
    } else if (name.ends_with(".w") || name.ends_with("_embedding")) {
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<T>(rng.normal() * stddev);
      }
    }
  });
  return p;
}

template <typename T>
void check_finite(const BasicParams<T>& params, const std::string& what) {
  params.for_each([&](const std::string& name, const Matrix<T>& m) {
    if (!m.allFinite()) {
      throw NumericalError("non-finite value in " + what + " tensor '" + name + "'");
    }
  });
}

// --- attention weights ------------------------------------------------------

AttentionWeights attention_weights(std::span<const int64_t> likes) {
  if (likes.empty()) throw ArgumentError("attention_weights: thread has no comments");
  AttentionWeights out;
  out.weights.reserve(likes.size() + 1);
  out.weights.push_back(1.0);
  const int64_t max_likes = *std::max_element(likes.begin(), likes.end());
  for (int64_t l : likes) {
    if (l < 0) throw ArgumentError("attention_weights: likes must be non-negative");
    if (max_likes == 0) {
      out.weights.push_back(0.0);
    } else if (l == max_likes) {
      out.weights.push_back(1.0);
    } else {
      out.weights.push_back(
          std::sqrt(static_cast<double>(l) / static_cast<double>(max_likes)));
    }
  }
  return out;
}

AttentionWeights attention_weights(const corpus::CleanThread& thread) {
  std::vector<int64_t> likes;
  likes.reserve(thread.comments.size());
  for (const auto& c : thread.comments) likes.push_back(c.likes);
  return attention_weights(likes);
}

AttentionWeights uniform_weights(size_t n_comments) {
  return AttentionWeights{std::vector<double>(n_comments + 1, 1.0)};
}

// --- kernels ----------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Matrix<T> linear_forward(const Linear<T>& l, const Matrix<T>& x) {
  Matrix<T> y = x * l.w;
  y.rowwise() += l.b.row(0);
  return y;
}

// Accumulates weight gradients; returns d input.
template <typename T>
Matrix<T> linear_backward(const Linear<T>& l, Linear<T>& g, const Matrix<T>& x,
                          const Matrix<T>& dy) {
  g.w.noalias() += x.transpose() * dy;
  g.b.row(0) += dy.colwise().sum();
  return dy * l.w.transpose();
}

template <typename T>
struct NormCache {
  Matrix<T> xhat;
  ColVector<T> inv_std;
};

template <typename T>
Matrix<T> layer_norm(const LayerNorm<T>& p, const Matrix<T>& x, NormCache<T>* cache) {
  const Eigen::Index n = x.rows();
  const T d = static_cast<T>(x.cols());
  Matrix<T> xhat(n, x.cols());
  ColVector<T> inv(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).sum() / d;
    auto centered = (x.row(r).array() - mean).eval();
    const T var = centered.square().sum() / d;
    inv(r) = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    xhat.row(r) = centered * inv(r);
  }
  Matrix<T> y = (xhat.array().rowwise() * p.gain.row(0).array()).matrix();
  y.rowwise() += p.bias.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const LayerNorm<T>& p, LayerNorm<T>& g,
                              const NormCache<T>& c, const Matrix<T>& dy) {
  g.gain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.bias.row(0) += dy.colwise().sum();
  const Matrix<T> dxhat = (dy.array().rowwise() * p.gain.row(0).array()).matrix();
  const T d = static_cast<T>(dy.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T mean_dxhat = dxhat.row(r).sum() / d;
    const T mean_dot = dxhat.row(r).dot(c.xhat.row(r)) / d;
    dx.row(r) = c.inv_std(r) *
                (dxhat.row(r).array() - mean_dxhat - c.xhat.row(r).array() * mean_dot).matrix();
  }
  return dx;
}

template <typename T>
struct AttentionCache {
  Matrix<T> xq, xkv, q, k, v, context;
  std::vector<Matrix<T>> probs;  // one Tq x Tk matrix per head
};

// Scaled dot-product attention over already projected q/k/v.
template <typename T>
Matrix<T> attend(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, int heads,
                 bool causal, std::vector<Matrix<T>>* probs_out) {
  const Eigen::Index tq = q.rows();
  const Eigen::Index tk = k.rows();
  const int dh = static_cast<int>(q.cols()) / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  // Causal masking aligns the last query with the last key.
  const Eigen::Index offset = tk - tq;
  Matrix<T> context(tq, q.cols());
  if (probs_out != nullptr) probs_out->resize(heads);
  for (int h = 0; h < heads; ++h) {
    Matrix<T> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    for (Eigen::Index i = 0; i < tq; ++i) {
      const Eigen::Index visible = causal ? std::min(tk, i + offset + 1) : tk;
      const T m = s.row(i).head(visible).maxCoeff();
      T sum = 0;
      for (Eigen::Index j = 0; j < visible; ++j) {
        s(i, j) = std::exp(s(i, j) - m);
        sum += s(i, j);
      }
      s.row(i).head(visible) /= sum;
      for (Eigen::Index j = visible; j < tk; ++j) s(i, j) = 0;
    }
    context.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (probs_out != nullptr) (*probs_out)[h] = std::move(s);
  }
  return context;
}

template <typename T>
Matrix<T> attention_forward(const AttentionParams<T>& p, const Matrix<T>& xq,
                            const Matrix<T>& xkv, int heads, bool causal,
                            AttentionCache<T>* cache) {
  Matrix<T> q = linear_forward(p.q, xq);
  Matrix<T> k = linear_forward(p.k, xkv);
  Matrix<T> v = linear_forward(p.v, xkv);
  std::vector<Matrix<T>> probs;
  Matrix<T> context = attend(q, k, v, heads, causal, cache != nullptr ? &probs : nullptr);
  Matrix<T> out = linear_forward(p.o, context);
  if (cache != nullptr) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
    cache->probs = std::move(probs);
  }
  return out;
}

// Returns (d xq, d xkv).
template <typename T>
std::pair<Matrix<T>, Matrix<T>> attention_backward(const AttentionParams<T>& p,
                                                   AttentionParams<T>& g,
                                                   const AttentionCache<T>& c, int heads,
                                                   const Matrix<T>& dout) {
  const Matrix<T> dcontext = linear_backward(p.o, g.o, c.context, dout);
  const int dh = static_cast<int>(c.q.cols()) / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Matrix<T> dq(c.q.rows(), c.q.cols());
  Matrix<T> dk(c.k.rows(), c.k.cols());
  Matrix<T> dv(c.v.rows(), c.v.cols());
  for (int h = 0; h < heads; ++h) {
    const Matrix<T>& a = c.probs[h];
    const auto dctx_h = dcontext.middleCols(h * dh, dh);
    const Matrix<T> da = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * dctx_h;
    const ColVector<T> row_dot = (da.array() * a.array()).rowwise().sum();
    const Matrix<T> ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  Matrix<T> dxq = linear_backward(p.q, g.q, c.xq, dq);
  Matrix<T> dxkv = linear_backward(p.k, g.k, c.xkv, dk);
  dxkv += linear_backward(p.v, g.v, c.xkv, dv);
  return {std::move(dxq), std::move(dxkv)};
}

template <typename T>
struct FfnCache {
  Matrix<T> x, pre, act;
};

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
Matrix<T> ffn_forward(const FeedForward<T>& p, const Matrix<T>& x, FfnCache<T>* cache) {
  Matrix<T> pre = linear_forward(p.in, x);
  Matrix<T> act = pre.unaryExpr([](T u) {
    const T t = std::tanh(static_cast<T>(kGeluC) * (u + static_cast<T>(kGeluA) * u * u * u));
    return T(0.5) * u * (T(1) + t);
  });
  Matrix<T> out = linear_forward(p.out, act);
  if (cache != nullptr) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

template <typename T>
Matrix<T> ffn_backward(const FeedForward<T>& p, FeedForward<T>& g, const FfnCache<T>& c,
                       const Matrix<T>& dout) {
  const Matrix<T> dact = linear_backward(p.out, g.out, c.act, dout);
  const Matrix<T> dpre = dact.binaryExpr(c.pre, [](T d, T u) {
    const T c1 = static_cast<T>(kGeluC);
    const T a = static_cast<T>(kGeluA);
    const T t = std::tanh(c1 * (u + a * u * u * u));
    const T grad = T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * c1 * (T(1) + T(3) * a * u * u);
    return d * grad;
  });
  return linear_backward(p.in, g.in, c.x, dpre);
}

// Inverted dropout mask; empty when inactive.
template <typename T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return {};
  Matrix<T> mask(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng->uniform() < rate ? T(0) : keep_scale;
  }
  return mask;
}

template <typename T>
void apply_mask(Matrix<T>& x, const Matrix<T>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

template <typename T>
Matrix<T> embed(const BasicParams<T>& params, std::span<const int> ids) {
  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  if (n > params.position_embedding.rows()) {
    throw ArgumentError("sequence length " + std::to_string(n) + " exceeds max_len " +
                        std::to_string(params.position_embedding.rows()));
  }
  Matrix<T> x(n, params.token_embedding.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    const int id = ids[t];
    if (id < 0 || id >= params.token_embedding.rows()) {
      throw ArgumentError("token id " + std::to_string(id) + " out of range");
    }
    x.row(t) = params.token_embedding.row(id) + params.position_embedding.row(t);
  }
  return x;
}

template <typename T>
void embed_backward(BasicParams<T>& grads, std::span<const int> ids, const Matrix<T>& dx) {
  for (Eigen::Index t = 0; t < dx.rows(); ++t) {
    grads.token_embedding.row(ids[t]) += dx.row(t);
    grads.position_embedding.row(t) += dx.row(t);
  }
}

template <typename T>
struct EncoderBlockCache {
  NormCache<T> ln1, ln2;
  AttentionCache<T> attn;
  FfnCache<T> ffn;
  Matrix<T> mask_attn, mask_ffn;
};

template <typename T>
struct EncoderCache {
  Matrix<T> mask_embed;
  std::vector<EncoderBlockCache<T>> blocks;
  NormCache<T> final_norm;
  std::vector<T> row_scale;  // per token
};

template <typename T>
struct DecoderBlockCache {
  NormCache<T> ln1, ln2, ln3;
  AttentionCache<T> self_attn, cross_attn;
  FfnCache<T> ffn;
  Matrix<T> mask_self, mask_cross, mask_ffn;
};

template <typename T>
struct DecoderCache {
  Matrix<T> mask_embed;
  std::vector<DecoderBlockCache<T>> blocks;
  NormCache<T> final_norm;
  Matrix<T> hidden;  // decoder_norm output
};

struct Schedule {
  int heads = 1;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

std::vector<double> row_weights(const tokenizer::TokenSeq& seq, const AttentionWeights& w,
                                bool disable_attention) {
  if (seq.ids.empty()) throw ArgumentError("encode_thread: empty token sequence");
  int max_source = 0;
  for (const auto& s : seq.spans) max_source = std::max(max_source, s.source);
  if (w.weights.size() < static_cast<size_t>(max_source) + 1) {
    throw ArgumentError("encode_thread: " + std::to_string(w.weights.size()) +
                        " attention weights for spans reaching text " +
                        std::to_string(max_source));
  }
  std::vector<double> out(seq.ids.size(), 1.0);
  if (disable_attention) return out;
  const auto sources = seq.sources();
  for (size_t t = 0; t < out.size(); ++t) out[t] = w.weights[sources[t]];
  return out;
}

template <typename T>
EncodedThread<T> run_encoder(const BasicParams<T>& params, std::span<const int> ids,
                             const std::vector<double>& scale, const Schedule& sched,
                             EncoderCache<T>* cache) {
  Matrix<T> x = embed(params, ids);
  Matrix<T> mask = dropout_mask<T>(x.rows(), x.cols(), sched.dropout, sched.rng);
  apply_mask(x, mask);
  if (cache != nullptr) {
    cache->mask_embed = std::move(mask);
    cache->blocks.resize(params.encoder.size());
  }
  for (size_t b = 0; b < params.encoder.size(); ++b) {
    const auto& blk = params.encoder[b];
    EncoderBlockCache<T>* bc = cache != nullptr ? &cache->blocks[b] : nullptr;
    Matrix<T> h = layer_norm(blk.ln1, x, bc ? &bc->ln1 : nullptr);
    Matrix<T> a = attention_forward(blk.attn, h, h, sched.heads, false, bc ? &bc->attn : nullptr);
    Matrix<T> m1 = dropout_mask<T>(a.rows(), a.cols(), sched.dropout, sched.rng);
    apply_mask(a, m1);
    x += a;
    Matrix<T> h2 = layer_norm(blk.ln2, x, bc ? &bc->ln2 : nullptr);
    Matrix<T> f = ffn_forward(blk.ffn, h2, bc ? &bc->ffn : nullptr);
    Matrix<T> m2 = dropout_mask<T>(f.rows(), f.cols(), sched.dropout, sched.rng);
    apply_mask(f, m2);
    x += f;
    if (bc != nullptr) {
      bc->mask_attn = std::move(m1);
      bc->mask_ffn = std::move(m2);
    }
  }
  EncodedThread<T> out;
  out.enc = layer_norm(params.encoder_norm, x, cache ? &cache->final_norm : nullptr);
  out.enc_att = out.enc;
  for (Eigen::Index t = 0; t < out.enc.rows(); ++t) {
    const T w = static_cast<T>(scale[t]);
    if (w != T(1)) out.enc_att.row(t) *= w;
  }
  if (cache != nullptr) {
    cache->row_scale.resize(scale.size());
    for (size_t t = 0; t < scale.size(); ++t) cache->row_scale[t] = static_cast<T>(scale[t]);
  }
  return out;
}

template <typename T>
void encoder_backward(const BasicParams<T>& params, BasicParams<T>& grads,
                      std::span<const int> ids, const EncoderCache<T>& cache, int heads,
                      const Matrix<T>& d_enc_att) {
  Matrix<T> d_enc = d_enc_att;
  for (Eigen::Index t = 0; t < d_enc.rows(); ++t) {
    if (cache.row_scale[t] != T(1)) d_enc.row(t) *= cache.row_scale[t];
  }
  Matrix<T> dx = layer_norm_backward(params.encoder_norm, grads.encoder_norm, cache.final_norm, d_enc);
  for (size_t b = params.encoder.size(); b-- > 0;) {
    const auto& blk = params.encoder[b];
    auto& gblk = grads.encoder[b];
    const auto& bc = cache.blocks[b];
    Matrix<T> df = dx;
    apply_mask(df, bc.mask_ffn);
    const Matrix<T> dh2 = ffn_backward(blk.ffn, gblk.ffn, bc.ffn, df);
    dx += layer_norm_backward(blk.ln2, gblk.ln2, bc.ln2, dh2);
    Matrix<T> da = dx;
    apply_mask(da, bc.mask_attn);
    auto [dq, dkv] = attention_backward(blk.attn, gblk.attn, bc.attn, heads, da);
    dq += dkv;
    dx += layer_norm_backward(blk.ln1, gblk.ln1, bc.ln1, dq);
  }
  apply_mask(dx, cache.mask_embed);
  embed_backward(grads, ids, dx);
}

// Returns the final hidden states (decoder_norm output), one row per input.
template <typename T>
struct CrossKeyValues {
  const std::vector<Matrix<T>>* keys = nullptr;
  const std::vector<Matrix<T>>* values = nullptr;
};

template <typename T>
Matrix<T> run_decoder(const BasicParams<T>& params, const Matrix<T>& enc_att,
                      std::span<const int> inputs, const Schedule& sched,
                      DecoderCache<T>* cache, CrossKeyValues<T> cross = {}) {
  Matrix<T> x = embed(params, inputs);
  Matrix<T> mask = dropout_mask<T>(x.rows(), x.cols(), sched.dropout, sched.rng);
  apply_mask(x, mask);
  if (cache != nullptr) {
    cache->mask_embed = std::move(mask);
    cache->blocks.resize(params.decoder.size());
  }
  for (size_t b = 0; b < params.decoder.size(); ++b) {
    const auto& blk = params.decoder[b];
    DecoderBlockCache<T>* bc = cache != nullptr ? &cache->blocks[b] : nullptr;
    Matrix<T> h = layer_norm(blk.ln1, x, bc ? &bc->ln1 : nullptr);
    Matrix<T> a = attention_forward(blk.self_attn, h, h, sched.heads, true,
                                    bc ? &bc->self_attn : nullptr);
    Matrix<T> m1 = dropout_mask<T>(a.rows(), a.cols(), sched.dropout, sched.rng);
    apply_mask(a, m1);
    x += a;
    Matrix<T> h2 = layer_norm(blk.ln2, x, bc ? &bc->ln2 : nullptr);
    Matrix<T> c;
    if (cross.keys != nullptr && bc == nullptr) {
      const Matrix<T> q = linear_forward(blk.cross_attn.q, h2);
      const Matrix<T> ctx =
          attend<T>(q, (*cross.keys)[b], (*cross.values)[b], sched.heads, false, nullptr);
      c = linear_forward(blk.cross_attn.o, ctx);
    } else {
      c = attention_forward(blk.cross_attn, h2, enc_att, sched.heads, false,
                            bc ? &bc->cross_attn : nullptr);
    }
    Matrix<T> m2 = dropout_mask<T>(c.rows(), c.cols(), sched.dropout, sched.rng);
    apply_mask(c, m2);
    x += c;
    Matrix<T> h3 = layer_norm(blk.ln3, x, bc ? &bc->ln3 : nullptr);
    Matrix<T> f = ffn_forward(blk.ffn, h3, bc ? &bc->ffn : nullptr);
    Matrix<T> m3 = dropout_mask<T>(f.rows(), f.cols(), sched.dropout, sched.rng);
    apply_mask(f, m3);
    x += f;
    if (bc != nullptr) {
      bc->mask_self = std::move(m1);
      bc->mask_cross = std::move(m2);
      bc->mask_ffn = std::move(m3);
    }
  }
  return layer_norm(params.decoder_norm, x, cache ? &cache->final_norm : nullptr);
}

// Returns d enc_att.
template <typename T>
Matrix<T> decoder_backward(const BasicParams<T>& params, BasicParams<T>& grads,
                           std::span<const int> inputs, const DecoderCache<T>& cache,
                           int heads, const Matrix<T>& d_hidden, Eigen::Index enc_rows) {
  Matrix<T> d_enc_att = Matrix<T>::Zero(enc_rows, params.token_embedding.cols());
  Matrix<T> dx = layer_norm_backward(params.decoder_norm, grads.decoder_norm, cache.final_norm, d_hidden);
  for (size_t b = params.decoder.size(); b-- > 0;) {
    const auto& blk = params.decoder[b];
    auto& gblk = grads.decoder[b];
    const auto& bc = cache.blocks[b];
    Matrix<T> df = dx;
    apply_mask(df, bc.mask_ffn);
    const Matrix<T> dh3 = ffn_backward(blk.ffn, gblk.ffn, bc.ffn, df);
    dx += layer_norm_backward(blk.ln3, gblk.ln3, bc.ln3, dh3);
    Matrix<T> dc = dx;
    apply_mask(dc, bc.mask_cross);
    auto [dh2, denc] = attention_backward(blk.cross_attn, gblk.cross_attn, bc.cross_attn, heads, dc);
    d_enc_att += denc;
    dx += layer_norm_backward(blk.ln2, gblk.ln2, bc.ln2, dh2);
    Matrix<T> da = dx;
    apply_mask(da, bc.mask_self);
    auto [dq, dkv] = attention_backward(blk.self_attn, gblk.self_attn, bc.self_attn, heads, da);
    dq += dkv;
    dx += layer_norm_backward(blk.ln1, gblk.ln1, bc.ln1, dq);
  }
  apply_mask(dx, cache.mask_embed);
  embed_backward(grads, inputs, dx);
  return d_enc_att;
}

template <typename T>
std::vector<T> softmax_row(const Eigen::Ref<const Matrix<T>>& logits) {
  const T m = logits.maxCoeff();
  std::vector<T> p(logits.cols());
  T sum = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    p[j] = std::exp(logits(0, j) - m);
    sum += p[j];
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

// --- public entry points ----------------------------------------------------

template <typename T>
EncodedThread<T> encode_thread(const BasicParams<T>& params, const tokenizer::TokenSeq& seq,
                               const AttentionWeights& weights, bool disable_attention) {
  const auto scale = row_weights(seq, weights, disable_attention);
  return run_encoder<T>(params, seq.ids, scale, Schedule{params.n_heads}, nullptr);
}

namespace {

void check_prefix(std::span<const int> prefix, Eigen::Index max_len) {
  if (prefix.empty()) throw ArgumentError("decode_step: prefix must be non-empty");
  if (static_cast<Eigen::Index>(prefix.size()) >= max_len) {
    throw ArgumentError("decode_step: prefix length " + std::to_string(prefix.size()) +
                        " must be below max_len " + std::to_string(max_len));
  }
}

}  // namespace

template <typename T>
std::vector<T> decode_step(const BasicParams<T>& params, const Matrix<T>& enc_att,
                           std::span<const int> prefix) {
  check_prefix(prefix, params.position_embedding.rows());
  const Matrix<T> hidden =
      run_decoder<T>(params, enc_att, prefix, Schedule{params.n_heads}, nullptr);
  const Matrix<T> logits = linear_forward(params.lm_head, Matrix<T>(hidden.bottomRows(1)));
  return softmax_row<T>(logits);
}

template <typename T>
Matrix<T> teacher_forced_probs(const BasicParams<T>& params, const Matrix<T>& enc_att,
                               std::span<const int> inputs) {
  const Matrix<T> hidden =
      run_decoder<T>(params, enc_att, inputs, Schedule{params.n_heads}, nullptr);
  const Matrix<T> logits = linear_forward(params.lm_head, hidden);
  Matrix<T> probs(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const auto p = softmax_row<T>(logits.row(t));
    for (Eigen::Index j = 0; j < logits.cols(); ++j) probs(t, j) = p[j];
  }
  return probs;
}

DecoderSession::DecoderSession(const ModelParams& params, const Matrix<float>& enc_att)
    : params_(params) {
  if (enc_att.rows() == 0) throw ArgumentError("DecoderSession: empty encoding");
  for (const auto& blk : params.decoder) {
    keys_.push_back(linear_forward(blk.cross_attn.k, enc_att));
    values_.push_back(linear_forward(blk.cross_attn.v, enc_att));
  }
}

std::vector<float> DecoderSession::next_token_probs(std::span<const int> prefix) const {
  check_prefix(prefix, params_.position_embedding.rows());
  const Matrix<float> unused;
  const Matrix<float> hidden =
      run_decoder<float>(params_, unused, prefix, Schedule{params_.n_heads}, nullptr,
                         CrossKeyValues<float>{&keys_, &values_});
  const Matrix<float> logits =
      linear_forward(params_.lm_head, Matrix<float>(hidden.bottomRows(1)));
  return softmax_row<float>(logits);
}

template <typename T>
LossResult forward_loss(const BasicParams<T>& params, const tokenizer::TokenSeq& seq,
                        const AttentionWeights& weights, std::span<const int> target,
                        const LossOptions& options, BasicParams<T>* grads) {
  using tokenizer::kBos;
  using tokenizer::kEos;
  using tokenizer::kPad;
  if (target.size() < 2 || target.front() != kBos || target.back() != kEos) {
    throw ArgumentError("forward_loss: target must start with BOS and end with EOS");
  }
  if (static_cast<Eigen::Index>(target.size()) > params.position_embedding.rows()) {
    throw ArgumentError("forward_loss: target longer than max_len");
  }
  const auto scale = row_weights(seq, weights, options.disable_attention);
  const Schedule sched{params.n_heads, options.dropout, options.dropout_rng};
  const bool need_grad = grads != nullptr;
  EncoderCache<T> enc_cache;
  DecoderCache<T> dec_cache;
  const EncodedThread<T> enc =
      run_encoder<T>(params, seq.ids, scale, sched, need_grad ? &enc_cache : nullptr);
  const std::span<const int> inputs = target.first(target.size() - 1);
  const std::span<const int> labels = target.subspan(1);
  const Matrix<T> hidden =
      run_decoder<T>(params, enc.enc_att, inputs, sched, need_grad ? &dec_cache : nullptr);
  const Matrix<T> logits = linear_forward(params.lm_head, hidden);

  const Eigen::Index vocab = logits.cols();
  const double eps = options.label_smoothing;
  const double off_mass = vocab > 2 ? eps / static_cast<double>(vocab - 2) : 0.0;
  // sum_j q_j ln q_j, identical for every position.
  double q_entropy_term = 0.0;
  if (1.0 - eps > 0.0) q_entropy_term += (1.0 - eps) * std::log(1.0 - eps);
  if (off_mass > 0.0) q_entropy_term += eps * std::log(off_mass);

  Matrix<T> dlogits;
  if (need_grad) dlogits = Matrix<T>::Zero(logits.rows(), vocab);
  double loss_sum = 0.0;
  int tokens = 0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const int label = labels[t];
    if (label == kPad) continue;
    if (label < 0 || label >= vocab) throw ArgumentError("forward_loss: target id out of range");
    ++tokens;
    const T m = logits.row(t).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(logits(t, j) - m));
    const double lse = static_cast<double>(m) + std::log(z);
    // -sum_j q_j log p_j
    double cross = 0.0;
    double sum_logp_smoothed = 0.0;
    for (Eigen::Index j = 0; j < vocab; ++j) {
      if (j == kPad || j == label) continue;
      sum_logp_smoothed += static_cast<double>(logits(t, j)) - lse;
    }
    cross -= (1.0 - eps) * (static_cast<double>(logits(t, label)) - lse);
    cross -= off_mass * sum_logp_smoothed;
    loss_sum += q_entropy_term + cross;
    if (need_grad) {
      for (Eigen::Index j = 0; j < vocab; ++j) {
        const double p = std::exp(static_cast<double>(logits(t, j)) - lse);
        double q = off_mass;
        if (j == label) q = 1.0 - eps;
        if (j == kPad) q = 0.0;
        dlogits(t, j) = static_cast<T>(p - q);
      }
    }
  }
  LossResult result;
  result.tokens = tokens;
  result.loss = tokens > 0 ? loss_sum / tokens : 0.0;
  if (!std::isfinite(result.loss)) throw NumericalError("non-finite loss");
  if (need_grad && tokens > 0) {
    const double g = options.grad_scale > 0.0 ? options.grad_scale : 1.0 / tokens;
    dlogits *= static_cast<T>(g);
    const Matrix<T> dhidden = linear_backward(params.lm_head, grads->lm_head, hidden, dlogits);
    const Matrix<T> d_enc_att = decoder_backward(params, *grads, inputs, dec_cache,
                                                 params.n_heads, dhidden, enc.enc_att.rows());
    encoder_backward(params, *grads, seq.ids, enc_cache, params.n_heads, d_enc_att);
    check_finite(*grads, "gradient");
  }
  return result;
}

template <typename T>
LossResult forward_loss(const BasicParams<T>& params, const tokenizer::TokenSeq& seq,
                        const AttentionWeights& weights, std::span<const int> target,
                        const ModelConfig& config, bool disable_attention,
                        BasicParams<T>* grads) {
  LossOptions options;
  options.disable_attention = disable_attention;
  options.label_smoothing = config.label_smoothing;
  return forward_loss<T>(params, seq, weights, target, options, grads);
}

#define SOCSUM_INSTANTIATE(T)                                                              \
  template BasicParams<T> zero_params<T>(const ModelConfig&);                               \
  template BasicParams<T> init_params<T>(const ModelConfig&, uint64_t, double);             \
  template void check_finite<T>(const BasicParams<T>&, const std::string&);                \
  template EncodedThread<T> encode_thread<T>(const BasicParams<T>&,                         \
                                             const tokenizer::TokenSeq&,                    \
                                             const AttentionWeights&, bool);                \
  template std::vector<T> decode_step<T>(const BasicParams<T>&, const Matrix<T>&,           \
                                         std::span<const int>);                             \
  template Matrix<T> teacher_forced_probs<T>(const BasicParams<T>&, const Matrix<T>&,       \
                                             std::span<const int>);                         \
  template LossResult forward_loss<T>(const BasicParams<T>&, const tokenizer::TokenSeq&,    \
                                      const AttentionWeights&, std::span<const int>,        \
                                      const LossOptions&, BasicParams<T>*);                 \
  template LossResult forward_loss<T>(const BasicParams<T>&, const tokenizer::TokenSeq&,    \
                                      const AttentionWeights&, std::span<const int>,        \
                                      const ModelConfig&, bool, BasicParams<T>*);

SOCSUM_INSTANTIATE(float)
SOCSUM_INSTANTIATE(double)

#undef SOCSUM_INSTANTIATE

}  // namespace socsum::model
