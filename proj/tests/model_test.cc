#include "socsum/model.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace socsum::model {
namespace {

using tokenizer::kBos;
using tokenizer::kEos;
using tokenizer::kSep;

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_len = 16;
  c.vocab_size = 20;
  c.dropout = 0.0;
  c.label_smoothing = 0.1;
  return c;
}

// title [5 6 7] SEP [8 9] SEP [10 11 12]
tokenizer::TokenSeq toy_seq() {
  return tokenizer::assemble({{5, 6, 7}, {8, 9}, {10, 11, 12}}, 16);
}

TEST(AttentionWeights, WorkedExamples) {
  const std::vector<int64_t> a = {100, 25, 0};
  EXPECT_EQ(attention_weights(a).weights, (std::vector<double>{1.0, 1.0, 0.5, 0.0}));
  const std::vector<int64_t> b = {7};
  EXPECT_EQ(attention_weights(b).weights, (std::vector<double>{1.0, 1.0}));
  const std::vector<int64_t> c = {0, 0};
  EXPECT_EQ(attention_weights(c).weights, (std::vector<double>{1.0, 0.0, 0.0}));
  EXPECT_THROW(attention_weights(std::vector<int64_t>{}), ArgumentError);
}

TEST(AttentionWeights, RandomizedLaws) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const size_t n = 1 + rng.below(12);
    std::vector<int64_t> likes(n);
    for (auto& l : likes) l = static_cast<int64_t>(rng.below(rng.uniform() < 0.2 ? 3 : 500));
    const auto w = attention_weights(likes).weights;
    ASSERT_EQ(w.size(), n + 1);
    EXPECT_EQ(w[0], 1.0);
    const int64_t max_likes = *std::max_element(likes.begin(), likes.end());
    for (size_t i = 0; i < n; ++i) {
      EXPECT_GE(w[i + 1], 0.0);
      EXPECT_LE(w[i + 1], 1.0);
      if (max_likes > 0 && likes[i] == max_likes) EXPECT_EQ(w[i + 1], 1.0);
      for (size_t j = 0; j < n; ++j) {
        if (likes[i] >= likes[j]) EXPECT_GE(w[i + 1], w[j + 1]);
      }
    }
    std::vector<int64_t> scaled(likes);
    const int64_t factor = 1 + static_cast<int64_t>(rng.below(50));
    for (auto& l : scaled) l *= factor;
    const auto ws = attention_weights(scaled).weights;
    for (size_t i = 0; i <= n; ++i) EXPECT_NEAR(ws[i], w[i], 1e-15);
  }
}

TEST(EncodeThread, HadamardContract) {
  ModelConfig c = tiny_config();
  c.d_model = 32;
  c.n_heads = 4;
  const auto params = init_params<float>(c, 3);
  const auto seq = toy_seq();

  const auto ones = encode_thread(params, seq, uniform_weights(2), false);
  EXPECT_TRUE((ones.enc_att.array() == ones.enc.array()).all());

  const AttentionWeights w{{1.0, 0.0, 0.5}};
  const auto scaled = encode_thread(params, seq, w, false);
  const auto sources = seq.sources();
  for (size_t t = 0; t < seq.ids.size(); ++t) {
    const Matrix<float> expected = scaled.enc.row(t) * static_cast<float>(w.weights[sources[t]]);
    EXPECT_TRUE((scaled.enc_att.row(t).array() == expected.array()).all()) << "row " << t;
  }
  // Comment 1 (positions 4,5) and the SEP that closes it (position 6) vanish.
  for (int t : {4, 5, 6}) EXPECT_TRUE(scaled.enc_att.row(t).isZero(0.0f));

  const auto disabled = encode_thread(params, seq, w, true);
  EXPECT_TRUE((disabled.enc_att.array() == disabled.enc.array()).all());
  // The encoder itself ignores the weights.
  EXPECT_TRUE((disabled.enc.array() == scaled.enc.array()).all());

  // Scaling is linear in the weight.
  const AttentionWeights half{{1.0, 0.25, 0.5}};
  const AttentionWeights full{{1.0, 0.5, 1.0}};
  const auto a = encode_thread(params, seq, half, false);
  const auto b = encode_thread(params, seq, full, false);
  for (int t = 4; t < 6; ++t) {
    EXPECT_TRUE(((a.enc_att.row(t) * 2.0f).array() == b.enc_att.row(t).array()).all());
  }
}

TEST(EncodeThread, RejectsShortWeights) {
  const auto params = init_params<float>(tiny_config(), 3);
  EXPECT_THROW(encode_thread(params, toy_seq(), AttentionWeights{{1.0, 1.0}}, false),
               ArgumentError);
}

TEST(DecodeStep, IsAProbabilityVector) {
  const auto params = init_params<float>(tiny_config(), 11, 0.5);
  const auto enc = encode_thread(params, toy_seq(), uniform_weights(2), false);
  const std::vector<int> prefix = {kBos, 7, 9};
  const auto probs = decode_step(params, enc.enc_att, prefix);
  ASSERT_EQ(probs.size(), 20u);
  double sum = 0;
  for (float p : probs) {
    EXPECT_GE(p, 0.0f);
    sum += p;
  }
  EXPECT_NEAR(sum, 1.0, 1e-5);
}

TEST(DecodeStep, ZeroParamsGiveUniform) {
  const auto params = zero_params<float>(tiny_config());
  const auto enc = encode_thread(params, toy_seq(), uniform_weights(2), false);
  const std::vector<int> prefix = {kBos};
  for (float p : decode_step(params, enc.enc_att, prefix)) EXPECT_FLOAT_EQ(p, 1.0f / 20);
}

TEST(DecodeStep, CausalMaskMatchesTeacherForcing) {
  const auto params = init_params<double>(tiny_config(), 5, 0.5);
  const auto enc = encode_thread(params, toy_seq(), AttentionWeights{{1, 0.3, 0.8}}, false);
  const std::vector<int> full = {kBos, 8, 9, kSep, 10, 11, 12};
  const Matrix<double> batch = teacher_forced_probs(params, enc.enc_att, full);
  for (size_t len = 1; len <= full.size(); ++len) {
    const auto step =
        decode_step(params, enc.enc_att, std::span<const int>(full).first(len));
    for (size_t j = 0; j < step.size(); ++j) {
      EXPECT_NEAR(step[j], batch(static_cast<Eigen::Index>(len - 1), j), 1e-12);
    }
  }
}

TEST(DecodeStep, SessionMatchesDirectDecode) {
  const auto params = init_params<float>(tiny_config(), 5, 0.5);
  const auto enc = encode_thread(params, toy_seq(), uniform_weights(2), false);
  const DecoderSession session(params, enc.enc_att);
  const std::vector<int> prefix = {kBos, 8, 9, kSep};
  const auto a = decode_step(params, enc.enc_att, prefix);
  const auto b = session.next_token_probs(prefix);
  for (size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-6);
}

TEST(DecodeStep, RejectsLongPrefix) {
  const auto params = init_params<float>(tiny_config(), 5);
  const auto enc = encode_thread(params, toy_seq(), uniform_weights(2), false);
  const std::vector<int> prefix(16, 7);
  EXPECT_THROW(decode_step(params, enc.enc_att, prefix), ArgumentError);
  EXPECT_THROW(decode_step(params, enc.enc_att, std::span<const int>()), ArgumentError);
}

TEST(ForwardLoss, UniformPredictionIsLogVocab) {
  ModelConfig c = tiny_config();
  c.label_smoothing = 0.0;
  const auto params = zero_params<double>(c);
  const std::vector<int> target = {kBos, 8, 9, kEos};
  const auto r = forward_loss(params, toy_seq(), uniform_weights(2), target, c, false,
                              static_cast<BasicParams<double>*>(nullptr));
  EXPECT_NEAR(r.loss, std::log(20.0), 1e-12);
  EXPECT_EQ(r.tokens, 3);
}

TEST(ForwardLoss, PerfectPredictionIsZero) {
  ModelConfig c = tiny_config();
  c.label_smoothing = 0.0;
  auto params = zero_params<double>(c);
  // A huge LM-head bias makes EOS certain at every position.
  params.lm_head.b(0, kEos) = 1000.0;
  const std::vector<int> target = {kBos, kEos};
  const auto r = forward_loss(params, toy_seq(), uniform_weights(2), target, c, false,
                              static_cast<BasicParams<double>*>(nullptr));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(ForwardLoss, RejectsMalformedTargets) {
  const auto c = tiny_config();
  const auto params = init_params<float>(c, 1);
  const std::vector<int> no_bos = {8, 9, kEos};
  const std::vector<int> no_eos = {kBos, 8, 9};
  EXPECT_THROW(forward_loss(params, toy_seq(), uniform_weights(2), no_bos, c, false,
                            static_cast<ModelParams*>(nullptr)),
               ArgumentError);
  EXPECT_THROW(forward_loss(params, toy_seq(), uniform_weights(2), no_eos, c, false,
                            static_cast<ModelParams*>(nullptr)),
               ArgumentError);
}

TEST(ForwardLoss, NonFiniteParamsAreReported) {
  const auto c = tiny_config();
  auto params = init_params<float>(c, 1);
  params.decoder[0].ffn.in.w(0, 0) = std::numeric_limits<float>::quiet_NaN();
  ModelParams grads = zero_params<float>(c);
  const std::vector<int> target = {kBos, 8, 9, kEos};
  try {
    forward_loss(params, toy_seq(), uniform_weights(2), target, c, false, &grads);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(ForwardLoss, DisabledAttentionEqualsAllOnesWeights) {
  const auto c = tiny_config();
  const auto params = init_params<double>(c, 9, 0.3);
  const std::vector<int> target = {kBos, 8, 9, kSep, 10, kEos};
  const AttentionWeights w{{1.0, 0.2, 0.0}};
  auto g1 = zero_params<double>(c);
  auto g2 = zero_params<double>(c);
  const auto a = forward_loss(params, toy_seq(), w, target, c, true, &g1);
  const auto b = forward_loss(params, toy_seq(), uniform_weights(2), target, c, false, &g2);
  EXPECT_EQ(a.loss, b.loss);
  const auto t1 = g1.tensors();
  const auto t2 = g2.tensors();
  for (size_t i = 0; i < t1.size(); ++i) EXPECT_TRUE(*t1[i] == *t2[i]);
}

// Central finite differences in double precision against the analytic
// backward pass. Every tensor is probed at up to 100 sampled entries.
TEST(ForwardLoss, GradientMatchesFiniteDifferences) {
  const auto c = tiny_config();
  auto params = init_params<double>(c, 21, 0.5);
  // Non-trivial gains and biases so their gradients are exercised too.
  Rng perturb(4);
  params.for_each([&](const std::string& name, Matrix<double>& m) {
    if (name.ends_with(".gain") || name.ends_with(".bias") || name.ends_with(".b")) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.3 * perturb.normal();
    }
  });
  const auto seq = toy_seq();
  const AttentionWeights w{{1.0, 0.6, 0.25}};
  const std::vector<int> target = {kBos, 8, 9, kSep, 10, 11, 13, kEos};
  auto grads = zero_params<double>(c);
  forward_loss(params, seq, w, target, c, false, &grads);

  constexpr double kStep = 1e-4;
  constexpr double kTolerance = 1e-4;
  Rng pick(99);
  auto tensors = params.tensors();
  const auto grad_tensors = grads.tensors();
  const auto names = params.names();
  int checked = 0;
  for (size_t ti = 0; ti < tensors.size(); ++ti) {
    Matrix<double>& m = *tensors[ti];
    std::vector<Eigen::Index> idx(m.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[pick.below(i)]);
    if (idx.size() > 100) idx.resize(100);
    for (Eigen::Index k : idx) {
      const double saved = m.data()[k];
      m.data()[k] = saved + kStep;
      const double up = forward_loss(params, seq, w, target, c, false,
                                     static_cast<BasicParams<double>*>(nullptr)).loss;
      m.data()[k] = saved - kStep;
      const double down = forward_loss(params, seq, w, target, c, false,
                                       static_cast<BasicParams<double>*>(nullptr)).loss;
      m.data()[k] = saved;
      const double numeric = (up - down) / (2 * kStep);
      const double analytic = grad_tensors[ti]->data()[k];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      // Entries whose gradient is zero up to rounding carry no relative signal.
      if (scale < 1e-9) {
        EXPECT_NEAR(analytic, numeric, 1e-9) << names[ti] << "[" << k << "]";
      } else {
        EXPECT_LE(std::abs(numeric - analytic) / scale, kTolerance)
            << names[ti] << "[" << k << "] analytic " << analytic << " numeric " << numeric;
      }
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = tiny_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ArgumentError);
  EXPECT_NO_THROW(tiny_config().validate());
  EXPECT_NE(tiny_config().hash(), c.hash());
}

}  // namespace
}  // namespace socsum::model
