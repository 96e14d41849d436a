#include "socsum/tokenizer.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "socsum/common.h"
#include "socsum/corpus.h"
#include "socsum/synthetic.h"

namespace socsum::tokenizer {
namespace {

Vocab char_vocab(const std::vector<std::string>& texts) {
  std::set<std::string> chars;
  for (const auto& t : texts) {
    for (const auto& c : text::utf8_chars(t)) chars.insert(c);
  }
  return train_vocab_from_texts(texts, kNumSpecials + static_cast<int>(chars.size()), 1);
}

// Most frequent adjacent pair over the words of `texts`, ties to the smaller.
std::pair<std::string, std::string> oracle_first_merge(const std::vector<std::string>& texts) {
  std::map<std::pair<std::string, std::string>, int> counts;
  for (const auto& t : texts) {
    const auto words = text::split_ws(t);
    for (size_t w = 0; w < words.size(); ++w) {
      auto chars = text::utf8_chars(words[w]);
      if (w > 0) chars.insert(chars.begin(), " ");
      for (size_t i = 0; i + 1 < chars.size(); ++i) ++counts[{chars[i], chars[i + 1]}];
    }
  }
  std::pair<std::string, std::string> best;
  int best_n = 0;
  for (const auto& [p, n] : counts) {
    if (n > best_n) {
      best = p;
      best_n = n;
    }
  }
  return best;
}

TEST(TrainVocab, MostFrequentPairMergedFirst) {
  const std::vector<std::string> texts = {"aaab", "aab"};
  const auto [l, r] = oracle_first_merge(texts);
  EXPECT_EQ(l + r, "aa");
  const Vocab v = train_vocab_from_texts(texts, kNumSpecials + 2 + 1, 1);
  EXPECT_EQ(v.num_merges(), 1);
  EXPECT_EQ(v.token(v.size() - 1), "aa");
}

TEST(TrainVocab, OracleAgreesOnRandomCorpora) {
  Rng rng(5);
  const std::string alphabet = "abcd";
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> texts;
    for (int t = 0; t < 4; ++t) {
      std::string s;
      const int words = 1 + static_cast<int>(rng.below(4));
      for (int w = 0; w < words; ++w) {
        if (w) s += ' ';
        const int len = 1 + static_cast<int>(rng.below(5));
        for (int i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
      }
      texts.push_back(s);
    }
    const auto [l, r] = oracle_first_merge(texts);
    const Vocab base = char_vocab(texts);
    const Vocab v = train_vocab_from_texts(texts, base.size() + 1, 1);
    if (v.num_merges() == 1) EXPECT_EQ(v.token(v.size() - 1), l + r);
  }
}

TEST(TrainVocab, BudgetAndErrors) {
  const Vocab v = char_vocab({"ab ba"});
  EXPECT_EQ(v.num_merges(), 0);
  EXPECT_EQ(v.num_chars(), 3);  // 'a', 'b', ' '
  EXPECT_THROW(train_vocab_from_texts({}, 100, 1), ArgumentError);
  EXPECT_THROW(train_vocab_from_texts({"   "}, 100, 1), ArgumentError);
  EXPECT_THROW(train_vocab_from_texts({"abc"}, kNumSpecials + 2, 1), ArgumentError);
  EXPECT_THROW(train_vocab_from_texts({"abc"}, 100, 0), ArgumentError);
  EXPECT_THROW(train_vocab(std::vector<corpus::CleanThread>{}, 100, 1), ArgumentError);
}

TEST(TrainVocab, DeterministicAndDense) {
  const auto threads = corpus::preprocess(synthetic::generate({.n_threads = 10, .seed = 4}));
  const Vocab a = train_vocab(threads, 200, 2);
  const Vocab b = train_vocab(threads, 200, 2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(vocab_hash(a), vocab_hash(b));
  for (int i = 0; i < a.size(); ++i) EXPECT_EQ(a.id(a.token(i)), i);
  for (int i = 0; i < kNumSpecials; ++i) EXPECT_EQ(a.token(i), special_names()[i]);
}

TEST(Encode, WorkedExample) {
  const Vocab v = char_vocab({"ab"});
  const TokenSeq s = encode(v, {"ab", "ab"});
  const int a = v.id("a"), b = v.id("b");
  EXPECT_EQ(s.ids, (std::vector<int>{a, b, kSep, a, b}));
  EXPECT_EQ(s.spans, (std::vector<Span>{{0, 2, 0}, {3, 5, 1}}));
  EXPECT_EQ(s.sources(), (std::vector<int>{0, 0, 0, 1, 1}));
}

TEST(Encode, TruncatesToMaxLen) {
  const Vocab v = char_vocab({"abcdefghij"});
  const TokenSeq one = encode(v, {"abcdefghijabcdefghij"}, 8);
  EXPECT_EQ(one.ids.size(), 8u);
  // Title kept whole, comments trimmed from the back round-robin.
  const TokenSeq many = encode(v, {"abc", "defg", "hij"}, 9);
  EXPECT_EQ(many.ids.size(), 9u);
  EXPECT_EQ(many.spans.front(), (Span{0, 3, 0}));
  // Three tokens removed: last, second to last, last.
  EXPECT_EQ(many.spans[1].end - many.spans[1].start, 3);
  EXPECT_EQ(many.spans[2].end - many.spans[2].start, 1);
  for (int len = 2; len < 14; ++len) {
    const TokenSeq s = encode(v, {"abc", "defg", "hij", "ab"}, len);
    EXPECT_LE(static_cast<int>(s.ids.size()), len);
    for (size_t i = 1; i < s.spans.size(); ++i) {
      EXPECT_GE(s.spans[i].source, s.spans[i - 1].source);
    }
  }
}

TEST(Encode, UnknownCharactersBecomeUnk) {
  const Vocab v = char_vocab({"ab"});
  EXPECT_EQ(tokenize(v, "az"), (std::vector<int>{v.id("a"), kUnk}));
}

TEST(Decode, WorkedExamples) {
  const Vocab v = train_vocab_from_texts({"cat a b"}, 40, 1);
  const auto cat = tokenize(v, "cat");
  std::vector<int> ids{kBos};
  ids.insert(ids.end(), cat.begin(), cat.end());
  ids.push_back(kEos);
  EXPECT_EQ(decode(v, ids), "cat");
  EXPECT_EQ(decode(v, std::vector<int>{v.id("a"), kSep, v.id("b")}), "a | b");
  EXPECT_EQ(decode(v, std::vector<int>{}), "");
  EXPECT_THROW(decode(v, std::vector<int>{v.size()}), ArgumentError);
}

TEST(Decode, RoundTrip) {
  const auto threads = corpus::preprocess(synthetic::generate({.n_threads = 10, .seed = 8}));
  const Vocab v = train_vocab(threads, 300, 2);
  for (const auto& t : threads) {
    for (const auto& c : t.comments) {
      const TokenSeq s = encode(v, {c.text});
      for (int id : s.ids) EXPECT_LT(id, v.size());
      EXPECT_EQ(decode(v, s.ids), text::normalize_ws(text::lowercase(c.text)));
    }
  }
  EXPECT_EQ(decode(v, encode(v, {"  hola   que  tal "}).ids), "hola que tal");
}

TEST(VocabFile, SaveLoad) {
  const auto threads = corpus::preprocess(synthetic::generate({.n_threads = 6, .seed = 1}));
  const Vocab v = train_vocab(threads, 150, 1);
  const auto path = std::filesystem::temp_directory_path() / "socsum_vocab_test.txt";
  save_vocab(v, path);
  const Vocab back = load_vocab(path);
  EXPECT_EQ(back, v);
  EXPECT_EQ(vocab_hash(back), vocab_hash(v));
  const std::string meta = corpus::read_text_file(path.string() + ".meta");
  EXPECT_NE(meta.find("vocab_size=150"), std::string::npos);
  EXPECT_NE(meta.find("merges=" + std::to_string(v.num_merges())), std::string::npos);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".meta");
}

}  // namespace
}  // namespace socsum::tokenizer
