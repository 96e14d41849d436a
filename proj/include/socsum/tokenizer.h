#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "socsum/corpus.h"

namespace socsum::tokenizer {

// Reserved ids. Specials occupy the lowest ids of every vocabulary.
enum Special : int { kPad = 0, kBos = 1, kEos = 2, kSep = 3, kUnk = 4 };
inline constexpr int kNumSpecials = 5;

// Subword vocabulary: specials, then single characters, then merged pieces
// in merge order. Word pieces after the first word of a text carry a leading
// space, so decoding is plain concatenation.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> tokens, int num_chars, bool lowercase);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  const std::string& token(int id) const;
  // Returns -1 when absent.
  int id(const std::string& token) const;
  int num_chars() const { return num_chars_; }
  int num_merges() const { return size() - kNumSpecials - num_chars_; }
  bool lowercase() const { return lowercase_; }
  size_t max_token_chars() const { return max_token_chars_; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool operator==(const Vocab& other) const {
    return id_to_token_ == other.id_to_token_ &&
           num_chars_ == other.num_chars_ && lowercase_ == other.lowercase_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int num_chars_ = 0;
  bool lowercase_ = true;
  size_t max_token_chars_ = 1;
};

const std::vector<std::string>& special_names();

// Region [start, end) of a TokenSeq that came from text `source` (0 = title,
// i = comment i). Separators sit between spans and belong to none.
struct Span {
  int start = 0;
  int end = 0;
  int source = 0;
  bool operator==(const Span&) const = default;
};

struct TokenSeq {
  std::vector<int> ids;
  std::vector<Span> spans;

  // Source index per position; separators take the source of the text before.
  std::vector<int> sources() const;
};

// Byte-pair merge training over whitespace-split words of every title and
// comment. Ties on pair frequency break on the lexicographically smaller
// pair, so the result depends only on corpus order and arguments.
Vocab train_vocab(const std::vector<corpus::CleanThread>& corpus, int vocab_size,
                  int min_freq, bool lowercase = true);
Vocab train_vocab_from_texts(const std::vector<std::string>& texts,
                             int vocab_size, int min_freq, bool lowercase = true);

// Greedy longest-match tokenization of a single text (no specials).
std::vector<int> tokenize(const Vocab& vocab, std::string_view text);

// Joins the texts with one SEP between neighbours and truncates to max_len.
// The first text (title) is kept whole unless it alone exceeds max_len; the
// other texts lose trailing tokens round-robin starting from the last one,
// and are dropped entirely only once every one is down to a single token.
TokenSeq encode(const Vocab& vocab, const std::vector<std::string>& texts,
                int max_len = 512);

// Same, from pre-tokenized texts.
TokenSeq assemble(const std::vector<std::vector<int>>& texts, int max_len);

// Concatenates pieces. PAD/BOS/EOS/UNK are dropped, SEP renders as " | ".
std::string decode(const Vocab& vocab, std::span<const int> ids);

// Token list file (one token per line, line number = id) plus a sidecar
// "<path>.meta" key=value file with vocab_size, merges, chars and lowercase.
void save_vocab(const Vocab& vocab, const std::filesystem::path& path);
Vocab load_vocab(const std::filesystem::path& path);
std::string serialize_vocab(const Vocab& vocab);
// Content hash of serialize_vocab(); embedded in checkpoints.
std::string vocab_hash(const Vocab& vocab);

}  // namespace socsum::tokenizer
