#include "socsum/tokenizer.h"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "socsum/common.h"

namespace socsum::tokenizer {

const std::vector<std::string>& special_names() {
  static const std::vector<std::string> kNames = {"[PAD]", "[BOS]", "[EOS]",
                                                  "[SEP]", "[UNK]"};
  return kNames;
}

Vocab::Vocab(std::vector<std::string> tokens, int num_chars, bool lowercase)
    : id_to_token_(std::move(tokens)), num_chars_(num_chars), lowercase_(lowercase) {
  if (static_cast<int>(id_to_token_.size()) < kNumSpecials + num_chars) {
    throw FormatError("vocab smaller than its declared specials and characters");
  }
  for (int i = 0; i < kNumSpecials; ++i) {
    if (id_to_token_[i] != special_names()[i]) {
      throw FormatError("vocab id " + std::to_string(i) + " must be " +
                        special_names()[i]);
    }
  }
  for (int i = 0; i < size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], i).second) {
      throw FormatError("duplicate vocab token '" + id_to_token_[i] + "'");
    }
    if (i >= kNumSpecials) {
      max_token_chars_ =
          std::max(max_token_chars_, text::utf8_chars(id_to_token_[i]).size());
    }
  }
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw ArgumentError("token id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[id];
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

std::vector<int> TokenSeq::sources() const {
  std::vector<int> out(ids.size(), 0);
  int current = spans.empty() ? 0 : spans.front().source;
  size_t pos = 0;
  for (const auto& span : spans) {
    for (; pos < static_cast<size_t>(span.start) && pos < out.size(); ++pos) out[pos] = current;
    current = span.source;
    for (; pos < static_cast<size_t>(span.end) && pos < out.size(); ++pos) out[pos] = current;
  }
  for (; pos < out.size(); ++pos) out[pos] = current;
  return out;
}

namespace {

// Whitespace words; every word but the first carries a leading space.
std::vector<std::string> pretokenize(std::string_view text, bool lowercase) {
  const std::string norm = lowercase ? text::lowercase(text) : std::string(text);
  std::vector<std::string> words = text::split_ws(norm);
  for (size_t i = 1; i < words.size(); ++i) words[i].insert(words[i].begin(), ' ');
  return words;
}

}  // namespace

Vocab train_vocab_from_texts(const std::vector<std::string>& texts,
                             int vocab_size, int min_freq, bool lowercase) {
  if (min_freq < 1) throw ArgumentError("min_freq must be >= 1");
  std::map<std::string, int64_t> word_freq;
  for (const auto& t : texts) {
    for (auto& w : pretokenize(t, lowercase)) ++word_freq[w];
  }
  if (word_freq.empty()) throw ArgumentError("cannot train a vocab on an empty corpus");

  std::vector<std::vector<std::string>> words;
  std::vector<int64_t> freqs;
  std::set<std::string> chars;
  for (const auto& [w, f] : word_freq) {
    words.push_back(text::utf8_chars(w));
    freqs.push_back(f);
    chars.insert(words.back().begin(), words.back().end());
  }
  const int num_chars = static_cast<int>(chars.size());
  if (vocab_size < kNumSpecials + num_chars) {
    throw ArgumentError("vocab_size " + std::to_string(vocab_size) +
                        " is below specials + characters (" +
                        std::to_string(kNumSpecials + num_chars) + ")");
  }

  std::vector<std::string> tokens = special_names();
  tokens.insert(tokens.end(), chars.begin(), chars.end());
  std::set<std::string> known(tokens.begin(), tokens.end());

  while (static_cast<int>(tokens.size()) < vocab_size) {
    std::map<std::pair<std::string, std::string>, int64_t> pairs;
    for (size_t w = 0; w < words.size(); ++w) {
      const auto& sym = words[w];
      for (size_t i = 0; i + 1 < sym.size(); ++i) pairs[{sym[i], sym[i + 1]}] += freqs[w];
    }
    // std::map iterates pairs in lexicographic order, so the first maximum
    // wins ties.
    const std::pair<std::string, std::string>* best = nullptr;
    int64_t best_count = 0;
    for (const auto& [pair, count] : pairs) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < min_freq) break;
    const std::string merged = best->first + best->second;
    for (auto& sym : words) {
      std::vector<std::string> out;
      out.reserve(sym.size());
      for (size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && sym[i] == best->first && sym[i + 1] == best->second) {
          out.push_back(merged);
          ++i;
        } else {
          out.push_back(sym[i]);
        }
      }
      sym = std::move(out);
    }
    if (known.insert(merged).second) tokens.push_back(merged);
  }
  return Vocab(std::move(tokens), num_chars, lowercase);
}

Vocab train_vocab(const std::vector<corpus::CleanThread>& corpus, int vocab_size,
                  int min_freq, bool lowercase) {
  std::vector<std::string> texts;
  for (const auto& t : corpus) {
    texts.push_back(t.title);
    for (const auto& c : t.comments) texts.push_back(c.text);
  }
  return train_vocab_from_texts(texts, vocab_size, min_freq, lowercase);
}

std::vector<int> tokenize(const Vocab& vocab, std::string_view text) {
  std::vector<int> ids;
  for (const auto& word : pretokenize(text, vocab.lowercase())) {
    const auto chars = text::utf8_chars(word);
    size_t i = 0;
    while (i < chars.size()) {
      const size_t longest = std::min(vocab.max_token_chars(), chars.size() - i);
      int found = -1;
      size_t used = 0;
      for (size_t len = longest; len >= 1; --len) {
        std::string piece;
        for (size_t k = 0; k < len; ++k) piece += chars[i + k];
        const int id = vocab.id(piece);
        if (id >= kNumSpecials) {
          found = id;
          used = len;
          break;
        }
      }
      if (found < 0) {
        ids.push_back(kUnk);
        ++i;
      } else {
        ids.push_back(found);
        i += used;
      }
    }
  }
  return ids;
}

TokenSeq assemble(const std::vector<std::vector<int>>& texts, int max_len) {
  if (texts.empty()) throw ArgumentError("encode needs at least one text");
  if (max_len < 2) throw ArgumentError("max_len must be >= 2");
  TokenSeq seq;
  const auto& title = texts[0];
  if (static_cast<int>(title.size()) >= max_len) {
    seq.ids.assign(title.begin(), title.begin() + max_len);
    seq.spans.push_back({0, max_len, 0});
    return seq;
  }

  std::vector<int> lens;
  int64_t total = static_cast<int64_t>(title.size());
  for (size_t i = 1; i < texts.size(); ++i) {
    lens.push_back(static_cast<int>(texts[i].size()));
    total += 1 + lens.back();
  }
  int64_t excess = total - max_len;
  size_t kept = lens.size();
  while (excess > 0 && kept > 0) {
    int64_t shrinkable = 0;
    for (size_t i = 0; i < kept; ++i) shrinkable += lens[i] > 1 ? 1 : 0;
    if (shrinkable == 0) {
      // Every comment is down to one token: drop whole comments from the end.
      --kept;
      excess -= 1 + lens[kept];
    } else if (excess >= shrinkable) {
      for (size_t i = 0; i < kept; ++i) {
        if (lens[i] > 1) --lens[i];
      }
      excess -= shrinkable;
    } else {
      for (size_t i = kept; i-- > 0 && excess > 0;) {
        if (lens[i] > 1) {
          --lens[i];
          --excess;
        }
      }
    }
  }

  seq.ids.insert(seq.ids.end(), title.begin(), title.end());
  seq.spans.push_back({0, static_cast<int>(title.size()), 0});
  for (size_t i = 0; i < kept; ++i) {
    seq.ids.push_back(kSep);
    const int start = static_cast<int>(seq.ids.size());
    seq.ids.insert(seq.ids.end(), texts[i + 1].begin(), texts[i + 1].begin() + lens[i]);
    seq.spans.push_back({start, static_cast<int>(seq.ids.size()), static_cast<int>(i + 1)});
  }
  return seq;
}

TokenSeq encode(const Vocab& vocab, const std::vector<std::string>& texts,
                int max_len) {
  std::vector<std::vector<int>> tokenized;
  tokenized.reserve(texts.size());
  for (const auto& t : texts) tokenized.push_back(tokenize(vocab, t));
  return assemble(tokenized, max_len);
}

std::string decode(const Vocab& vocab, std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (id == kSep) {
      out += " | ";
    } else if (id >= kNumSpecials) {
      out += tok;
    }
  }
  return text::normalize_ws(out);
}

std::string serialize_vocab(const Vocab& vocab) {
  std::string out;
  for (const auto& t : vocab.tokens()) {
    out += t;
    out += '\n';
  }
  return out;
}

std::string vocab_hash(const Vocab& vocab) {
  std::string content = serialize_vocab(vocab);
  content += vocab.lowercase() ? "lowercase=1" : "lowercase=0";
  return hex64(fnv1a64(content));
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  corpus::write_text_file(path, serialize_vocab(vocab));
  std::ostringstream meta;
  meta << "vocab_size=" << vocab.size() << '\n'
       << "merges=" << vocab.num_merges() << '\n'
       << "chars=" << vocab.num_chars() << '\n'
       << "lowercase=" << (vocab.lowercase() ? 1 : 0) << '\n';
  corpus::write_text_file(path.string() + ".meta", meta.str());
}

Vocab load_vocab(const std::filesystem::path& path) {
  const std::string content = corpus::read_text_file(path);
  std::vector<std::string> tokens;
  size_t pos = 0;
  while (pos < content.size()) {
    size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    tokens.push_back(content.substr(pos, end - pos));
    pos = end + 1;
  }
  std::map<std::string, std::string> meta;
  std::istringstream in(corpus::read_text_file(path.string() + ".meta"));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"vocab_size", "merges", "chars", "lowercase"}) {
    if (!meta.count(key)) {
      throw FormatError("vocab meta missing key '" + std::string(key) + "'");
    }
  }
  int vocab_size = 0;
  int chars = 0;
  int merges = 0;
  try {
    vocab_size = std::stoi(meta["vocab_size"]);
    chars = std::stoi(meta["chars"]);
    merges = std::stoi(meta["merges"]);
  } catch (const std::exception&) {
    throw FormatError("vocab meta has non-integer counts");
  }
  if (vocab_size != static_cast<int>(tokens.size()) ||
      vocab_size != kNumSpecials + chars + merges) {
    throw FormatError("vocab meta does not match token file (" +
                      std::to_string(tokens.size()) + " tokens)");
  }
  return Vocab(std::move(tokens), chars, meta["lowercase"] == "1");
}

}  // namespace socsum::tokenizer
