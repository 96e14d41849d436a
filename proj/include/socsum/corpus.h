#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace socsum::corpus {

struct RawComment {
  std::string text;
  int64_t likes = 0;
  std::optional<std::string> author_hash;
};

// One news item (the title) with its comment thread.
struct RawThread {
  std::string id;
  std::string title;
  std::vector<RawComment> comments;
};

enum class Fold { kTrain, kValidation, kTest };

std::string_view fold_name(Fold fold);
Fold parse_fold(std::string_view name);

using CleanComment = RawComment;

// A thread after cleaning and the minimum-length filter. Every comment has at
// least the configured number of words and the comment order is preserved.
struct CleanThread {
  std::string id;
  std::string title;
  std::vector<CleanComment> comments;
  Fold fold = Fold::kTrain;
};

// Reads one thread per line. Blank lines are skipped. Errors carry the
// 1-based line number; ids must be unique within the file.
std::vector<RawThread> load_corpus(const std::filesystem::path& path);
std::vector<RawThread> parse_corpus(std::string_view content);

// Clean corpus I/O: the raw schema plus a "fold" field.
std::vector<CleanThread> load_clean_corpus(const std::filesystem::path& path);
std::vector<CleanThread> parse_clean_corpus(std::string_view content);
std::string serialize_clean_corpus(const std::vector<CleanThread>& threads);
std::string serialize_raw_corpus(const std::vector<RawThread>& threads);
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

// Rule order: HTML tags and entities, URLs, @-mentions, laughter words,
// repeated punctuation, whitespace. Rules are reapplied until nothing changes,
// so the function is idempotent.
std::string clean_text(std::string_view raw);

size_t word_count(std::string_view text);

std::vector<CleanThread> preprocess(const std::vector<RawThread>& threads,
                                    int min_words = 5);

struct FoldRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Seeded shuffle then largest-remainder fold sizes. Output keeps input order.
std::vector<CleanThread> partition(std::vector<CleanThread> threads,
                                   const FoldRatios& ratios, uint64_t seed);

std::vector<CleanThread> select_fold(const std::vector<CleanThread>& threads,
                                     Fold fold);

}  // namespace socsum::corpus
