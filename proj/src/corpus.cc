#include "socsum/corpus.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "socsum/common.h"

namespace socsum::corpus {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view fold_name(Fold fold) {
  switch (fold) {
    case Fold::kTrain:
      return "train";
    case Fold::kValidation:
      return "validation";
    case Fold::kTest:
      return "test";
  }
  return "train";
}

Fold parse_fold(std::string_view name) {
  if (name == "train") return Fold::kTrain;
  if (name == "validation") return Fold::kValidation;
  if (name == "test") return Fold::kTest;
  throw ArgumentError("unknown fold '" + std::string(name) + "'");
}

namespace {

std::string line_prefix(size_t line_no) {
  return "line " + std::to_string(line_no) + ": ";
}

const json& require(const json& obj, const char* field, size_t line_no) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw FormatError(line_prefix(line_no) + "missing required field '" +
                      field + "'");
  }
  return *it;
}

std::string require_string(const json& obj, const char* field, size_t line_no) {
  const json& v = require(obj, field, line_no);
  if (!v.is_string()) {
    throw FormatError(line_prefix(line_no) + "field '" + field +
                      "' must be a string");
  }
  return v.get<std::string>();
}

RawThread parse_thread(const json& obj, size_t line_no) {
  if (!obj.is_object()) {
    throw FormatError(line_prefix(line_no) + "record must be a JSON object");
  }
  RawThread thread;
  thread.id = require_string(obj, "id", line_no);
  if (thread.id.empty()) {
    throw FormatError(line_prefix(line_no) + "id must be non-empty");
  }
  thread.title = require_string(obj, "title", line_no);
  const json& comments = require(obj, "comments", line_no);
  if (!comments.is_array()) {
    throw FormatError(line_prefix(line_no) + "field 'comments' must be an array");
  }
  for (const json& c : comments) {
    if (!c.is_object()) {
      throw FormatError(line_prefix(line_no) + "comment must be a JSON object");
    }
    RawComment comment;
    comment.text = require_string(c, "text", line_no);
    const json& likes = require(c, "likes", line_no);
    if (!likes.is_number_integer()) {
      throw FormatError(line_prefix(line_no) + "field 'likes' must be an integer");
    }
    comment.likes = likes.get<int64_t>();
    if (comment.likes < 0) {
      throw FormatError(line_prefix(line_no) + "likes must be non-negative");
    }
    if (auto it = c.find("author_hash"); it != c.end() && !it->is_null()) {
      if (!it->is_string()) {
        throw FormatError(line_prefix(line_no) +
                          "field 'author_hash' must be a string");
      }
      comment.author_hash = it->get<std::string>();
    }
    thread.comments.push_back(std::move(comment));
  }
  return thread;
}

template <typename Fn>
void for_each_record(std::string_view content, Fn&& fn) {
  size_t line_no = 0;
  size_t pos = 0;
  while (pos < content.size()) {
    size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (text::normalize_ws(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(line_prefix(line_no) + "malformed JSON (" +
                        std::string(e.what()) + ")");
    }
    fn(obj, line_no);
  }
}

ordered_json comments_to_json(const std::vector<RawComment>& comments) {
  ordered_json arr = ordered_json::array();
  for (const auto& c : comments) {
    ordered_json jc;
    jc["text"] = c.text;
    jc["likes"] = c.likes;
    if (c.author_hash) jc["author_hash"] = *c.author_hash;
    arr.push_back(std::move(jc));
  }
  return arr;
}

}  // namespace

std::vector<RawThread> parse_corpus(std::string_view content) {
  std::vector<RawThread> threads;
  std::set<std::string> ids;
  for_each_record(content, [&](const json& obj, size_t line_no) {
    RawThread t = parse_thread(obj, line_no);
    if (!ids.insert(t.id).second) {
      throw FormatError(line_prefix(line_no) + "duplicate id '" + t.id + "'");
    }
    threads.push_back(std::move(t));
  });
  return threads;
}

std::vector<RawThread> load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_text_file(path));
}

std::vector<CleanThread> parse_clean_corpus(std::string_view content) {
  std::vector<CleanThread> threads;
  std::set<std::string> ids;
  for_each_record(content, [&](const json& obj, size_t line_no) {
    RawThread raw = parse_thread(obj, line_no);
    if (!ids.insert(raw.id).second) {
      throw FormatError(line_prefix(line_no) + "duplicate id '" + raw.id + "'");
    }
    CleanThread t;
    t.id = std::move(raw.id);
    t.title = std::move(raw.title);
    t.comments = std::move(raw.comments);
    const std::string fold = require_string(obj, "fold", line_no);
    try {
      t.fold = parse_fold(fold);
    } catch (const ArgumentError& e) {
      throw FormatError(line_prefix(line_no) + e.what());
    }
    threads.push_back(std::move(t));
  });
  return threads;
}

std::vector<CleanThread> load_clean_corpus(const std::filesystem::path& path) {
  return parse_clean_corpus(read_text_file(path));
}

std::string serialize_clean_corpus(const std::vector<CleanThread>& threads) {
  std::string out;
  for (const auto& t : threads) {
    ordered_json obj;
    obj["id"] = t.id;
    obj["title"] = t.title;
    obj["comments"] = comments_to_json(t.comments);
    obj["fold"] = std::string(fold_name(t.fold));
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_raw_corpus(const std::vector<RawThread>& threads) {
  std::string out;
  for (const auto& t : threads) {
    ordered_json obj;
    obj["id"] = t.id;
    obj["title"] = t.title;
    obj["comments"] = comments_to_json(t.comments);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

// --- cleaning -------------------------------------------------------------

namespace {

bool ascii_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)); }
bool word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_' || u >= 0x80;
}
bool space(char c) { return std::isspace(static_cast<unsigned char>(c)); }

bool starts_with_ci(std::string_view s, size_t pos, std::string_view prefix) {
  if (pos + prefix.size() > s.size()) return false;
  for (size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[pos + i])) != prefix[i]) {
      return false;
    }
  }
  return true;
}

std::string strip_html(std::string_view s) {
  std::string out;
  size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '<' && i + 1 < s.size() &&
        (ascii_alpha(s[i + 1]) || s[i + 1] == '/' || s[i + 1] == '!')) {
      const size_t close = s.find('>', i + 1);
      const size_t reopen = s.find('<', i + 1);
      if (close != std::string_view::npos && close < reopen) {
        out.push_back(' ');
        i = close + 1;
        continue;
      }
    }
    if (s[i] == '&') {
      size_t j = i + 1;
      if (j < s.size() && s[j] == '#') ++j;
      const size_t body = j;
      while (j < s.size() && std::isalnum(static_cast<unsigned char>(s[j]))) ++j;
      if (j > body && j < s.size() && s[j] == ';' && j - body <= 10) {
        out.push_back(' ');
        i = j + 1;
        continue;
      }
    }
    out.push_back(s[i++]);
  }
  return out;
}

std::string strip_urls(std::string_view s) {
  std::string out;
  size_t i = 0;
  while (i < s.size()) {
    const bool boundary = i == 0 || space(s[i - 1]) || !word_byte(s[i - 1]);
    if (starts_with_ci(s, i, "http://") || starts_with_ci(s, i, "https://") ||
        (boundary && starts_with_ci(s, i, "www."))) {
      while (i < s.size() && !space(s[i])) ++i;
      out.push_back(' ');
      continue;
    }
    out.push_back(s[i++]);
  }
  return out;
}

std::string strip_mentions(std::string_view s) {
  std::string out;
  size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '@' && i + 1 < s.size() && word_byte(s[i + 1])) {
      ++i;
      while (i < s.size() && word_byte(s[i])) ++i;
      out.push_back(' ');
      continue;
    }
    out.push_back(s[i++]);
  }
  return out;
}

int laugh_kind(char c) {
  switch (std::tolower(static_cast<unsigned char>(c))) {
    case 'j':
    case 'h':
      return 1;
    case 'a':
    case 'e':
    case 'i':
      return 2;
    default:
      return 0;
  }
}

// Removes maximal runs of j/h/a/e/i of length >= 4 that alternate
// consonant and vowel.
std::string strip_laughter(std::string_view s) {
  std::string out;
  size_t i = 0;
  while (i < s.size()) {
    if (laugh_kind(s[i]) == 0) {
      out.push_back(s[i++]);
      continue;
    }
    const size_t start = i;
    bool alternating = true;
    for (++i; i < s.size() && laugh_kind(s[i]) != 0; ++i) {
      if (laugh_kind(s[i]) == laugh_kind(s[i - 1])) alternating = false;
    }
    if (alternating && i - start >= 4) {
      out.push_back(' ');
    } else {
      out.append(s.substr(start, i - start));
    }
  }
  return out;
}

bool is_punct_unit(std::string_view unit) {
  if (unit.size() == 1) {
    return std::ispunct(static_cast<unsigned char>(unit[0])) != 0;
  }
  static const std::set<std::string_view> kExtra = {"¡", "¿", "«", "»", "…",
                                                    "“", "”", "‘", "’"};
  return kExtra.count(unit) > 0;
}

std::string collapse_punctuation(std::string_view s) {
  std::string out;
  const auto units = text::utf8_chars(s);
  for (size_t i = 0; i < units.size(); ++i) {
    if (i > 0 && units[i] == units[i - 1] && is_punct_unit(units[i])) continue;
    out += units[i];
  }
  return out;
}

std::string clean_once(std::string_view raw) {
  std::string s = strip_html(raw);
  s = strip_urls(s);
  s = strip_mentions(s);
  s = strip_laughter(s);
  s = collapse_punctuation(s);
  return text::normalize_ws(s);
}

}  // namespace

std::string clean_text(std::string_view raw) {
  std::string current = clean_once(raw);
  for (;;) {
    std::string next = clean_once(current);
    if (next == current) return current;
    current = std::move(next);
  }
}

size_t word_count(std::string_view text) { return text::split_ws(text).size(); }

std::vector<CleanThread> preprocess(const std::vector<RawThread>& threads,
                                    int min_words) {
  if (min_words < 1) throw ArgumentError("min_words must be >= 1");
  std::vector<CleanThread> out;
  for (const auto& raw : threads) {
    CleanThread t;
    t.id = raw.id;
    t.title = clean_text(raw.title);
    for (const auto& c : raw.comments) {
      std::string cleaned = clean_text(c.text);
      if (word_count(cleaned) < static_cast<size_t>(min_words)) continue;
      t.comments.push_back({std::move(cleaned), c.likes, c.author_hash});
    }
    if (!t.comments.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::vector<CleanThread> partition(std::vector<CleanThread> threads,
                                   const FoldRatios& ratios, uint64_t seed) {
  const std::array<double, 3> r = {ratios.train, ratios.validation, ratios.test};
  for (double v : r) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ArgumentError("fold ratios must be positive");
    }
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw ArgumentError("fold ratios must sum to 1");
  }
  const size_t n = threads.size();
  std::array<size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  size_t assigned = 0;
  for (int f = 0; f < 3; ++f) {
    const double exact = r[f] * static_cast<double>(n);
    sizes[f] = static_cast<size_t>(std::floor(exact + 1e-9));
    remainder[f] = exact - static_cast<double>(sizes[f]);
    assigned += sizes[f];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];

  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.below(i)]);
  }
  for (size_t k = 0; k < n; ++k) {
    Fold fold = Fold::kTest;
    if (k < sizes[0]) {
      fold = Fold::kTrain;
    } else if (k < sizes[0] + sizes[1]) {
      fold = Fold::kValidation;
    }
    threads[perm[k]].fold = fold;
  }
  return threads;
}

std::vector<CleanThread> select_fold(const std::vector<CleanThread>& threads,
                                     Fold fold) {
  std::vector<CleanThread> out;
  for (const auto& t : threads) {
    if (t.fold == fold) out.push_back(t);
  }
  return out;
}

}  // namespace socsum::corpus
