#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace socsum {

// Base of every error the library throws. what() is a single line.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files (corpus lines, vocab files, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Violated preconditions on arguments.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Portable deterministic generator. std::mt19937_64 is fully specified by the
// standard; the distributions are not, so draws are derived from raw bits here.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n). n must be > 0.
  uint64_t below(uint64_t n);
  // Standard normal via Box-Muller (no cached second value, keeps state small).
  double normal();

  // Text round-trip of the full generator state.
  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  bool operator==(const Rng& other) const;

 private:
  uint64_t state_;
};

// FNV-1a 64-bit, used for content hashes of vocab files and checkpoints.
uint64_t fnv1a64(std::string_view data, uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t value);

namespace text {

// Splits UTF-8 text into code-point substrings. Invalid bytes become
// single-byte units so nothing is lost.
std::vector<std::string> utf8_chars(std::string_view s);

// Lowercases ASCII and the Latin-1 supplement (U+00C0..U+00DE).
std::string lowercase(std::string_view s);

// Splits on ASCII whitespace, dropping empty pieces.
std::vector<std::string> split_ws(std::string_view s);

// Collapses whitespace runs to one space and trims both ends.
std::string normalize_ws(std::string_view s);

}  // namespace text
}  // namespace socsum
