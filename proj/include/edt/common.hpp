#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edt {

// Error taxonomy mapped onto CLI exit codes: usage=1, data=2, backend=3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackendError : std::runtime_error {
  explicit BackendError(const std::string& msg, int attempts = 0)
      : std::runtime_error(msg), attempts(attempts) {}
  int attempts;
};

// 64-bit FNV-1a. Stable across platforms and processes, unlike std::hash.
uint64_t fnv1a64(std::string_view s);

// SplitMix64 step; advances the state and returns the next value.
uint64_t splitmix64(uint64_t& state);

// Uniform double in [0,1) from a splitmix stream.
double splitmix_unit(uint64_t& state);

// SHA-256 of the input, as 32 raw bytes / lowercase hex.
std::array<uint8_t, 32> sha256_bytes(std::string_view data);
std::string sha256_hex(std::string_view data);

// Lowercased alphanumeric tokens of a text. "Trail Shoe 2" -> {trail, shoe, 2}.
std::vector<std::string> tokenize_lower(std::string_view text);

// Lowercase, non-alphanumeric runs collapsed to single spaces, trimmed.
// Used to compare item titles for deduplication.
std::string normalize_title(std::string_view title);

}  // namespace edt
