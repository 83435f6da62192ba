#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cbench {

/// Base class for every error the harness raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or missing configuration (unknown endpoint, missing few-shot
/// exemplars, out-of-range pipeline parameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing and seeded randomness.
//
// Seeded shuffles must be byte-stable across platforms, so we avoid the
// implementation-defined std distributions and only consume raw 64-bit draws
// from mt19937_64.
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);
std::string hex64(std::uint64_t v);

/// Mixes a user seed with a salt (video id, task kind, annotator id, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt);

class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// UTF-8 and string helpers.
// ---------------------------------------------------------------------------

/// Decodes UTF-8 into code points. Invalid bytes decode as U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view text);
std::string encode_utf8(char32_t cp);
std::size_t utf8_length(std::string_view text);

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool iequals_ascii(std::string_view a, std::string_view b);
bool contains_icase(std::string_view haystack, std::string_view needle);
std::vector<std::string> split_lines(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Replaces every `{{name}}` placeholder with the mapped value. Unknown
/// placeholders are left untouched.
std::string render_template(
    std::string_view tmpl,
    const std::vector<std::pair<std::string, std::string>>& values);

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view content);

/// Returns a compiled-in copy of a shipped resource (e.g. "data/taxonomy.json").
std::string_view embedded_resource(const std::string& name);

}  // namespace cbench
