#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mdrnn {

/// Splits UTF-8 text into code points (each returned as its byte sequence).
/// Throws DataError on malformed input.
std::vector<std::string> utf8_code_points(std::string_view text);

/// Character set of the recognizer. Label 0 is the CTC blank; characters
/// (whitespace included) take labels 1..L in the order given.
class LabelAlphabet {
 public:
  static constexpr int kBlank = 0;

  LabelAlphabet() = default;
  explicit LabelAlphabet(std::vector<std::string> symbols);

  /// One symbol per code point of `chars`.
  static LabelAlphabet from_chars(std::string_view chars);
  /// Sorted set of code points used in `texts`.
  static LabelAlphabet from_transcripts(std::span<const std::string> texts);

  /// Number of characters, blank excluded.
  std::size_t label_count() const { return symbols_.size(); }
  /// Number of network output classes (characters + blank).
  std::size_t size() const { return symbols_.size() + 1; }

  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(int label) const;
  std::optional<int> index_of(std::string_view symbol) const;
  /// Label of the ASCII space, if part of the alphabet.
  std::optional<int> space() const { return index_of(" "); }

  std::optional<std::vector<int>> try_encode(std::string_view text) const;
  /// Throws DataError naming the first unknown symbol.
  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> labels) const;

  friend bool operator==(const LabelAlphabet& a, const LabelAlphabet& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace mdrnn
