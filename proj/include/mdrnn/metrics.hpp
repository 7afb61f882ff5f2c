#pragma once

// Character and word error rates. Corpus rates are the summed edit distance
// over the summed reference length, not a mean of per-line rates.

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mdrnn {

/// Levenshtein distance with unit costs.
template <class T>
std::size_t edit_distance(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Splits on runs of ASCII whitespace.
std::vector<std::string> split_words(std::string_view text);

enum class WerMode { Isolated, Line };

struct ErrorCount {
  std::size_t errors = 0;
  std::size_t reference = 0;

  /// errors / reference; throws std::invalid_argument if reference == 0.
  double rate() const;
  ErrorCount& operator+=(const ErrorCount& o) {
    errors += o.errors;
    reference += o.reference;
    return *this;
  }
};

/// Code-point edit distance; whitespace counts as a character.
ErrorCount char_errors(std::string_view hyp, std::string_view ref);
/// Isolated: one reference unit, one error if the strings differ.
/// Line: word-level edit distance over reference word count.
ErrorCount word_errors(std::string_view hyp, std::string_view ref, WerMode mode);

double cer(std::string_view hyp, std::string_view ref);
double wer(std::string_view hyp, std::string_view ref, WerMode mode);

/// Accumulates corpus-level CER and WER.
class Scorer {
 public:
  explicit Scorer(WerMode mode = WerMode::Line) : mode_(mode) {}
  void add(std::string_view hyp, std::string_view ref);
  double cer() const { return chars_.rate(); }
  double wer() const { return words_.rate(); }
  const ErrorCount& chars() const { return chars_; }
  const ErrorCount& words() const { return words_; }
  std::size_t lines() const { return lines_; }

 private:
  WerMode mode_;
  ErrorCount chars_;
  ErrorCount words_;
  std::size_t lines_ = 0;
};

}  // namespace mdrnn
