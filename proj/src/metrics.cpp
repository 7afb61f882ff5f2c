#include "mdrnn/metrics.hpp"

#include <stdexcept>

#include "mdrnn/alphabet.hpp"

namespace mdrnn {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

double ErrorCount::rate() const {
  if (reference == 0) throw std::invalid_argument("error rate over an empty reference");
  return static_cast<double>(errors) / static_cast<double>(reference);
}

ErrorCount char_errors(std::string_view hyp, std::string_view ref) {
  const auto h = utf8_code_points(hyp);
  const auto r = utf8_code_points(ref);
  return {edit_distance<std::string>(h, r), r.size()};
}

ErrorCount word_errors(std::string_view hyp, std::string_view ref, WerMode mode) {
  const auto h = split_words(hyp);
  const auto r = split_words(ref);
  if (mode == WerMode::Isolated) return {h == r ? 0u : 1u, 1};
  return {edit_distance<std::string>(h, r), r.size()};
}

double cer(std::string_view hyp, std::string_view ref) { return char_errors(hyp, ref).rate(); }

double wer(std::string_view hyp, std::string_view ref, WerMode mode) {
  return word_errors(hyp, ref, mode).rate();
}

void Scorer::add(std::string_view hyp, std::string_view ref) {
  chars_ += char_errors(hyp, ref);
  words_ += word_errors(hyp, ref, mode_);
  ++lines_;
}

}  // namespace mdrnn
