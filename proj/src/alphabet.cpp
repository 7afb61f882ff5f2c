#include "mdrnn/alphabet.hpp"

#include <algorithm>
#include <set>

#include "mdrnn/errors.hpp"

namespace mdrnn {

std::vector<std::string> utf8_code_points(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    if (lead < 0x80) len = 1;
    else if ((lead >> 5) == 0x6) len = 2;
    else if ((lead >> 4) == 0xE) len = 3;
    else if ((lead >> 3) == 0x1E) len = 4;
    else throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    if (i + len > text.size()) throw DataError("truncated UTF-8 sequence");
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(text[i + k]) >> 6) != 0x2)
        throw DataError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

LabelAlphabet::LabelAlphabet(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty()) throw ConfigError("alphabet must contain at least one symbol");
  for (std::size_t k = 0; k < symbols_.size(); ++k) {
    if (symbols_[k].empty()) throw ConfigError("alphabet symbol must be non-empty");
    if (!index_.emplace(symbols_[k], static_cast<int>(k) + 1).second)
      throw ConfigError("duplicate alphabet symbol '" + symbols_[k] + "'");
  }
}

LabelAlphabet LabelAlphabet::from_chars(std::string_view chars) {
  return LabelAlphabet(utf8_code_points(chars));
}

LabelAlphabet LabelAlphabet::from_transcripts(std::span<const std::string> texts) {
  std::set<std::string> seen;
  for (const auto& t : texts)
    for (auto& cp : utf8_code_points(t)) seen.insert(std::move(cp));
  return LabelAlphabet(std::vector<std::string>(seen.begin(), seen.end()));
}

const std::string& LabelAlphabet::symbol(int label) const {
  if (label < 1 || static_cast<std::size_t>(label) > symbols_.size())
    throw std::out_of_range("label " + std::to_string(label) + " is not a character");
  return symbols_[static_cast<std::size_t>(label) - 1];
}

std::optional<int> LabelAlphabet::index_of(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::vector<int>> LabelAlphabet::try_encode(std::string_view text) const {
  std::vector<int> labels;
  for (const auto& cp : utf8_code_points(text)) {
    auto idx = index_of(cp);
    if (!idx) return std::nullopt;
    labels.push_back(*idx);
  }
  return labels;
}

std::vector<int> LabelAlphabet::encode(std::string_view text) const {
  std::vector<int> labels;
  for (const auto& cp : utf8_code_points(text)) {
    auto idx = index_of(cp);
    if (!idx) throw DataError("symbol '" + cp + "' is not in the alphabet");
    labels.push_back(*idx);
  }
  return labels;
}

std::string LabelAlphabet::decode(std::span<const int> labels) const {
  std::string out;
  for (int l : labels) out += symbol(l);
  return out;
}

}  // namespace mdrnn
