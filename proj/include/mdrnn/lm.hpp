#pragma once

// Back-off n-gram word language model (ARPA format), scores in natural log.

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mdrnn {

class NGramModel {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";

  NGramModel() = default;

  /// Throws DataError on malformed files.
  static NGramModel read_arpa(std::istream& in, const std::string& where = "ARPA input");
  static NGramModel read_arpa(const std::filesystem::path& path);

  /// Every word equally likely, no sentence markers.
  static NGramModel uniform(std::span<const std::string> vocabulary);

  /// Fixture-grade estimator: add-one unigrams and, for order 2, absolutely
  /// discounted bigrams (D = 0.5) backing off to the unigrams. Sentences are
  /// wrapped in <s> ... </s>.
  static NGramModel estimate(const std::vector<std::vector<std::string>>& sentences,
                             std::size_t order);

  std::string to_arpa() const;

  std::size_t order() const { return order_; }
  const std::vector<std::string>& vocabulary() const { return words_; }
  std::optional<int> id(const std::string& word) const;
  bool has_bos() const { return bos_ >= 0; }
  bool has_eos() const { return eos_ >= 0; }
  int bos() const { return bos_; }
  int eos() const { return eos_; }

  /// ln p(word | context) with recursive back-off; `context` lists earlier
  /// words oldest first and may be longer than order - 1. Unknown words
  /// score -inf.
  double log_prob(std::span<const int> context, int word) const;

  /// Keeps the last order - 1 words.
  std::vector<int> truncate(std::vector<int> context) const;

 private:
  struct Entry {
    double log_prob = 0.0;
    double backoff = 0.0;
  };
  int intern(const std::string& w);

  std::size_t order_ = 0;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  std::map<std::vector<int>, Entry> grams_;
  int bos_ = -1;
  int eos_ = -1;
};

}  // namespace mdrnn
