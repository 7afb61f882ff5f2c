#pragma once

// Random tiny decoding instances with an exhaustive-search answer.

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "mdrnn/decoder.hpp"
#include "mdrnn/lm.hpp"
#include "oracles.hpp"

namespace decode_fixture {

using namespace mdrnn;

inline const double kNegInf = -std::numeric_limits<double>::infinity();

inline NGramModel parse_arpa(const std::string& text) {
  std::istringstream in(text);
  return NGramModel::read_arpa(in);
}

/// Unigram ARPA text over `words`, optionally with sentence markers.
inline std::string unigram_arpa(const std::vector<std::string>& words, const std::vector<double>& log10p,
                         std::optional<double> eos_log10) {
  std::ostringstream out;
  out.precision(17);
  out << "\\data\\\nngram 1=" << words.size() + (eos_log10 ? 2 : 0) << "\n\n\\1-grams:\n";
  if (eos_log10) out << "-99\t<s>\n" << *eos_log10 << "\t</s>\n";
  for (std::size_t i = 0; i < words.size(); ++i) out << log10p[i] << "\t" << words[i] << "\n";
  out << "\n\\end\\\n";
  return out.str();
}

struct Instance {
  LabelAlphabet alphabet = LabelAlphabet::from_chars("ab ");
  std::vector<std::string> words;
  std::vector<double> log10p;
  std::optional<double> eos_log10;
  std::size_t T = 0;
  Tensor scores;
  double omega = 1.0;
  double wip = 1.0;

  std::size_t K() const { return alphabet.size(); }
};

// Log10 probabilities are multiples of 1/64 so the ARPA text is exact.
inline double dyadic(Rng& rng, double lo, double hi) {
  return std::round((lo + (hi - lo) * rng.uniform()) * 64.0) / 64.0;
}

inline Instance random_instance(Rng& rng, std::size_t max_T) {
  static const std::vector<std::string> pool{"a", "b", "ab", "ba", "aa", "bb", "aab", "abb", "bab"};
  Instance in;
  const std::size_t first = rng.below(pool.size());
  std::size_t second = rng.below(pool.size() - 1);
  if (second >= first) ++second;
  in.words = {pool[first], pool[second]};
  in.log10p = {dyadic(rng, -1.5, -0.1), dyadic(rng, -1.5, -0.1)};
  if (rng.bernoulli(0.5)) in.eos_log10 = dyadic(rng, -1.0, -0.1);
  in.T = 2 + rng.below(max_T - 1);
  in.scores = Tensor({in.T, in.K()});
  for (double& v : in.scores.values()) v = -4.0 * rng.uniform();
  in.omega = 0.5 + 1.5 * rng.uniform();
  in.wip = std::exp(2.0 * rng.uniform() - 1.0);
  return in;
}

inline oracle::DecodeOracle solve(const Instance& in) {
  std::vector<std::vector<int>> spell;
  std::vector<double> lp;
  for (std::size_t i = 0; i < in.words.size(); ++i) {
    spell.push_back(in.alphabet.encode(in.words[i]));
    lp.push_back(in.log10p[i] * std::log(10.0));
  }
  const double eos = in.eos_log10 ? *in.eos_log10 * std::log(10.0) : 0.0;
  const auto s = in.scores.values();
  return oracle::exhaustive_decode(std::vector<double>(s.begin(), s.end()), in.T, in.K(), spell,
                                   *in.alphabet.space(), lp, eos, in.omega, std::log(in.wip));
}

struct Setup {
  Lexicon lexicon;
  NGramModel lm;
  Decoder decoder;

  explicit Setup(const Instance& in)
      : lexicon(in.words, in.alphabet),
        lm(parse_arpa(unigram_arpa(in.words, in.log10p, in.eos_log10))),
        decoder(lexicon, lm, in.alphabet) {}
};

inline double score_or_neg_inf(const Decoder& d, const Tensor& s, DecodeParams p) {
  try {
    return d.decode(s, p).total;
  } catch (const SearchError&) {
    return kNegInf;
  }
}

}  // namespace decode_fixture
