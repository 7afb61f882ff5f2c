#pragma once

// Lexicon- and language-model-constrained decoding of CTC posteriors.
//
// Each label (characters, whitespace, blank) is a one-state HMM with
// self-loop and exit probability 0.5. Emissions are pseudo-likelihoods
// log p(s|x) - kappa log p(s). A line is a sequence of lexicon words with
// an optional single whitespace between consecutive words; blanks are
// optional between labels and required between two equal labels. The search
// maximizes
//
//   omega * (emissions + transitions) + ln p(W) + |W| ln WIP
//
// by token passing over (lexicon trie state x LM context) with histogram
// pruning.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdrnn/alphabet.hpp"
#include "mdrnn/feature_grid.hpp"
#include "mdrnn/lm.hpp"

namespace mdrnn {

/// No hypothesis reached a complete word sequence.
class SearchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Priors

struct Priors {
  std::vector<double> p;  // per class, index 0 = blank

  /// Character and whitespace priors proportional to target counts, blank
  /// fixed to blank_share; floored at `floor` and renormalized.
  static Priors estimate(std::span<const std::vector<int>> targets, std::size_t classes,
                         double blank_share = 0.5, double floor = 1e-6);
  static Priors uniform(std::size_t classes);
};

void to_json(nlohmann::json& j, const Priors& p);
void from_json(const nlohmann::json& j, Priors& p);

/// T x K grid of log p(s|x_t) - kappa log p(s). Throws on kappa < 0.
Tensor pseudo_likelihood(const FeatureGrid& posteriors, const Priors& priors, double kappa);

// ---------------------------------------------------------------------------
// Lexicon

class Lexicon {
 public:
  struct Word {
    std::string text;
    std::vector<int> labels;
  };

  Lexicon() = default;
  /// Throws ConfigError if a word is empty, contains the whitespace label or
  /// uses characters outside the alphabet.
  Lexicon(std::vector<std::string> words, const LabelAlphabet& alphabet);
  /// "word TAB spelling" per line. The spelling lists the word's characters,
  /// either as one string or separated by single spaces.
  static Lexicon read(const std::filesystem::path& path, const LabelAlphabet& alphabet);

  const std::vector<Word>& words() const { return words_; }
  bool contains(const std::string& word) const;

  struct Node {
    int label = 0;  // label entering this node (unused at the root)
    std::vector<std::pair<int, int>> children;  // (label, node), sorted by label
    std::vector<int> ends;                      // words spelled by the path to this node
  };
  const std::vector<Node>& trie() const { return nodes_; }

 private:
  void insert(int word);

  std::vector<Word> words_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Search

struct DecodeParams {
  double omega = 1.0;   // optical scale
  double wip = 1.0;     // word insertion penalty (multiplicative, > 0)
  double kappa = 0.0;   // prior scale
  std::optional<std::size_t> beam;  // histogram pruning; unset = unbounded

  void validate() const;
};

void to_json(nlohmann::json& j, const DecodeParams& p);
void from_json(const nlohmann::json& j, DecodeParams& p);

struct DecodeResult {
  std::vector<int> words;  // lexicon indices
  std::string text;        // words joined by single spaces
  double total = 0.0;
  double optical = 0.0;    // unscaled emissions + transitions
  double lm = 0.0;
  std::size_t word_count = 0;
};

class Decoder {
 public:
  /// Throws ConfigError if a lexicon word is missing from the LM vocabulary.
  Decoder(const Lexicon& lexicon, const NGramModel& lm, const LabelAlphabet& alphabet);

  /// `scores` is T x K pseudo-likelihood (already prior-scaled). Tokens are
  /// ranked for pruning by their score plus the best completion over the
  /// remaining frames, computed backwards with unigram LM scores; that
  /// completion is exact for unigram models, so their search keeps the
  /// optimum at any beam.
  DecodeResult decode(const Tensor& scores, const DecodeParams& params) const;
  DecodeResult decode(const FeatureGrid& posteriors, const Priors& priors,
                      const DecodeParams& params) const;

  const Lexicon& lexicon() const { return lexicon_; }
  const NGramModel& lm() const { return lm_; }
  /// LM id for each lexicon word.
  const std::vector<int>& lm_ids() const { return lm_ids_; }
  std::optional<int> space() const { return space_; }

 private:
  Lexicon lexicon_;
  NGramModel lm_;
  std::vector<int> lm_ids_;
  std::optional<int> space_;
  std::vector<double> word_lookahead_;  // unigram ln p(w) + ln WIP is added per decode
};

/// Word sequence score ln p(W) under `lm`, including sentence markers when
/// the model has them.
double sentence_log_prob(const NGramModel& lm, std::span<const int> lm_words);

// ---------------------------------------------------------------------------
// Tuning

struct TuneSample {
  FeatureGrid posteriors;
  std::string reference;
};

struct TuneGrid {
  std::vector<double> omegas{1.0};
  std::vector<double> wips{1.0};
  std::vector<double> kappas{0.0};
};

struct TunePoint {
  DecodeParams params;
  double wer = 0.0;
  double cer = 0.0;
  std::size_t failures = 0;  // lines without a complete hypothesis (scored as empty)
};

struct TuneResult {
  TunePoint best;
  std::vector<TunePoint> points;  // grid order
};

/// Index of the lowest-WER point; ties go to lower CER, then smaller omega,
/// then the earlier point. Throws ConfigError on an empty list.
std::size_t best_tune_point(std::span<const TunePoint> points);

/// Grid search minimizing line WER; ties go to lower CER, then smaller omega,
/// then earlier grid order.
TuneResult tune(const Decoder& decoder, const std::vector<TuneSample>& samples,
                const Priors& priors, const TuneGrid& grid, std::optional<std::size_t> beam);

}  // namespace mdrnn
