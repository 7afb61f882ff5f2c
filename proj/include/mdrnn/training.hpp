#pragma once

// Online SGD with early stopping on validation NLL, plus the dropout
// placement experiment matrix.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdrnn/alphabet.hpp"
#include "mdrnn/data.hpp"
#include "mdrnn/network.hpp"

namespace mdrnn {

/// Training aborted: non-finite loss, or an epoch's mean training loss above
/// divergence_factor times the first epoch's.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;
  bool skip_infeasible = false;
  double divergence_factor = 10.0;
  /// Wall-clock seconds in the log; off by default so logs are reproducible.
  bool record_wall_time = false;

  /// Throws ConfigError. A zero learning rate is legal.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LabeledSample {
  std::string id;
  FeatureGrid image;
  std::string transcript;
  std::vector<int> target;
};

/// Throws DataError on characters outside the alphabet.
std::vector<LabeledSample> encode_samples(const std::vector<Sample>& samples,
                                          const LabelAlphabet& alphabet);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double valid_nll = 0.0;  // NaN on epochs without validation
  double valid_cer = 0.0;
  double seconds = 0.0;
};

struct ConvergenceLog {
  std::vector<EpochRecord> records;

  /// Header "epoch train_nll valid_nll valid_cer seconds", tab-separated,
  /// values printed with 17 significant digits.
  std::string to_tsv() const;
  void write(const std::filesystem::path& path) const;
};

struct EvalResult {
  double nll = 0.0;  // mean per-sample CTC NLL
  double cer = 0.0;
  double wer = 0.0;
  std::size_t count = 0;
  std::vector<std::string> hypotheses;  // best-path decodes, in sample order
};

/// Testing-mode evaluation with best-path decoding. Samples are processed in
/// parallel; sums are formed in sample order.
EvalResult evaluate(const Network& net, const std::vector<LabeledSample>& samples,
                    const LabelAlphabet& alphabet);

struct TrainResult {
  Network best;
  Network final;
  ConvergenceLog log;
  std::size_t best_epoch = 0;
  double best_valid_nll = 0.0;
  std::size_t updates = 0;
  std::size_t skipped = 0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `net` in place and returns the best-on-validation and final
/// parameters. Shuffling and dropout masks draw from the named streams
/// "shuffle" and "dropout" of Rng(cfg.seed).
TrainResult train(Network net, const std::vector<LabeledSample>& train_set,
                  const std::vector<LabeledSample>& valid_set, const LabelAlphabet& alphabet,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Experiment matrix

struct ExperimentConfig {
  std::string name;
  ArchitectureSpec spec;
};

struct ExperimentRow {
  ExperimentConfig config;
  std::size_t parameters = 0;
  std::size_t best_epoch = 0;
  double best_valid_nll = 0.0;
  double best_valid_cer = 0.0;
  double final_train_nll = 0.0;
  double final_valid_nll = 0.0;
  std::size_t epochs = 0;
  WeightNorms best_norms;   // selected (best-on-validation) model
  WeightNorms final_norms;  // last epoch
  ConvergenceLog log;
};

/// Named presets built on `base`:
///   "fig3"   : no dropout vs topmost dropout, same units;
///   "table3" : 0, 1, 1, 2, 2, 3 dropout layers with the unit-doubling ladder.
std::vector<ExperimentConfig> experiment_preset(const std::string& name,
                                                const ArchitectureSpec& base);

/// Trains every configuration from the same initialization seed
/// (stream "init" of Rng(cfg.seed)).
std::vector<ExperimentRow> run_experiment_matrix(const std::vector<ExperimentConfig>& configs,
                                                 const std::vector<LabeledSample>& train_set,
                                                 const std::vector<LabeledSample>& valid_set,
                                                 const LabelAlphabet& alphabet,
                                                 const TrainConfig& cfg,
                                                 const std::function<void(const std::string&, const EpochRecord&)>& on_epoch = {});

std::string experiment_table_tsv(const std::vector<ExperimentRow>& rows);
std::string experiment_table_text(const std::vector<ExperimentRow>& rows);

/// Four-row norm table (LSTM L1/L2, classification L1/L2).
std::string norms_table_tsv(const WeightNorms& n);
std::string norms_table_text(const WeightNorms& n);

}  // namespace mdrnn
