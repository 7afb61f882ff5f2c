#include "mdrnn/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "mdrnn/ctc.hpp"
#include "mdrnn/errors.hpp"
#include "mdrnn/metrics.hpp"

namespace mdrnn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v, int precision = 4) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string units_label(const ArchitectureSpec& spec) {
  std::string s;
  for (std::size_t u : spec.lstm_units()) s += (s.empty() ? "" : ",") + std::to_string(u);
  return s;
}

// Pads every column of a table to its widest cell.
std::string align(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      line += r[c];
      if (c + 1 < r.size()) line += std::string(width[c] - r[c].size() + 2, ' ');
    }
    out += line + "\n";
  }
  return out;
}

std::string tsv(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) out += (c ? "\t" : "") + r[c];
    out += "\n";
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be a finite value >= 0 (got " + fmt(learning_rate) + ")");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
  if (!(divergence_factor > 1.0)) throw ConfigError("divergence_factor must be > 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},   {"max_epochs", c.max_epochs},
       {"patience", c.patience},             {"seed", c.seed},
       {"eval_every", c.eval_every},         {"skip_infeasible", c.skip_infeasible},
       {"divergence_factor", c.divergence_factor}, {"record_wall_time", c.record_wall_time}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c = TrainConfig{};
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.skip_infeasible = j.value("skip_infeasible", c.skip_infeasible);
    c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
    c.record_wall_time = j.value("record_wall_time", c.record_wall_time);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
}

std::vector<LabeledSample> encode_samples(const std::vector<Sample>& samples,
                                          const LabelAlphabet& alphabet) {
  std::vector<LabeledSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto target = alphabet.try_encode(s.transcript);
    if (!target) throw DataError("sample " + s.id + ": transcript has characters outside the alphabet");
    out.push_back({s.id, s.image, s.transcript, std::move(*target)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Log

std::string ConvergenceLog::to_tsv() const {
  std::string out = "epoch\ttrain_nll\tvalid_nll\tvalid_cer\tseconds\n";
  for (const auto& r : records)
    out += std::to_string(r.epoch) + "\t" + fmt(r.train_nll) + "\t" + fmt(r.valid_nll) + "\t" +
           fmt(r.valid_cer) + "\t" + fmt(r.seconds) + "\n";
  return out;
}

void ConvergenceLog::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_tsv();
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const Network& net, const std::vector<LabeledSample>& samples,
                    const LabelAlphabet& alphabet) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  const std::size_t n = samples.size();
  std::vector<double> nll(n, 0.0);
  std::vector<std::string> hyp(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      Rng unused(0);
      ForwardCache cache;
      const FeatureGrid post = net.forward(samples[i].image, {Mode::Testing, MaskSource::Sample},
                                           unused, &cache);
      nll[i] = ctc_nll_from_logits(cache.logits, samples[i].target).loss;
      hyp[i] = alphabet.decode(best_path_decode(post));
    } catch (const std::exception& e) {
      errors[i] = samples[i].id + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError("evaluation failed for sample " + e);

  EvalResult r;
  Scorer scorer(WerMode::Line);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += nll[i];
    scorer.add(hyp[i], samples[i].transcript);
  }
  r.count = n;
  r.nll = total / static_cast<double>(n);
  r.cer = scorer.chars().reference ? scorer.cer() : 0.0;
  r.wer = scorer.words().reference ? scorer.wer() : 0.0;
  r.hypotheses = std::move(hyp);
  return r;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(Network net, const std::vector<LabeledSample>& train_set,
                  const std::vector<LabeledSample>& valid_set, const LabelAlphabet& alphabet,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (valid_set.empty()) throw DataError("validation set is empty");
  if (alphabet.size() != net.classes())
    throw DataError("alphabet has " + std::to_string(alphabet.size()) +
                    " classes but the network outputs " + std::to_string(net.classes()));

  TrainResult result;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const auto& s = train_set[i];
    const std::size_t frames = net.spec().output_frames(s.image.width());
    const std::size_t need = ctc_min_frames(s.target);
    if (frames >= need) {
      usable.push_back(i);
      continue;
    }
    if (!cfg.skip_infeasible)
      throw DataError("sample " + s.id + ": transcript needs " + std::to_string(need) +
                      " frames but the image yields " + std::to_string(frames) +
                      " (enable skip_infeasible to drop such samples)");
    ++result.skipped;
  }
  for (const auto& s : valid_set)
    if (net.spec().output_frames(s.image.width()) < ctc_min_frames(s.target))
      throw DataError("validation sample " + s.id + " is too narrow for its transcript");
  if (usable.empty()) throw DataError("no trainable samples remain");

  const Rng base(cfg.seed);
  Rng shuffle = base.stream("shuffle");
  Rng masks = base.stream("dropout");
  const ForwardOptions train_mode{Mode::Training, MaskSource::Sample};

  double first_epoch_loss = kNaN;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  result.best = net;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = usable;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const auto& s = train_set[idx];
      ForwardCache cache;
      net.forward(s.image, train_mode, masks, &cache);
      const CtcResult ctc = ctc_nll_from_logits(cache.logits, s.target);
      if (!std::isfinite(ctc.loss))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + s.id);
      loss_sum += ctc.loss;
      net.zero_grad();
      net.backward_from_logits(cache, ctc.grad);
      net.sgd_step(cfg.learning_rate);
      ++result.updates;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = loss_sum / static_cast<double>(order.size());
    if (epoch == 1) first_epoch_loss = rec.train_nll;
    if (!std::isfinite(rec.train_nll) || rec.train_nll > cfg.divergence_factor * first_epoch_loss)
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                            ": mean loss " + fmt(rec.train_nll) + " vs first epoch " +
                            fmt(first_epoch_loss));

    const bool evaluate_now = epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs;
    rec.valid_nll = kNaN;
    rec.valid_cer = kNaN;
    bool improved = false;
    if (evaluate_now) {
      const EvalResult ev = evaluate(net, valid_set, alphabet);
      rec.valid_nll = ev.nll;
      rec.valid_cer = ev.cer;
      if (ev.nll < best) {
        best = ev.nll;
        result.best = net;
        result.best_epoch = epoch;
        improved = true;
      }
    }
    since_best = improved ? 0 : since_best + 1;
    if (cfg.record_wall_time)
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (since_best >= cfg.patience) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  result.best_valid_nll = best;
  result.final = std::move(net);
  return result;
}

// ---------------------------------------------------------------------------
// Experiments

std::vector<ExperimentConfig> experiment_preset(const std::string& name,
                                                const ArchitectureSpec& base) {
  auto make = [&](DropoutPlacement p, bool doubled, bool keep_top) {
    ArchitectureSpec s = with_dropout(base, p, doubled);
    if (keep_top) s.top.lstm_units = base.top.lstm_units;
    return ExperimentConfig{to_string(p) + " " + units_label(s), s};
  };
  if (name == "fig3")
    return {make(DropoutPlacement::None, false, false),
            make(DropoutPlacement::Topmost, false, false)};
  if (name == "table3")
    return {make(DropoutPlacement::None, false, false),   make(DropoutPlacement::Topmost, false, false),
            make(DropoutPlacement::Topmost, true, false), make(DropoutPlacement::TopTwo, true, true),
            make(DropoutPlacement::TopTwo, true, false),  make(DropoutPlacement::All, true, false)};
  throw ConfigError("unknown experiment preset '" + name + "' (fig3, table3)");
}

std::vector<ExperimentRow> run_experiment_matrix(
    const std::vector<ExperimentConfig>& configs, const std::vector<LabeledSample>& train_set,
    const std::vector<LabeledSample>& valid_set, const LabelAlphabet& alphabet,
    const TrainConfig& cfg,
    const std::function<void(const std::string&, const EpochRecord&)>& on_epoch) {
  if (configs.empty()) throw ConfigError("experiment matrix is empty");
  std::vector<ExperimentRow> rows;
  for (const auto& c : configs) {
    Rng init = Rng(cfg.seed).stream("init");
    Network net = Network::build(c.spec, alphabet.size(), init);
    EpochCallback cb;
    if (on_epoch) cb = [&](const EpochRecord& r) { on_epoch(c.name, r); };
    TrainResult tr = train(std::move(net), train_set, valid_set, alphabet, cfg, cb);

    ExperimentRow row;
    row.config = c;
    row.parameters = tr.final.params().parameter_count();
    row.best_epoch = tr.best_epoch;
    row.best_valid_nll = tr.best_valid_nll;
    row.epochs = tr.log.records.size();
    for (const auto& r : tr.log.records)
      if (r.epoch == tr.best_epoch) row.best_valid_cer = r.valid_cer;
    row.final_train_nll = tr.log.records.back().train_nll;
    row.final_valid_nll = tr.log.records.back().valid_nll;
    row.best_norms = weight_norms(tr.best.params());
    row.final_norms = weight_norms(tr.final.params());
    row.log = std::move(tr.log);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::vector<std::vector<std::string>> experiment_cells(const std::vector<ExperimentRow>& rows,
                                                       bool exact) {
  auto num = [&](double v) { return exact ? fmt(v) : fmt_short(v); };
  std::vector<std::vector<std::string>> cells{
      {"config", "lstm_units", "dropout_layers", "parameters", "epochs", "best_epoch",
       "best_valid_nll", "best_valid_cer", "final_train_nll", "final_valid_nll", "lstm_l1",
       "lstm_l2", "class_l1", "class_l2"}};
  for (const auto& r : rows)
    cells.push_back({r.config.name, units_label(r.config.spec),
                     std::to_string(r.config.spec.dropout_layer_count()), std::to_string(r.parameters),
                     std::to_string(r.epochs), std::to_string(r.best_epoch), num(r.best_valid_nll),
                     num(r.best_valid_cer), num(r.final_train_nll), num(r.final_valid_nll),
                     num(r.best_norms.lstm.l1), num(r.best_norms.lstm.l2),
                     num(r.best_norms.classification.l1), num(r.best_norms.classification.l2)});
  return cells;
}

std::vector<std::vector<std::string>> norm_cells(const WeightNorms& n, bool exact) {
  auto num = [&](double v) { return exact ? fmt(v) : fmt_short(v, 6); };
  return {{"group", "norm", "value"},
          {"lstm", "L1", num(n.lstm.l1)},
          {"lstm", "L2", num(n.lstm.l2)},
          {"classification", "L1", num(n.classification.l1)},
          {"classification", "L2", num(n.classification.l2)}};
}

}  // namespace

std::string experiment_table_tsv(const std::vector<ExperimentRow>& rows) {
  return tsv(experiment_cells(rows, true));
}
std::string experiment_table_text(const std::vector<ExperimentRow>& rows) {
  return align(experiment_cells(rows, false));
}
std::string norms_table_tsv(const WeightNorms& n) { return tsv(norm_cells(n, true)); }
std::string norms_table_text(const WeightNorms& n) { return align(norm_cells(n, false)); }

}  // namespace mdrnn
