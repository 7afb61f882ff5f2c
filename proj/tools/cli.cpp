#include "mdrnn/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdrnn/checkpoint.hpp"
#include "mdrnn/ctc.hpp"
#include "mdrnn/data.hpp"
#include "mdrnn/decoder.hpp"
#include "mdrnn/errors.hpp"
#include "mdrnn/lm.hpp"
#include "mdrnn/metrics.hpp"
#include "mdrnn/training.hpp"

namespace mdrnn {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed for " + path.string());
}

json read_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

/// Reads cfg[a][b]... or returns nullptr.
const json* find(const json& cfg, std::initializer_list<const char*> path) {
  const json* j = &cfg;
  for (const char* k : path) {
    if (!j->is_object() || !j->contains(k)) return nullptr;
    j = &(*j)[k];
  }
  return j->is_null() ? nullptr : j;
}

template <class T>
T get_or(const json& cfg, std::initializer_list<const char*> path, T fallback) {
  const json* j = find(cfg, path);
  if (!j) return fallback;
  try {
    return j->get<T>();
  } catch (const json::exception& e) {
    std::string where;
    for (const char* k : path) where += std::string(where.empty() ? "" : ".") + k;
    throw ConfigError("config key " + where + ": " + e.what());
  }
}

std::string require_string(const json& cfg, std::initializer_list<const char*> path, const char* flag) {
  const auto s = get_or<std::string>(cfg, path, "");
  if (s.empty()) throw ConfigError(std::string("missing ") + flag);
  return s;
}

fs::path prepare_out(const json& cfg) {
  const fs::path out = require_string(cfg, {"out"}, "--out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

void save_config(const fs::path& out, const json& cfg) { write_file(out / "config.json", cfg.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Synthetic font json

json font_to_json(const SyntheticFontSpec& f) {
  return {{"chars", f.chars},           {"height", f.height},
          {"min_length", f.min_length}, {"max_length", f.max_length},
          {"scale_jitter", f.scale_jitter}, {"max_shift", f.max_shift},
          {"min_gap", f.min_gap},       {"max_gap", f.max_gap},
          {"stroke_dropout", f.stroke_dropout}, {"noise", f.noise}};
}

SyntheticFontSpec font_from_json(const json& cfg) {
  SyntheticFontSpec f;
  f.chars = get_or(cfg, {"synth", "chars"}, f.chars);
  f.height = get_or(cfg, {"synth", "height"}, f.height);
  f.min_length = get_or(cfg, {"synth", "min_length"}, f.min_length);
  f.max_length = get_or(cfg, {"synth", "max_length"}, f.max_length);
  f.scale_jitter = get_or(cfg, {"synth", "scale_jitter"}, f.scale_jitter);
  f.max_shift = get_or(cfg, {"synth", "max_shift"}, f.max_shift);
  f.min_gap = get_or(cfg, {"synth", "min_gap"}, f.min_gap);
  f.max_gap = get_or(cfg, {"synth", "max_gap"}, f.max_gap);
  f.stroke_dropout = get_or(cfg, {"synth", "stroke_dropout"}, f.stroke_dropout);
  f.noise = get_or(cfg, {"synth", "noise"}, f.noise);
  return f;
}

// ---------------------------------------------------------------------------
// Shared pieces

std::vector<Sample> load_dir(const fs::path& dir, const LabelAlphabet& alphabet, std::ostream& err) {
  LoadReport report;
  auto samples = load_dataset(dir, dir / "transcripts.txt", alphabet, &report);
  for (const auto& m : report.messages) err << "warning: " << m << "\n";
  if (report.rejected > 0)
    err << "warning: " << dir.string() << ": rejected " << report.rejected
        << " samples with characters outside the alphabet\n";
  return samples;
}

std::string alphabet_string(const LabelAlphabet& a) {
  std::string s;
  for (const auto& sym : a.symbols()) s += sym;
  return s;
}

LabelAlphabet resolve_alphabet(json& cfg, const fs::path& train_dir) {
  if (const json* a = find(cfg, {"data", "alphabet"})) {
    if (!a->is_string()) throw ConfigError("data.alphabet must be a string");
    return LabelAlphabet::from_chars(a->get<std::string>());
  }
  std::vector<std::string> texts;
  for (const auto& t : read_transcripts(train_dir / "transcripts.txt")) texts.push_back(t.text);
  if (texts.empty()) throw DataError("training transcripts are empty");
  LabelAlphabet a = LabelAlphabet::from_transcripts(texts);
  cfg["data"]["alphabet"] = alphabet_string(a);
  return a;
}

ArchitectureSpec resolve_architecture(json& cfg) {
  ArchitectureSpec spec = ArchitectureSpec::baseline();
  if (const json* a = find(cfg, {"architecture"})) spec = a->get<ArchitectureSpec>();
  if (const json* p = find(cfg, {"overrides", "dropout"})) {
    const bool dbl = get_or(cfg, {"overrides", "double_units"}, false);
    spec = with_dropout(spec, parse_dropout_placement(p->get<std::string>()), dbl);
  }
  if (const json* s = find(cfg, {"overrides", "init_std"})) spec.init_std = s->get<double>();
  cfg.erase("overrides");
  spec.validate();
  cfg["architecture"] = spec;
  return spec;
}

TrainConfig resolve_training(json& cfg, std::ostream& err) {
  TrainConfig tc;
  if (const json* t = find(cfg, {"training"})) tc = t->get<TrainConfig>();
  tc.seed = get_or<std::uint64_t>(cfg, {"seed"}, tc.seed);
  tc.validate();
  if (tc.learning_rate == 0.0) err << "warning: learning_rate is 0; parameters will not change\n";
  cfg["seed"] = tc.seed;
  cfg["training"] = tc;
  return tc;
}

/// Posteriors with optional reference transcripts.
struct PosteriorSet {
  LabelAlphabet alphabet;
  std::vector<std::string> ids;
  std::vector<FeatureGrid> posteriors;
  std::vector<std::optional<std::string>> references;
};

PosteriorSet read_posteriors(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open posteriors " + path.string());
  PosteriorSet set;
  std::string line;
  std::size_t number = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(number) + ": ";
    try {
      const json j = json::parse(line);
      if (!header) {
        set.alphabet = LabelAlphabet(j.at("alphabet").get<std::vector<std::string>>());
        header = true;
        continue;
      }
      const auto rows = j.at("posteriors").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw DataError(where + "no frames");
      FeatureGrid g(1, rows.size(), set.alphabet.size());
      for (std::size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].size() != set.alphabet.size())
          throw DataError(where + "frame has " + std::to_string(rows[t].size()) + " classes, alphabet needs " +
                          std::to_string(set.alphabet.size()));
        for (std::size_t k = 0; k < rows[t].size(); ++k) {
          if (!(rows[t][k] >= 0.0 && rows[t][k] <= 1.0)) throw DataError(where + "posterior outside [0, 1]");
          g.at(0, t, k) = rows[t][k];
        }
      }
      set.ids.push_back(j.at("id").get<std::string>());
      set.posteriors.push_back(std::move(g));
      set.references.push_back(j.contains("transcript") ? std::optional(j["transcript"].get<std::string>())
                                                        : std::nullopt);
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    } catch (const ConfigError& e) {
      throw DataError(where + e.what());
    }
  }
  if (!header) throw DataError(path.string() + ": missing alphabet header line");
  return set;
}

std::string posteriors_jsonl(const PosteriorSet& set) {
  std::string out = json{{"alphabet", set.alphabet.symbols()}}.dump() + "\n";
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    const auto& g = set.posteriors[i];
    std::vector<std::vector<double>> rows(g.width(), std::vector<double>(g.depth()));
    for (std::size_t t = 0; t < g.width(); ++t)
      for (std::size_t k = 0; k < g.depth(); ++k) rows[t][k] = g.at(0, t, k);
    json j{{"id", set.ids[i]}, {"posteriors", rows}};
    if (set.references[i]) j["transcript"] = *set.references[i];
    out += j.dump() + "\n";
  }
  return out;
}

/// Posteriors from --posteriors, or from --checkpoint run over --data.
PosteriorSet acquire_posteriors(json& cfg, const char* section, std::ostream& err) {
  if (const json* p = find(cfg, {section, "posteriors"})) {
    PosteriorSet set = read_posteriors(p->get<std::string>());
    if (const json* d = find(cfg, {section, "data"})) {
      std::map<std::string, std::string> refs;
      for (const auto& t : read_transcripts(fs::path(d->get<std::string>()) / "transcripts.txt"))
        refs[fs::path(t.file).stem().string()] = t.text;
      for (std::size_t i = 0; i < set.ids.size(); ++i)
        if (auto it = refs.find(set.ids[i]); it != refs.end()) set.references[i] = it->second;
    }
    return set;
  }
  const std::string ckpt = require_string(cfg, {section, "checkpoint"}, "--checkpoint or --posteriors");
  const fs::path data = require_string(cfg, {section, "data"}, "--data");
  Checkpoint ck = load_checkpoint(ckpt);
  const auto samples = load_dir(data, ck.alphabet, err);
  if (samples.empty()) throw DataError(data.string() + ": no usable samples for the checkpoint's alphabet");
  PosteriorSet set;
  set.alphabet = ck.alphabet;
  set.ids.resize(samples.size());
  set.posteriors.resize(samples.size());
  set.references.resize(samples.size());
  std::vector<std::string> failures(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      Rng unused(0);
      set.posteriors[i] = ck.network.forward(samples[i].image, ForwardOptions{}, unused);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
    set.ids[i] = samples[i].id;
    set.references[i] = samples[i].transcript;
  }
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!failures[i].empty()) throw DataError("sample " + samples[i].id + ": " + failures[i]);
  return set;
}

struct DecodeSetup {
  Lexicon lexicon;
  NGramModel lm;
  Priors priors;
  DecodeParams params;
  TuneGrid grid;
  bool has_grid = false;
};

std::optional<DecodeSetup> resolve_decode(json& cfg, const LabelAlphabet& alphabet) {
  const json* lex = find(cfg, {"decode", "lexicon"});
  if (!lex) return std::nullopt;
  DecodeSetup d;
  d.lexicon = Lexicon::read(lex->get<std::string>(), alphabet);
  if (const json* lm = find(cfg, {"decode", "lm"})) {
    d.lm = NGramModel::read_arpa(fs::path(lm->get<std::string>()));
  } else {
    std::vector<std::string> vocab;
    for (const auto& w : d.lexicon.words()) vocab.push_back(w.text);
    d.lm = NGramModel::uniform(vocab);
  }
  json params = find(cfg, {"decode"}) ? cfg["decode"] : json::object();
  d.params = params.get<DecodeParams>();
  d.params.validate();
  if (const json* p = find(cfg, {"decode", "priors"})) {
    std::ifstream f(p->get<std::string>());
    if (!f) throw DataError("cannot open priors " + p->get<std::string>());
    try {
      d.priors = json::parse(f).get<Priors>();
    } catch (const json::exception& e) {
      throw DataError(std::string("priors: ") + e.what());
    }
    if (d.priors.p.size() != alphabet.size()) throw DataError("priors do not match the alphabet size");
  } else {
    d.priors = Priors::uniform(alphabet.size());
  }
  if (const json* t = find(cfg, {"decode", "tune"})) {
    d.has_grid = true;
    d.grid.omegas = get_or(*t, {"omegas"}, d.grid.omegas);
    d.grid.wips = get_or(*t, {"wips"}, d.grid.wips);
    d.grid.kappas = get_or(*t, {"kappas"}, d.grid.kappas);
  }
  cfg["decode"]["omega"] = d.params.omega;
  cfg["decode"]["wip"] = d.params.wip;
  cfg["decode"]["kappa"] = d.params.kappa;
  cfg["decode"]["beam"] = d.params.beam ? json(*d.params.beam) : json(nullptr);
  return d;
}

struct ReportRow {
  std::string mode;
  Scorer scorer;
};

std::string report_tsv(const std::vector<ReportRow>& rows) {
  std::string s = "mode\tlines\tcer\twer\tchar_errors\tchars\tword_errors\twords\n";
  for (const auto& r : rows) {
    const auto& c = r.scorer.chars();
    const auto& w = r.scorer.words();
    s += r.mode + "\t" + std::to_string(r.scorer.lines()) + "\t" + num(r.scorer.cer()) + "\t" +
         num(r.scorer.wer()) + "\t" + std::to_string(c.errors) + "\t" + std::to_string(c.reference) + "\t" +
         std::to_string(w.errors) + "\t" + std::to_string(w.reference) + "\n";
  }
  return s;
}

std::string report_text(const std::vector<ReportRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(14) << "mode" << std::right << std::setw(8) << "lines" << std::setw(10) << "CER %"
    << std::setw(10) << "WER %" << "\n";
  for (const auto& r : rows)
    s << std::left << std::setw(14) << r.mode << std::right << std::setw(8) << r.scorer.lines() << std::fixed
      << std::setprecision(2) << std::setw(10) << 100.0 * r.scorer.cer() << std::setw(10)
      << 100.0 * r.scorer.wer() << "\n";
  return s.str();
}

std::string decode_line(const std::string& id, const DecodeResult& r, double omega) {
  return id + "\t" + r.text + "\t" + num(r.total) + " " + num(omega * r.optical) + " " + num(r.lm) + " " +
         std::to_string(r.word_count) + "\n";
}

std::optional<DecodeResult> try_decode(const Decoder& dec, const FeatureGrid& post, const DecodeSetup& d,
                                       const DecodeParams& params) {
  try {
    return dec.decode(post, d.priors, params);
  } catch (const SearchError&) {
    return std::nullopt;
  }
}

/// Constrained decodes of every line, in parallel; failures stay empty.
std::vector<std::optional<DecodeResult>> decode_all(const Decoder& dec, const PosteriorSet& set,
                                                    const DecodeSetup& d, const DecodeParams& params) {
  std::vector<std::optional<DecodeResult>> out(set.posteriors.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = try_decode(dec, set.posteriors[i], d, params);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(json& cfg, std::ostream& out, std::ostream&) {
  const fs::path dir = prepare_out(cfg);
  const SyntheticFontSpec font = font_from_json(cfg);
  const auto seed = get_or<std::uint64_t>(cfg, {"seed"}, 1);
  const Rng base(seed);
  cfg["seed"] = seed;
  json synth = font_to_json(font);
  std::map<std::string, std::string> prefixes{{"train", "tr"}, {"valid", "va"}, {"test", "te"}};
  std::map<std::string, std::size_t> defaults{{"train", 800}, {"valid", 200}, {"test", 0}};
  for (const auto& name : {"train", "valid", "test"}) {
    const auto n = get_or<std::size_t>(cfg, {"synth", name}, defaults[name]);
    synth[name] = n;
    if (n == 0) continue;
    const auto samples = generate_synthetic(n, font, base.stream(name), prefixes[name]);
    write_dataset(dir / name, samples);
    out << name << ": " << n << " lines in " << (dir / name).string() << "\n";
  }
  cfg["synth"] = synth;
  save_config(dir, cfg);
  return kExitOk;
}

int cmd_train(json& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_out(cfg);
  const fs::path train_dir = require_string(cfg, {"data", "train"}, "--train");
  const fs::path valid_dir = require_string(cfg, {"data", "valid"}, "--valid");
  const LabelAlphabet alphabet = resolve_alphabet(cfg, train_dir);
  const ArchitectureSpec spec = resolve_architecture(cfg);
  const TrainConfig tc = resolve_training(cfg, err);
  save_config(dir, cfg);

  const auto tr = encode_samples(load_dir(train_dir, alphabet, err), alphabet);
  const auto va = encode_samples(load_dir(valid_dir, alphabet, err), alphabet);
  if (tr.empty()) throw DataError("training set is empty");
  if (va.empty()) throw DataError("validation set is empty");

  Rng init = Rng(tc.seed).stream("init");
  const Network net = Network::build(spec, alphabet.size(), init);
  err << "training " << net.params().parameter_count() << " parameters on " << tr.size() << " lines\n";
  const auto result = train(net, tr, va, alphabet, tc, [&](const EpochRecord& r) {
    err << "epoch " << r.epoch << "  train " << num(r.train_nll) << "  valid " << num(r.valid_nll) << "  cer "
        << num(r.valid_cer) << "\n";
  });

  if (result.skipped > 0) err << "warning: skipped " << result.skipped << " infeasible training lines\n";
  std::vector<std::vector<int>> targets;
  for (const auto& s : tr) targets.push_back(s.target);
  write_file(dir / "priors.json", json(Priors::estimate(targets, alphabet.size())).dump(2) + "\n");
  const json meta_config{{"seed", cfg["seed"]}, {"architecture", cfg["architecture"]},
                         {"training", cfg["training"]}};
  save_checkpoint(dir / "best.ckpt", result.best, alphabet,
                  {{"epoch", result.best_epoch}, {"kind", "best"}, {"config", meta_config}});
  save_checkpoint(dir / "final.ckpt", result.final, alphabet,
                  {{"epoch", result.log.records.size()}, {"kind", "final"}, {"config", meta_config}});
  result.log.write(dir / "convergence.tsv");
  out << "best epoch " << result.best_epoch << ", valid NLL " << num(result.best_valid_nll) << ", "
      << result.updates << " updates" << (result.stopped_early ? ", stopped early" : "") << "\n";
  return kExitOk;
}

int cmd_eval(json& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_out(cfg);
  const PosteriorSet set = acquire_posteriors(cfg, "eval", err);
  const auto decode = resolve_decode(cfg, set.alphabet);
  const bool isolated = get_or(cfg, {"eval", "isolated"}, false);
  cfg["eval"]["isolated"] = isolated;
  save_config(dir, cfg);
  const WerMode mode = isolated ? WerMode::Isolated : WerMode::Line;

  std::vector<std::string> best(set.ids.size());
  for (std::size_t i = 0; i < best.size(); ++i)
    best[i] = set.alphabet.decode(best_path_decode(set.posteriors[i]));
  std::vector<std::string> constrained;
  if (decode) {
    const Decoder dec(decode->lexicon, decode->lm, set.alphabet);
    const auto results = decode_all(dec, set, *decode, decode->params);
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (!results[i]) err << "warning: " << set.ids[i] << ": no complete hypothesis\n";
      constrained.push_back(results[i] ? results[i]->text : "");
    }
  }

  std::vector<ReportRow> rows{{"best-path", Scorer(mode)}};
  if (decode) rows.push_back({"constrained", Scorer(mode)});
  std::string hyps = "id\treference\tbest_path" + std::string(decode ? "\tconstrained" : "") + "\n";
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    if (!set.references[i]) throw DataError(set.ids[i] + ": no reference transcript");
    rows[0].scorer.add(best[i], *set.references[i]);
    if (decode) rows[1].scorer.add(constrained[i], *set.references[i]);
    hyps += set.ids[i] + "\t" + *set.references[i] + "\t" + best[i] + (decode ? "\t" + constrained[i] : "") + "\n";
  }
  if (set.ids.empty()) throw DataError("nothing to evaluate");
  write_file(dir / "report.tsv", report_tsv(rows));
  write_file(dir / "report.txt", report_text(rows));
  write_file(dir / "hypotheses.tsv", hyps);
  if (get_or(cfg, {"eval", "save_posteriors"}, false)) write_file(dir / "posteriors.jsonl", posteriors_jsonl(set));
  out << report_text(rows);
  return kExitOk;
}

int cmd_decode(json& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_out(cfg);
  const PosteriorSet set = acquire_posteriors(cfg, "eval", err);
  auto decode = resolve_decode(cfg, set.alphabet);
  if (!decode) throw ConfigError("missing --lexicon");
  const Decoder dec(decode->lexicon, decode->lm, set.alphabet);

  if (decode->has_grid) {
    std::vector<TuneSample> samples;
    for (std::size_t i = 0; i < set.ids.size(); ++i) {
      if (!set.references[i]) throw DataError(set.ids[i] + ": tuning needs reference transcripts");
      samples.push_back({set.posteriors[i], *set.references[i]});
    }
    const TuneResult tuned = tune(dec, samples, decode->priors, decode->grid, decode->params.beam);
    std::string tsv = "omega\twip\tkappa\twer\tcer\tfailures\n";
    for (const auto& p : tuned.points)
      tsv += num(p.params.omega) + "\t" + num(p.params.wip) + "\t" + num(p.params.kappa) + "\t" + num(p.wer) +
             "\t" + num(p.cer) + "\t" + std::to_string(p.failures) + "\n";
    write_file(dir / "tune.tsv", tsv);
    decode->params = tuned.best.params;
    cfg["decode"]["tuned"] = decode->params;
    err << "tuned: omega " << num(decode->params.omega) << " wip " << num(decode->params.wip) << " kappa "
        << num(decode->params.kappa) << " (WER " << num(tuned.best.wer) << ")\n";
  }
  save_config(dir, cfg);

  const auto results = decode_all(dec, set, *decode, decode->params);
  std::string lines;
  Scorer scorer(WerMode::Line);
  bool scored = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i]) {
      lines += decode_line(set.ids[i], *results[i], decode->params.omega);
    } else {
      err << "warning: " << set.ids[i] << ": no complete hypothesis\n";
      lines += set.ids[i] + "\t\t-inf -inf -inf 0\n";
    }
    if (set.references[i])
      scorer.add(results[i] ? results[i]->text : "", *set.references[i]);
    else
      scored = false;
  }
  write_file(dir / "decode.tsv", lines);
  out << lines;
  if (scored && scorer.lines() > 0) {
    const std::vector<ReportRow> rows{{"constrained", scorer}};
    write_file(dir / "report.tsv", report_tsv(rows));
    write_file(dir / "report.txt", report_text(rows));
  }
  return kExitOk;
}

std::string slug(std::size_t index, const std::string& name) {
  std::string s = std::to_string(index) + "-";
  for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return s;
}

int cmd_experiment(json& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_out(cfg);
  const fs::path train_dir = require_string(cfg, {"data", "train"}, "--train");
  const fs::path valid_dir = require_string(cfg, {"data", "valid"}, "--valid");
  const LabelAlphabet alphabet = resolve_alphabet(cfg, train_dir);
  const ArchitectureSpec base = resolve_architecture(cfg);
  const TrainConfig tc = resolve_training(cfg, err);

  std::vector<ExperimentConfig> configs;
  if (const json* list = find(cfg, {"experiment", "configs"})) {
    if (!list->is_array()) throw ConfigError("experiment.configs must be a list");
    for (const auto& c : *list) {
      ExperimentConfig e;
      e.name = get_or<std::string>(c, {"name"}, "run" + std::to_string(configs.size()));
      e.spec = c.contains("architecture") ? c["architecture"].get<ArchitectureSpec>() : base;
      e.spec.validate();
      configs.push_back(std::move(e));
    }
  } else {
    const auto preset = get_or<std::string>(cfg, {"experiment", "preset"}, "");
    if (preset.empty()) throw ConfigError("missing --preset or experiment.configs");
    configs = experiment_preset(preset, base);
  }
  if (configs.empty()) throw ConfigError("experiment matrix is empty");
  json resolved = json::array();
  for (const auto& c : configs) resolved.push_back({{"name", c.name}, {"architecture", c.spec}});
  cfg["experiment"]["configs"] = resolved;
  save_config(dir, cfg);

  const auto tr = encode_samples(load_dir(train_dir, alphabet, err), alphabet);
  const auto va = encode_samples(load_dir(valid_dir, alphabet, err), alphabet);
  if (tr.empty() || va.empty()) throw DataError("training or validation set is empty");

  std::vector<ExperimentRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    auto row = run_experiment_matrix({configs[i]}, tr, va, alphabet, tc,
                                     [&](const std::string& name, const EpochRecord& r) {
                                       err << name << "  epoch " << r.epoch << "  train " << num(r.train_nll)
                                           << "  valid " << num(r.valid_nll) << "\n";
                                     });
    const fs::path run = dir / slug(i, configs[i].name);
    fs::create_directories(run);
    row[0].log.write(run / "convergence.tsv");
    write_file(run / "norms_best.tsv", norms_table_tsv(row[0].best_norms));
    write_file(run / "norms_final.tsv", norms_table_tsv(row[0].final_norms));
    rows.push_back(std::move(row[0]));
  }
  write_file(dir / "experiment.tsv", experiment_table_tsv(rows));
  write_file(dir / "experiment.txt", experiment_table_text(rows));
  out << experiment_table_text(rows);
  return kExitOk;
}

int cmd_norms(json& cfg, std::ostream& out, std::ostream&) {
  const std::string ckpt = require_string(cfg, {"eval", "checkpoint"}, "--checkpoint");
  const Checkpoint ck = load_checkpoint(ckpt);
  const WeightNorms n = weight_norms(ck.network.params());
  if (find(cfg, {"out"})) {
    const fs::path dir = prepare_out(cfg);
    save_config(dir, cfg);
    write_file(dir / "norms.tsv", norms_table_tsv(n));
    write_file(dir / "norms.txt", norms_table_text(n));
  }
  out << norms_table_text(n);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing

struct Binding {
  std::vector<std::string> path;
  enum Kind { String, Real, Count, List, Switch } kind;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MDLSTM handwriting recognizer with dropout", "mdrnn"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::map<std::string, std::string> sv;
  std::map<std::string, double> rv;
  std::map<std::string, std::size_t> cv;
  std::map<std::string, std::vector<double>> lv;
  std::map<std::string, bool> bv;
  std::vector<std::pair<CLI::Option*, Binding>> bindings;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--out", out_dir, "output directory");
  };
  auto str = [&](CLI::App* sub, const std::string& flag, std::vector<std::string> path, const std::string& help) {
    bindings.push_back({sub->add_option(flag, sv[flag], help), {std::move(path), Binding::String}});
  };
  auto real = [&](CLI::App* sub, const std::string& flag, std::vector<std::string> path, const std::string& help) {
    bindings.push_back({sub->add_option(flag, rv[flag], help), {std::move(path), Binding::Real}});
  };
  auto count = [&](CLI::App* sub, const std::string& flag, std::vector<std::string> path, const std::string& help) {
    bindings.push_back({sub->add_option(flag, cv[flag], help), {std::move(path), Binding::Count}});
  };
  auto list = [&](CLI::App* sub, const std::string& flag, std::vector<std::string> path, const std::string& help) {
    bindings.push_back({sub->add_option(flag, lv[flag], help)->expected(1, -1), {std::move(path), Binding::List}});
  };
  auto flag = [&](CLI::App* sub, const std::string& name, std::vector<std::string> path, const std::string& help) {
    bindings.push_back({sub->add_flag(name, bv[name], help), {std::move(path), Binding::Switch}});
  };
  auto training_flags = [&](CLI::App* sub) {
    str(sub, "--train", {"data", "train"}, "training set directory");
    str(sub, "--valid", {"data", "valid"}, "validation set directory");
    str(sub, "--alphabet", {"data", "alphabet"}, "characters (default: from training transcripts)");
    count(sub, "--epochs", {"training", "max_epochs"}, "maximum epochs");
    real(sub, "--lr", {"training", "learning_rate"}, "learning rate");
    count(sub, "--patience", {"training", "patience"}, "early-stopping patience in epochs");
    real(sub, "--init-std", {"overrides", "init_std"}, "weight init standard deviation");
    flag(sub, "--skip-infeasible", {"training", "skip_infeasible"}, "skip lines too long for their image");
    flag(sub, "--wall-time", {"training", "record_wall_time"}, "record seconds per epoch (not reproducible)");
  };
  auto decode_flags = [&](CLI::App* sub) {
    str(sub, "--checkpoint", {"eval", "checkpoint"}, "model checkpoint");
    str(sub, "--data", {"eval", "data"}, "dataset directory");
    str(sub, "--posteriors", {"eval", "posteriors"}, "posteriors JSONL instead of a checkpoint");
    str(sub, "--lexicon", {"decode", "lexicon"}, "lexicon file (word TAB spelling)");
    str(sub, "--lm", {"decode", "lm"}, "ARPA language model (default: uniform over the lexicon)");
    str(sub, "--priors", {"decode", "priors"}, "priors.json from training");
    real(sub, "--omega", {"decode", "omega"}, "optical scale");
    real(sub, "--wip", {"decode", "wip"}, "word insertion penalty");
    real(sub, "--kappa", {"decode", "kappa"}, "prior scale");
    count(sub, "--beam", {"decode", "beam"}, "beam width (default unbounded)");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic line-image dataset");
  common(synth);
  count(synth, "--train-count", {"synth", "train"}, "training lines");
  count(synth, "--valid-count", {"synth", "valid"}, "validation lines");
  count(synth, "--test-count", {"synth", "test"}, "test lines");
  real(synth, "--noise", {"synth", "noise"}, "pixel noise std");
  count(synth, "--height", {"synth", "height"}, "image height");
  str(synth, "--chars", {"synth", "chars"}, "glyph set");

  auto* train_cmd = app.add_subcommand("train", "train a network");
  common(train_cmd);
  training_flags(train_cmd);
  str(train_cmd, "--dropout", {"overrides", "dropout"}, "none | topmost | top-two | all");
  flag(train_cmd, "--double-units", {"overrides", "double_units"}, "double units of layers with dropout");

  auto* eval_cmd = app.add_subcommand("eval", "best-path and optional constrained CER/WER");
  common(eval_cmd);
  decode_flags(eval_cmd);
  flag(eval_cmd, "--isolated", {"eval", "isolated"}, "isolated-word WER");
  flag(eval_cmd, "--save-posteriors", {"eval", "save_posteriors"}, "write posteriors.jsonl");

  auto* decode_cmd = app.add_subcommand("decode", "lexicon and LM constrained decoding");
  common(decode_cmd);
  decode_flags(decode_cmd);
  list(decode_cmd, "--tune-omega", {"decode", "tune", "omegas"}, "omega grid");
  list(decode_cmd, "--tune-wip", {"decode", "tune", "wips"}, "WIP grid");
  list(decode_cmd, "--tune-kappa", {"decode", "tune", "kappas"}, "kappa grid");

  auto* exp_cmd = app.add_subcommand("experiment", "train a matrix of dropout configurations");
  common(exp_cmd);
  training_flags(exp_cmd);
  str(exp_cmd, "--preset", {"experiment", "preset"}, "fig3 | table3");

  auto* norms_cmd = app.add_subcommand("norms", "weight norms of a checkpoint");
  common(norms_cmd);
  str(norms_cmd, "--checkpoint", {"eval", "checkpoint"}, "model checkpoint");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    json cfg = config_path.empty() ? json::object() : read_config(config_path);
    if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
    if (seed) cfg["seed"] = *seed;
    if (!out_dir.empty()) cfg["out"] = out_dir;
    for (const auto& [opt, b] : bindings) {
      if (opt->count() == 0) continue;
      json* j = &cfg;
      for (const auto& k : b.path) j = &(*j)[k];
      const std::string name = opt->get_name();
      switch (b.kind) {
        case Binding::String: *j = sv[name]; break;
        case Binding::Real: *j = rv[name]; break;
        case Binding::Count: *j = cv[name]; break;
        case Binding::List: *j = lv[name]; break;
        case Binding::Switch: *j = bv[name]; break;
      }
    }
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "synth") return cmd_synth(cfg, out, err);
    if (name == "train") return cmd_train(cfg, out, err);
    if (name == "eval") return cmd_eval(cfg, out, err);
    if (name == "decode") return cmd_decode(cfg, out, err);
    if (name == "experiment") return cmd_experiment(cfg, out, err);
    if (name == "norms") return cmd_norms(cfg, out, err);
    return kExitInternal;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace mdrnn
