#include "mdrnn/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>

#include "mdrnn/errors.hpp"
#include "mdrnn/metrics.hpp"

namespace mdrnn {

// ---------------------------------------------------------------------------
// Priors

Priors Priors::estimate(std::span<const std::vector<int>> targets, std::size_t classes,
                        double blank_share, double floor) {
  if (classes < 2) throw ConfigError("priors need at least one label plus blank");
  if (!(blank_share > 0.0 && blank_share < 1.0)) throw ConfigError("blank_share must lie in (0, 1)");
  if (!(floor > 0.0 && floor < 1.0)) throw ConfigError("prior floor must lie in (0, 1)");
  std::vector<double> count(classes, 0.0);
  double total = 0.0;
  for (const auto& t : targets)
    for (int l : t) {
      if (l <= 0 || static_cast<std::size_t>(l) >= classes)
        throw DataError("prior estimation: label " + std::to_string(l) + " out of range");
      count[static_cast<std::size_t>(l)] += 1.0;
      total += 1.0;
    }
  if (total == 0.0) throw DataError("prior estimation: empty corpus");
  Priors pr;
  pr.p.assign(classes, 0.0);
  pr.p[0] = blank_share;
  for (std::size_t k = 1; k < classes; ++k) pr.p[k] = (1.0 - blank_share) * count[k] / total;
  double sum = 0.0;
  for (double& v : pr.p) {
    v = std::max(v, floor);
    sum += v;
  }
  for (double& v : pr.p) v /= sum;
  return pr;
}

Priors Priors::uniform(std::size_t classes) {
  if (classes == 0) throw ConfigError("priors need at least one class");
  return Priors{std::vector<double>(classes, 1.0 / static_cast<double>(classes))};
}

void to_json(nlohmann::json& j, const Priors& p) { j = {{"priors", p.p}}; }

void from_json(const nlohmann::json& j, Priors& p) {
  try {
    p.p = j.at("priors").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("priors: ") + e.what());
  }
  for (double v : p.p)
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("priors must be positive");
}

Tensor pseudo_likelihood(const FeatureGrid& posteriors, const Priors& priors, double kappa) {
  if (!(kappa >= 0.0)) throw std::invalid_argument("pseudo_likelihood: kappa must be >= 0");
  if (posteriors.height() != 1) throw std::invalid_argument("pseudo_likelihood: grid must have height 1");
  const std::size_t T = posteriors.width(), K = posteriors.depth();
  if (priors.p.size() != K) throw std::invalid_argument("pseudo_likelihood: prior count != classes");
  Tensor out({T, K});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < K; ++k) {
      const double lp = std::log(posteriors.at(0, t, k));
      out[t * K + k] = kappa == 0.0 ? lp : lp - kappa * std::log(priors.p[k]);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Lexicon

Lexicon::Lexicon(std::vector<std::string> words, const LabelAlphabet& alphabet) {
  nodes_.emplace_back();
  std::set<std::string> seen;
  for (auto& w : words) {
    if (w.empty()) throw ConfigError("lexicon: empty word");
    if (!seen.insert(w).second) continue;
    const auto labels = alphabet.try_encode(w);
    if (!labels) throw ConfigError("lexicon: word '" + w + "' uses characters outside the alphabet");
    if (alphabet.space() && std::find(labels->begin(), labels->end(), *alphabet.space()) != labels->end())
      throw ConfigError("lexicon: word '" + w + "' contains the whitespace separator");
    words_.push_back({w, *labels});
    insert(static_cast<int>(words_.size() - 1));
  }
  if (words_.empty()) throw ConfigError("lexicon is empty");
}

Lexicon Lexicon::read(const std::filesystem::path& path, const LabelAlphabet& alphabet) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon " + path.string());
  std::vector<std::string> words;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string word = line.substr(0, tab);
    if (tab != std::string::npos) {
      std::string spelling = line.substr(tab + 1);
      spelling.erase(std::remove(spelling.begin(), spelling.end(), ' '), spelling.end());
      if (spelling != word)
        throw DataError(path.string() + ":" + std::to_string(number) + ": spelling of '" + word +
                        "' does not match the word");
    }
    words.push_back(word);
  }
  return Lexicon(std::move(words), alphabet);
}

bool Lexicon::contains(const std::string& word) const {
  return std::any_of(words_.begin(), words_.end(), [&](const Word& w) { return w.text == word; });
}

void Lexicon::insert(int word) {
  int node = 0;
  for (int l : words_[static_cast<std::size_t>(word)].labels) {
    auto& ch = nodes_[static_cast<std::size_t>(node)].children;
    auto it = std::lower_bound(ch.begin(), ch.end(), std::make_pair(l, -1));
    if (it != ch.end() && it->first == l) {
      node = it->second;
      continue;
    }
    const int next = static_cast<int>(nodes_.size());
    ch.insert(it, {l, next});
    nodes_.push_back(Node{l, {}, {}});
    node = next;
  }
  nodes_[static_cast<std::size_t>(node)].ends.push_back(word);
}

// ---------------------------------------------------------------------------
// Params

void DecodeParams::validate() const {
  if (!(omega > 0.0) || !std::isfinite(omega)) throw ConfigError("omega must be > 0");
  if (!(wip > 0.0) || !std::isfinite(wip)) throw ConfigError("wip must be > 0");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ConfigError("kappa must be >= 0");
  if (beam && *beam == 0) throw ConfigError("beam must be >= 1");
}

void to_json(nlohmann::json& j, const DecodeParams& p) {
  j = {{"omega", p.omega}, {"wip", p.wip}, {"kappa", p.kappa}};
  j["beam"] = p.beam ? nlohmann::json(*p.beam) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, DecodeParams& p) {
  try {
    p = DecodeParams{};
    p.omega = j.value("omega", p.omega);
    p.wip = j.value("wip", p.wip);
    p.kappa = j.value("kappa", p.kappa);
    if (j.contains("beam") && !j.at("beam").is_null()) p.beam = j.at("beam").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("decode params: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Search

namespace {

const double kLogHalf = -std::numbers::ln2;

enum class Kind : std::uint8_t { LeadBlank, Char, Blank, Space, SpaceBlank };

struct Key {
  Kind kind;
  int node;
  std::vector<int> context;

  friend auto operator<=>(const Key&, const Key&) = default;
};

struct History {
  int word;
  std::shared_ptr<const History> prev;
};

struct Token {
  double total = 0.0;
  double optical = 0.0;
  double lm = 0.0;
  std::size_t words = 0;
  std::shared_ptr<const History> history;
};

}  // namespace

Decoder::Decoder(const Lexicon& lexicon, const NGramModel& lm, const LabelAlphabet& alphabet)
    : lexicon_(lexicon), lm_(lm), space_(alphabet.space()) {
  for (const auto& w : lexicon_.words()) {
    const auto id = lm_.id(w.text);
    if (!id) throw ConfigError("lexicon word '" + w.text + "' is not in the language model");
    lm_ids_.push_back(*id);
  }
  for (const auto& w : lexicon_.words())
    for (int l : w.labels)
      if (static_cast<std::size_t>(l) >= alphabet.size())
        throw ConfigError("lexicon uses labels outside the alphabet");

  for (int id : lm_ids_) word_lookahead_.push_back(lm_.log_prob({}, id));
}

double sentence_log_prob(const NGramModel& lm, std::span<const int> lm_words) {
  std::vector<int> ctx;
  if (lm.has_bos()) ctx.push_back(lm.bos());
  double total = 0.0;
  for (int w : lm_words) {
    total += lm.log_prob(ctx, w);
    ctx.push_back(w);
  }
  if (lm.has_eos()) total += lm.log_prob(ctx, lm.eos());
  return total;
}

DecodeResult Decoder::decode(const FeatureGrid& posteriors, const Priors& priors,
                             const DecodeParams& params) const {
  return decode(pseudo_likelihood(posteriors, priors, params.kappa), params);
}

DecodeResult Decoder::decode(const Tensor& scores, const DecodeParams& params) const {
  params.validate();
  if (scores.rank() != 2 || scores.dim(0) == 0) throw std::invalid_argument("decode: scores must be T x K");
  const std::size_t T = scores.dim(0), K = scores.dim(1);
  if (space_ && static_cast<std::size_t>(*space_) >= K)
    throw std::invalid_argument("decode: whitespace label outside the score grid");
  const auto& trie = lexicon_.trie();
  const auto& root = trie[0];
  const double log_wip = std::log(params.wip);
  const double omega = params.omega;

  auto label_of = [&](const Key& k) -> int {
    switch (k.kind) {
      case Kind::Char: return trie[static_cast<std::size_t>(k.node)].label;
      case Kind::Space: return *space_;
      default: return 0;
    }
  };

  // Backward Viterbi over (kind, node) with unigram LM scores: best[t][s]
  // is the best score obtainable after frame t from state s.
  const std::size_t N = trie.size(), S = 3 + 2 * N;
  auto sid = [](Kind k, int node) -> std::size_t {
    switch (k) {
      case Kind::LeadBlank: return 0;
      case Kind::Space: return 1;
      case Kind::SpaceBlank: return 2;
      case Kind::Char: return 3 + 2 * static_cast<std::size_t>(node);
      case Kind::Blank: return 4 + 2 * static_cast<std::size_t>(node);
    }
    return 0;
  };
  const double ninf = -std::numeric_limits<double>::infinity();
  const double eos_ahead = lm_.has_eos() ? lm_.log_prob({}, lm_.eos()) : 0.0;
  std::vector<double> commit_ahead(N, ninf);
  for (std::size_t n = 0; n < N; ++n)
    for (int w : trie[n].ends)
      commit_ahead[n] = std::max(commit_ahead[n], word_lookahead_[static_cast<std::size_t>(w)] + log_wip);
  std::vector<double> ahead(T * S, ninf);
  for (std::size_t n = 1; n < N; ++n)
    ahead[(T - 1) * S + sid(Kind::Char, int(n))] = ahead[(T - 1) * S + sid(Kind::Blank, int(n))] =
        commit_ahead[n] + eos_ahead;
  for (std::size_t t = T - 1; t-- > 0;) {
    const double* nx = &ahead[(t + 1) * S];
    double* row = &ahead[t * S];
    auto arrive = [&](Kind k, int node) {
      const int label = k == Kind::Char ? trie[static_cast<std::size_t>(node)].label
                        : k == Kind::Space ? *space_ : 0;
      return omega * (scores[(t + 1) * K + static_cast<std::size_t>(label)] + kLogHalf) + nx[sid(k, node)];
    };
    double entry1 = ninf, entry2 = ninf;
    int entry1_label = -1;
    for (const auto& [l, m] : root.children) {
      const double v = arrive(Kind::Char, m);
      if (v > entry1) {
        entry2 = entry1;
        entry1 = v;
        entry1_label = l;
      } else {
        entry2 = std::max(entry2, v);
      }
    }
    const double space_arrive = space_ ? arrive(Kind::Space, 0) : ninf;
    row[0] = std::max(arrive(Kind::LeadBlank, 0), entry1);
    if (space_) {
      row[1] = std::max({space_arrive, arrive(Kind::SpaceBlank, 0), entry1});
      row[2] = std::max(arrive(Kind::SpaceBlank, 0), entry1);
    }
    for (std::size_t n = 1; n < N; ++n) {
      const int node = static_cast<int>(n), label = trie[n].label;
      double c = std::max(arrive(Kind::Char, node), arrive(Kind::Blank, node));
      double b = arrive(Kind::Blank, node);
      for (const auto& [l, m] : trie[n].children) {
        const double v = arrive(Kind::Char, m);
        b = std::max(b, v);
        if (l != label) c = std::max(c, v);
      }
      if (!trie[n].ends.empty()) {
        c = std::max(c, commit_ahead[n] + std::max(space_arrive, label == entry1_label ? entry2 : entry1));
        b = std::max(b, commit_ahead[n] + std::max(space_arrive, entry1));
      }
      row[sid(Kind::Char, node)] = c;
      row[sid(Kind::Blank, node)] = b;
    }
  }
  auto lookahead = [&](const Key& k, std::size_t t) { return ahead[t * S + sid(k.kind, k.node)]; };

  using Frame = std::map<Key, Token>;
  // Adds `tok` moved into `key` at frame t (emission and transition of t).
  // Tokens that cannot finish a word in the remaining frames are dropped.
  auto relax = [&](Frame& next, Key key, Token tok, std::size_t t) {
    if (lookahead(key, t) == ninf) return;
    const double emit = scores[t * K + static_cast<std::size_t>(label_of(key))] + kLogHalf;
    tok.optical += emit;
    tok.total += omega * emit;
    auto [it, inserted] = next.try_emplace(std::move(key), tok);
    if (!inserted && tok.total > it->second.total) it->second = std::move(tok);
  };
  auto commit = [&](const std::vector<int>& ctx, const Token& tok, int word,
                    std::vector<int>& new_ctx) {
    Token out = tok;
    const int id = lm_ids_[static_cast<std::size_t>(word)];
    const double lp = lm_.log_prob(ctx, id);
    out.lm += lp;
    out.total += lp + log_wip;
    ++out.words;
    out.history = std::make_shared<const History>(History{word, tok.history});
    new_ctx = ctx;
    new_ctx.push_back(id);
    new_ctx = lm_.truncate(std::move(new_ctx));
    return out;
  };
  auto enter_words = [&](Frame& next, const std::vector<int>& ctx, const Token& tok,
                         std::size_t t, int forbidden) {
    for (const auto& [l, child] : root.children)
      if (l != forbidden) relax(next, Key{Kind::Char, child, ctx}, tok, t);
  };

  std::vector<int> start_ctx;
  if (lm_.has_bos()) start_ctx.push_back(lm_.bos());
  start_ctx = lm_.truncate(std::move(start_ctx));

  Frame cur;
  relax(cur, Key{Kind::LeadBlank, 0, start_ctx}, Token{}, 0);
  enter_words(cur, start_ctx, Token{}, 0, -1);

  auto prune = [&](Frame& f, std::size_t t) {
    if (!params.beam || f.size() <= *params.beam) return;
    std::vector<std::pair<double, const Key*>> order;
    order.reserve(f.size());
    for (const auto& [k, tok] : f) order.emplace_back(tok.total + lookahead(k, t), &k);
    // Map order breaks ties, so the kept set is deterministic.
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    Frame kept;
    for (std::size_t i = 0; i < *params.beam; ++i) {
      auto node = f.extract(*order[i].second);
      kept.insert(std::move(node));
    }
    f = std::move(kept);
  };
  prune(cur, 0);

  for (std::size_t t = 1; t < T; ++t) {
    Frame next;
    for (const auto& [key, tok] : cur) {
      relax(next, key, tok, t);  // self-loop
      switch (key.kind) {
        case Kind::LeadBlank:
          enter_words(next, key.context, tok, t, -1);
          break;
        case Kind::Char:
        case Kind::Blank: {
          const auto& node = trie[static_cast<std::size_t>(key.node)];
          const bool is_char = key.kind == Kind::Char;
          if (is_char) relax(next, Key{Kind::Blank, key.node, key.context}, tok, t);
          for (const auto& [l, child] : node.children)
            if (!is_char || l != node.label) relax(next, Key{Kind::Char, child, key.context}, tok, t);
          for (int w : node.ends) {
            std::vector<int> ctx;
            const Token done = commit(key.context, tok, w, ctx);
            if (space_) relax(next, Key{Kind::Space, 0, ctx}, done, t);
            enter_words(next, ctx, done, t, is_char ? node.label : -1);
          }
          break;
        }
        case Kind::Space:
          relax(next, Key{Kind::SpaceBlank, 0, key.context}, tok, t);
          enter_words(next, key.context, tok, t, -1);
          break;
        case Kind::SpaceBlank:
          enter_words(next, key.context, tok, t, -1);
          break;
      }
    }
    prune(next, t);
    cur = std::move(next);
  }

  std::optional<Token> best;
  for (const auto& [key, tok] : cur) {
    if (key.kind != Kind::Char && key.kind != Kind::Blank) continue;
    for (int w : trie[static_cast<std::size_t>(key.node)].ends) {
      std::vector<int> ctx;
      Token done = commit(key.context, tok, w, ctx);
      if (lm_.has_eos()) {
        const double lp = lm_.log_prob(ctx, lm_.eos());
        done.lm += lp;
        done.total += lp;
      }
      if (!best || done.total > best->total) best = std::move(done);
    }
  }
  if (!best || !std::isfinite(best->total))
    throw SearchError("decode: no complete word sequence survived (" + std::to_string(T) +
                      " frames" + (params.beam ? ", beam " + std::to_string(*params.beam) : "") + ")");

  DecodeResult r;
  for (auto h = best->history; h; h = h->prev) r.words.push_back(h->word);
  std::reverse(r.words.begin(), r.words.end());
  for (int w : r.words) {
    if (!r.text.empty()) r.text += " ";
    r.text += lexicon_.words()[static_cast<std::size_t>(w)].text;
  }
  r.total = best->total;
  r.optical = best->optical;
  r.lm = best->lm;
  r.word_count = best->words;
  return r;
}

// ---------------------------------------------------------------------------
// Tuning

std::size_t best_tune_point(std::span<const TunePoint> points) {
  if (points.empty()) throw ConfigError("no tuning points");
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto& p = points[i];
    const auto& b = points[best];
    if (p.wer < b.wer ||
        (p.wer == b.wer && (p.cer < b.cer || (p.cer == b.cer && p.params.omega < b.params.omega))))
      best = i;
  }
  return best;
}

TuneResult tune(const Decoder& decoder, const std::vector<TuneSample>& samples,
                const Priors& priors, const TuneGrid& grid, std::optional<std::size_t> beam) {
  if (grid.omegas.empty() || grid.wips.empty() || grid.kappas.empty())
    throw ConfigError("tuning grid is empty");
  if (samples.empty()) throw DataError("tuning set is empty");

  std::vector<std::vector<Tensor>> scores(grid.kappas.size());
  for (std::size_t k = 0; k < grid.kappas.size(); ++k)
    for (const auto& s : samples) scores[k].push_back(pseudo_likelihood(s.posteriors, priors, grid.kappas[k]));

  TuneResult result;
  for (double omega : grid.omegas)
    for (double wip : grid.wips)
      for (std::size_t k = 0; k < grid.kappas.size(); ++k) {
        TunePoint pt;
        pt.params = DecodeParams{omega, wip, grid.kappas[k], beam};
        pt.params.validate();
        std::vector<std::string> hyp(samples.size());
        std::vector<char> failed(samples.size(), 0);
#pragma omp parallel for schedule(dynamic)
        for (std::size_t i = 0; i < samples.size(); ++i) {
          try {
            hyp[i] = decoder.decode(scores[k][i], pt.params).text;
          } catch (const SearchError&) {
            failed[i] = 1;
          }
        }
        Scorer scorer(WerMode::Line);
        for (std::size_t i = 0; i < samples.size(); ++i) {
          scorer.add(hyp[i], samples[i].reference);
          pt.failures += failed[i];
        }
        pt.wer = scorer.wer();
        pt.cer = scorer.cer();
        result.points.push_back(pt);
      }

  result.best = result.points[best_tune_point(result.points)];
  return result;
}

}  // namespace mdrnn
