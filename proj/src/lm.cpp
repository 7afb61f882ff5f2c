#include "mdrnn/lm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "mdrnn/errors.hpp"
#include "mdrnn/numerics.hpp"

namespace mdrnn {

namespace {

constexpr double kLn10 = std::numbers::ln10;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> fields(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string f;
  while (ss >> f) out.push_back(f);
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

int NGramModel::intern(const std::string& w) {
  const auto it = ids_.find(w);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(w);
  ids_.emplace(w, id);
  if (w == kBos) bos_ = id;
  if (w == kEos) eos_ = id;
  return id;
}

std::optional<int> NGramModel::id(const std::string& word) const {
  const auto it = ids_.find(word);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

NGramModel NGramModel::read_arpa(std::istream& in, const std::string& where) {
  NGramModel m;
  std::map<std::size_t, std::size_t> declared;
  std::map<std::size_t, std::size_t> seen;
  std::string line;
  std::size_t number = 0;
  std::size_t section = 0;  // 0 = preamble / \data\, n = \n-grams:
  bool in_data = false;
  bool ended = false;
  auto fail = [&](const std::string& msg) {
    throw DataError(where + ":" + std::to_string(number) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t == "\\data\\") {
      in_data = true;
      continue;
    }
    if (t == "\\end\\") {
      ended = true;
      break;
    }
    if (t.front() == '\\') {
      std::size_t n = 0;
      if (std::sscanf(t.c_str(), "\\%zu-grams:", &n) != 1 || n == 0) fail("unknown section " + t);
      section = n;
      in_data = false;
      m.order_ = std::max(m.order_, n);
      continue;
    }
    if (in_data) {
      std::size_t n = 0, count = 0;
      if (std::sscanf(t.c_str(), "ngram %zu=%zu", &n, &count) != 2) fail("bad count line " + t);
      declared[n] = count;
      continue;
    }
    if (section == 0) continue;  // free text before the data header
    const auto f = fields(t);
    if (f.size() != section + 1 && f.size() != section + 2)
      fail("expected " + std::to_string(section) + " words, a probability and an optional back-off");
    Entry e;
    try {
      e.log_prob = std::stod(f[0]) * kLn10;
      if (f.size() == section + 2) e.backoff = std::stod(f.back()) * kLn10;
    } catch (const std::exception&) {
      fail("unparsable number");
    }
    std::vector<int> key;
    for (std::size_t k = 1; k <= section; ++k) key.push_back(m.intern(f[k]));
    m.grams_[key] = e;
    ++seen[section];
  }
  if (!ended) throw DataError(where + ": missing \\end\\ marker");
  if (m.order_ == 0) throw DataError(where + ": no n-gram sections");
  for (const auto& [n, count] : declared)
    if (seen[n] != count)
      throw DataError(where + ": header declares " + std::to_string(count) + " " +
                      std::to_string(n) + "-grams, file lists " + std::to_string(seen[n]));
  return m;
}

NGramModel NGramModel::read_arpa(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open language model " + path.string());
  return read_arpa(in, path.string());
}

NGramModel NGramModel::uniform(std::span<const std::string> vocabulary) {
  if (vocabulary.empty()) throw ConfigError("uniform language model needs a vocabulary");
  NGramModel m;
  m.order_ = 1;
  std::set<std::string> unique(vocabulary.begin(), vocabulary.end());
  const double lp = -std::log(static_cast<double>(unique.size()));
  for (const auto& w : unique) m.grams_[{m.intern(w)}] = Entry{lp, 0.0};
  return m;
}

NGramModel NGramModel::estimate(const std::vector<std::vector<std::string>>& sentences,
                                std::size_t order) {
  if (order != 1 && order != 2) throw ConfigError("estimator supports orders 1 and 2");
  if (sentences.empty()) throw ConfigError("estimator needs at least one sentence");
  NGramModel m;
  m.order_ = order;
  const int bos = m.intern(kBos);
  m.intern(kEos);
  std::map<int, double> uni;
  std::map<std::pair<int, int>, double> bi;
  std::map<int, double> ctx;
  double total = 0.0;
  for (const auto& s : sentences) {
    int prev = bos;
    std::vector<std::string> words = s;
    words.push_back(kEos);
    for (const auto& w : words) {
      const int id = m.intern(w);
      uni[id] += 1.0;
      total += 1.0;
      bi[{prev, id}] += 1.0;
      ctx[prev] += 1.0;
      prev = id;
    }
  }
  // <s> is never predicted.
  const double V = static_cast<double>(m.words_.size() - 1);
  std::map<int, double> p_uni;
  for (int w = 0; w < static_cast<int>(m.words_.size()); ++w) {
    if (w == bos) continue;
    p_uni[w] = (uni[w] + 1.0) / (total + V);
    m.grams_[{w}] = Entry{std::log(p_uni[w]), 0.0};
  }
  m.grams_[{bos}] = Entry{-99.0 * kLn10, 0.0};
  if (order == 2) {
    constexpr double D = 0.5;
    std::map<int, std::pair<double, double>> mass;  // context -> (bigram mass, unigram mass)
    for (const auto& [key, c] : bi) {
      const double p = (c - D) / ctx[key.first];
      m.grams_[{key.first, key.second}] = Entry{std::log(p), 0.0};
      mass[key.first].first += p;
      mass[key.first].second += p_uni[key.second];
    }
    for (const auto& [v, pm] : mass) {
      const double alpha = (1.0 - pm.first) / (1.0 - pm.second);
      m.grams_[{v}].backoff = std::log(alpha);
    }
  }
  return m;
}

std::string NGramModel::to_arpa() const {
  std::map<std::size_t, std::vector<std::string>> lines;
  for (const auto& [key, e] : grams_) {
    std::string l = fmt(e.log_prob / kLn10);
    for (int w : key) l += " " + words_[static_cast<std::size_t>(w)];
    if (key.size() < order_ && e.backoff != 0.0) l += " " + fmt(e.backoff / kLn10);
    lines[key.size()].push_back(l);
  }
  std::string out = "\\data\\\n";
  for (std::size_t n = 1; n <= order_; ++n)
    out += "ngram " + std::to_string(n) + "=" + std::to_string(lines[n].size()) + "\n";
  for (std::size_t n = 1; n <= order_; ++n) {
    out += "\n\\" + std::to_string(n) + "-grams:\n";
    for (const auto& l : lines[n]) out += l + "\n";
  }
  out += "\n\\end\\\n";
  return out;
}

double NGramModel::log_prob(std::span<const int> context, int word) const {
  if (context.size() + 1 > order_) context = context.subspan(context.size() + 1 - order_);
  std::vector<int> key(context.begin(), context.end());
  key.push_back(word);
  const auto it = grams_.find(key);
  if (it != grams_.end()) return it->second.log_prob;
  if (context.empty()) return kLogZero;
  const auto ctx = grams_.find(std::vector<int>(context.begin(), context.end()));
  const double backoff = ctx == grams_.end() ? 0.0 : ctx->second.backoff;
  return backoff + log_prob(context.subspan(1), word);
}

std::vector<int> NGramModel::truncate(std::vector<int> context) const {
  const std::size_t keep = order_ > 0 ? order_ - 1 : 0;
  if (context.size() > keep) context.erase(context.begin(), context.end() - static_cast<long>(keep));
  return context;
}

}  // namespace mdrnn
