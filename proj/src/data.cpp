#include "mdrnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mdrnn/errors.hpp"

namespace mdrnn {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Reads the next whitespace-delimited header token, skipping comments.
std::string pgm_token(const std::string& bytes, std::size_t& pos, const std::string& where) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw DataError(where + ": truncated PGM header");
  return bytes.substr(start, pos - start);
}

std::size_t pgm_number(const std::string& bytes, std::size_t& pos, const std::string& where) {
  const std::string tok = pgm_token(bytes, pos, where);
  if (tok.find_first_not_of("0123456789") != std::string::npos)
    throw DataError(where + ": bad PGM header field '" + tok + "'");
  return std::stoul(tok);
}

double quantize(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

const std::map<std::string, std::vector<std::string>>& glyphs() {
  static const std::map<std::string, std::vector<std::string>> g = {
      {"0", {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
      {"1", {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {"2", {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
      {"3", {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
      {"4", {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
      {"5", {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
      {"6", {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
      {"7", {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
      {"8", {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
      {"9", {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
      {" ", {".....", ".....", ".....", ".....", ".....", ".....", "....."}},
  };
  return g;
}

std::string random_text(const std::vector<std::string>& symbols, const SyntheticFontSpec& spec,
                        Rng& rng) {
  const std::size_t len =
      spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
  std::vector<std::string> ink;
  for (const auto& s : symbols)
    if (s != " ") ink.push_back(s);
  std::string text;
  std::string prev;
  for (std::size_t i = 0; i < len; ++i) {
    std::string s = symbols[rng.below(symbols.size())];
    // Spaces only between two ink glyphs.
    if (s == " " && (i == 0 || i + 1 == len || prev == " ")) s = ink[rng.below(ink.size())];
    text += s;
    prev = s;
  }
  return text;
}

}  // namespace

FeatureGrid read_pgm(const std::filesystem::path& path) {
  const std::string where = path.string();
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  if (pgm_token(bytes, pos, where) != "P5") throw DataError(where + ": not a binary PGM (P5)");
  const std::size_t width = pgm_number(bytes, pos, where);
  const std::size_t height = pgm_number(bytes, pos, where);
  const std::size_t maxval = pgm_number(bytes, pos, where);
  if (width == 0 || height == 0) throw DataError(where + ": empty image");
  if (maxval == 0 || maxval > 255) throw DataError(where + ": unsupported PGM maxval");
  ++pos;  // single whitespace byte before the raster
  if (bytes.size() < pos + width * height) throw DataError(where + ": truncated PGM raster");
  FeatureGrid img(height, width, 1);
  auto v = img.values();
  for (std::size_t i = 0; i < width * height; ++i)
    v[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
  return img;
}

void write_pgm(const std::filesystem::path& path, const FeatureGrid& image) {
  if (image.empty() || image.depth() != 1)
    throw std::invalid_argument("write_pgm: need a non-empty single-channel image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << image.width() << " " << image.height() << "\n255\n";
  std::string raster(image.cells(), '\0');
  auto v = image.values();
  for (std::size_t i = 0; i < raster.size(); ++i)
    raster[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0)));
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<TranscriptLine> read_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transcript file " + path.string());
  std::vector<TranscriptLine> lines;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw DataError(path.string() + ":" + std::to_string(number) +
                      ": expected 'image_filename<TAB>transcript'");
    lines.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return lines;
}

std::vector<Sample> load_dataset(const std::filesystem::path& image_dir,
                                 const std::filesystem::path& transcript_file,
                                 const LabelAlphabet& alphabet, LoadReport* report) {
  LoadReport local;
  LoadReport& r = report ? *report : local;
  r = LoadReport{};
  std::vector<Sample> samples;
  const auto lines = read_transcripts(transcript_file);
  if (lines.empty()) r.messages.push_back("warning: " + transcript_file.string() + " lists no samples");
  for (const auto& l : lines) {
    const auto path = image_dir / l.file;
    if (!std::filesystem::exists(path)) throw DataError("missing image " + path.string());
    if (!alphabet.try_encode(l.text)) {
      ++r.rejected;
      r.messages.push_back("rejected " + l.file + ": transcript has characters outside the alphabet");
      continue;
    }
    Sample s;
    s.id = std::filesystem::path(l.file).stem().string();
    s.image = read_pgm(path);
    s.transcript = l.text;
    samples.push_back(std::move(s));
  }
  r.loaded = samples.size();
  return samples;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream list(dir / "transcripts.txt", std::ios::trunc);
  if (!list) throw DataError("cannot write " + (dir / "transcripts.txt").string());
  for (const auto& s : samples) {
    write_pgm(dir / (s.id + ".pgm"), s.image);
    list << s.id << ".pgm\t" << s.transcript << "\n";
  }
}

const std::vector<std::string>& glyph_template(const std::string& symbol) {
  const auto it = glyphs().find(symbol);
  if (it == glyphs().end()) throw ConfigError("no synthetic glyph for '" + symbol + "'");
  return it->second;
}

FeatureGrid render_line(const std::string& text, const SyntheticFontSpec& spec, Rng& rng) {
  const auto symbols = utf8_code_points(text);
  if (symbols.empty()) throw std::invalid_argument("render_line: empty text");
  if (spec.height < 9 + 2 * spec.max_shift)
    throw ConfigError("synthetic: image height too small for the glyph grid");
  const double base = static_cast<double>(spec.height - 2 * spec.max_shift - 2) / 7.0;

  struct Placed {
    const std::vector<std::string>* glyph;
    std::size_t x, y, h, w;
  };
  std::vector<Placed> placed;
  std::size_t x = 1 + spec.min_gap + rng.below(spec.max_gap - spec.min_gap + 1);
  for (const auto& s : symbols) {
    const auto& g = glyph_template(s);
    const double scale = base * (1.0 + spec.scale_jitter * (2.0 * rng.uniform() - 1.0));
    const std::size_t h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(7.0 * scale)));
    const std::size_t w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(5.0 * scale)));
    const long room = static_cast<long>(spec.height) - static_cast<long>(std::min(h, spec.height));
    const long offset = static_cast<long>(rng.below(2 * spec.max_shift + 1)) -
                        static_cast<long>(spec.max_shift);
    const auto y = static_cast<std::size_t>(std::clamp(room / 2 + offset, 0L, room));
    placed.push_back({&g, x, y, h, w});
    x += w + spec.min_gap + rng.below(spec.max_gap - spec.min_gap + 1);
  }
  const std::size_t width = x + 1;

  FeatureGrid img(spec.height, width, 1);
  for (const auto& p : placed) {
    std::vector<bool> keep(35, true);
    if (spec.stroke_dropout > 0.0)
      for (std::size_t k = 0; k < 35; ++k) keep[k] = !rng.bernoulli(spec.stroke_dropout);
    for (std::size_t a = 0; a < p.h && p.y + a < spec.height; ++a) {
      const std::size_t gr = std::min<std::size_t>(6, a * 7 / p.h);
      for (std::size_t b = 0; b < p.w; ++b) {
        const std::size_t gc = std::min<std::size_t>(4, b * 5 / p.w);
        if ((*p.glyph)[gr][gc] == '#' && keep[gr * 5 + gc]) img.at(p.y + a, p.x + b, 0) = 1.0;
      }
    }
  }
  for (double& v : img.values()) {
    if (spec.noise > 0.0) v += spec.noise * rng.normal();
    v = quantize(v);
  }
  return img;
}

std::vector<Sample> generate_synthetic(std::size_t n, const SyntheticFontSpec& spec, const Rng& rng,
                                       const std::string& id_prefix) {
  if (n == 0) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  if (spec.min_length == 0 || spec.min_length > spec.max_length)
    throw ConfigError("synthetic: need 1 <= min_length <= max_length");
  if (spec.min_gap > spec.max_gap) throw ConfigError("synthetic: min_gap > max_gap");
  if (spec.noise < 0.0 || spec.scale_jitter < 0.0 || spec.scale_jitter >= 1.0 ||
      spec.stroke_dropout < 0.0 || spec.stroke_dropout >= 1.0)
    throw ConfigError("synthetic: jitter, dropout and noise must be non-negative and below 1");
  if (spec.height < 9 + 2 * spec.max_shift)
    throw ConfigError("synthetic: image height too small for the glyph grid");
  const auto symbols = utf8_code_points(spec.chars);
  for (const auto& s : symbols) glyph_template(s);
  if (std::count_if(symbols.begin(), symbols.end(), [](const auto& s) { return s != " "; }) == 0)
    throw ConfigError("synthetic: glyph set has no ink characters");

  std::vector<Sample> out(n);
  const Rng base = rng.stream(spec.stream);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = base.stream(std::to_string(i));
    char id[32];
    std::snprintf(id, sizeof(id), "%05zu", i);
    out[i].id = id_prefix + id;
    out[i].transcript = random_text(symbols, spec, r);
    out[i].image = render_line(out[i].transcript, spec, r);
  }
  return out;
}

}  // namespace mdrnn
