#pragma once

// Line-image datasets: PGM images, transcript files and a synthetic
// generator of digit-string lines.

#include <filesystem>
#include <string>
#include <vector>

#include "mdrnn/alphabet.hpp"
#include "mdrnn/feature_grid.hpp"
#include "mdrnn/numerics.hpp"

namespace mdrnn {

/// A grayscale line image (H x W x 1, values in [0, 1], ink high) with its
/// transcript.
struct Sample {
  std::string id;
  FeatureGrid image;
  std::string transcript;
};

/// Binary PGM (P5), maxval up to 255. Pixel value = byte / maxval.
FeatureGrid read_pgm(const std::filesystem::path& path);
/// Writes maxval 255; values are rounded to the nearest 1/255.
void write_pgm(const std::filesystem::path& path, const FeatureGrid& image);

struct TranscriptLine {
  std::string file;
  std::string text;
};

/// "image_filename TAB transcript" per line; blank lines are skipped.
std::vector<TranscriptLine> read_transcripts(const std::filesystem::path& path);

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t rejected = 0;
  std::vector<std::string> messages;
};

/// Loads every transcript line's image from `image_dir`. Samples with
/// characters outside `alphabet` are skipped and counted; missing or
/// undecodable images throw DataError.
std::vector<Sample> load_dataset(const std::filesystem::path& image_dir,
                                 const std::filesystem::path& transcript_file,
                                 const LabelAlphabet& alphabet, LoadReport* report = nullptr);

/// Writes `<id>.pgm` per sample plus `transcripts.txt` into `dir`.
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);

struct SyntheticFontSpec {
  /// Glyph set; digits and the space are built in.
  std::string chars = "0123456789 ";
  std::size_t height = 16;      // image height in pixels
  std::size_t min_length = 3;   // characters per line
  std::size_t max_length = 6;
  double scale_jitter = 0.1;    // relative glyph scale spread
  std::size_t max_shift = 1;    // vertical offset spread in pixels
  std::size_t min_gap = 1;      // horizontal gap between glyphs
  std::size_t max_gap = 3;
  double stroke_dropout = 0.0;  // probability of erasing a template pixel
  double noise = 0.1;           // Gaussian pixel noise (std)
  std::string stream = "synthetic";
};

/// Glyph bitmap rows ('#' ink) for a supported character; 7 rows of 5.
const std::vector<std::string>& glyph_template(const std::string& symbol);

/// Renders one line of text. Values are clipped to [0, 1] and quantized to
/// multiples of 1/255 so PGM storage is lossless.
FeatureGrid render_line(const std::string& text, const SyntheticFontSpec& spec, Rng& rng);

/// n random lines; sample i draws only from stream (spec.stream, i) of `rng`,
/// so output does not depend on generation order.
std::vector<Sample> generate_synthetic(std::size_t n, const SyntheticFontSpec& spec, const Rng& rng,
                                       const std::string& id_prefix = "syn");

}  // namespace mdrnn
