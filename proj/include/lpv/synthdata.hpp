#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lpv/charset.hpp"
#include "lpv/rng.hpp"

namespace lpv::inline LPV_NS {

using Glyph = std::array<const char*, 7>;  // 7 rows of 5 columns, '#' = ink

// Built-in 5x7 bitmap for a symbol; throws ConfigError when there is none.
const Glyph& glyph_for(char symbol);
bool has_glyph(char symbol);

struct RenderConfig {
  std::size_t img_h = 16;
  std::size_t img_w = 48;
  double min_scale = 1.0;
  double max_scale = 1.5;
  int gap_jitter = 1;    // extra columns between glyphs, drawn from [0, gap_jitter]
  int max_x_offset = 4;  // left margin drawn from [0, min(slack, max_x_offset)]
  double noise = 0.1;    // additive uniform noise in [-noise, noise]
  double min_ink = 0.7;  // glyph intensity drawn from [min_ink, 1]
};

struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
};

struct Sample {
  std::size_t h = 0, w = 0;
  std::vector<Real> image;  // [h x w x 1], values in [0, 1]
  std::string text;
  std::vector<int> label;   // text + [EOS] + [PAD]-fill to T
  std::vector<Box> boxes;   // one per character
  std::optional<std::size_t> occluded_index;
};

std::vector<std::string> default_vocabulary();
inline constexpr const char* kDefaultCharset = "acdeilmnorst";

Sample render_word(const std::string& text, const RenderConfig& cfg, const Charset& charset, std::size_t t_max,
                   Rng& rng);

// Blanks one character box to the background value; random index when absent.
Sample corrupt_occlude(const Sample& sample, Rng& rng, std::optional<std::size_t> index = std::nullopt);

enum class Split { kTrain, kTest };

struct DatasetSpec {
  std::vector<std::string> vocab;
  Charset charset;
  std::size_t t_max = 8;
  RenderConfig render;
};

std::vector<Sample> make_dataset(const DatasetSpec& spec, std::size_t n_samples, Split split, std::uint64_t seed);

// Same samples with one character occluded each; deterministic per seed.
std::vector<Sample> occlude_dataset(const std::vector<Sample>& clean, std::uint64_t seed);

// One P5 PGM per image plus index.tsv with id<TAB>text<TAB>occluded_index
// (-1 when not occluded).
void dump_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);

}  // namespace lpv::inline LPV_NS
