#include "lpv/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "lpv/errors.hpp"
#include "lpv/pgm.hpp"

namespace lpv::inline LPV_NS {

namespace {

const std::map<char, Glyph>& font() {
  static const std::map<char, Glyph> glyphs = {
      {'a', {".....", ".....", ".###.", "....#", ".####", "#...#", ".####"}},
      {'b', {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."}},
      {'c', {".....", ".....", ".###.", "#....", "#....", "#...#", ".###."}},
      {'d', {"....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"}},
      {'e', {".....", ".....", ".###.", "#...#", "#####", "#....", ".###."}},
      {'f', {"..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."}},
      {'g', {".....", ".####", "#...#", "#...#", ".####", "....#", ".###."}},
      {'h', {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"}},
      {'i', {"..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."}},
      {'j', {"...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."}},
      {'k', {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."}},
      {'l', {".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {'m', {".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"}},
      {'n', {".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"}},
      {'o', {".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."}},
      {'p', {".....", ".....", "####.", "#...#", "####.", "#....", "#...."}},
      {'q', {".....", ".....", ".##.#", "#..##", ".####", "....#", "....#"}},
      {'r', {".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."}},
      {'s', {".....", ".....", ".###.", "#....", ".###.", "....#", "####."}},
      {'t', {".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."}},
      {'u', {".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"}},
      {'v', {".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."}},
      {'w', {".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."}},
      {'x', {".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"}},
      {'y', {".....", ".....", "#...#", "#...#", ".####", "....#", ".###."}},
      {'z', {".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"}},
      {'0', {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."}},
      {'1', {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."}},
      {'2', {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"}},
      {'3', {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."}},
      {'4', {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."}},
      {'5', {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."}},
      {'6', {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."}},
      {'7', {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."}},
      {'8', {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."}},
      {'9', {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}},
  };
  return glyphs;
}

void validate_word(const std::string& word, const Charset& charset, std::size_t t_max) {
  if (word.empty()) throw ConfigError("vocabulary words must be non-empty");
  for (char c : word) {
    if (!charset.contains(c)) throw ConfigError("word \"" + word + "\" uses symbol '" + std::string(1, c) + "' outside the charset");
    if (!has_glyph(c)) throw ConfigError("no glyph for symbol '" + std::string(1, c) + "'");
  }
  if (word.size() + 1 > t_max) {
    throw ConfigError("word \"" + word + "\" needs " + std::to_string(word.size() + 1) + " slots, T is " + std::to_string(t_max));
  }
}

}  // namespace

const Glyph& glyph_for(char symbol) {
  auto it = font().find(symbol);
  if (it == font().end()) throw ConfigError(std::string("no glyph for symbol '") + symbol + "'");
  return it->second;
}

bool has_glyph(char symbol) { return font().count(symbol) != 0; }

std::vector<std::string> default_vocabulary() {
  // Shares suffixes (-tion, -ment, -ain, -or, -ean, -ent) so context predicts
  // a hidden character.
  return {"nation", "ration", "motion", "lotion", "notion", "action", "station", "edition", "diction", "mention",
          "lament", "cement", "moment", "torment", "mentor", "remain", "retain",  "detain",  "contain", "certain",
          "master", "minor",  "manor",  "tenor",   "tensor", "sensor", "censor",  "doctor",  "actor",   "creator",
          "rain",   "train",  "strain", "drain",   "stain",  "slain",  "loan",    "lean",    "clean",   "dean",
          "mean",   "meant",  "cent",   "scent",   "dent",   "rent",   "tent",    "stone",   "alone",   "diet"};
}

Sample render_word(const std::string& text, const RenderConfig& cfg, const Charset& charset, std::size_t t_max,
                   Rng& rng) {
  if (text.empty()) throw ContractError("render_word: text must be non-empty");
  const std::size_t n = text.size();
  std::vector<const Glyph*> glyphs;
  for (char c : text) glyphs.push_back(&glyph_for(c));

  Sample s;
  s.h = cfg.img_h;
  s.w = cfg.img_w;
  s.text = text;
  s.label = charset.encode(text, t_max);

  std::vector<std::size_t> gaps(n - 1);
  std::size_t gap_total = 0;
  for (auto& g : gaps) {
    g = 1 + static_cast<std::size_t>(rng.range(0, std::max(0, cfg.gap_jitter)));
    gap_total += g;
  }
  const double drawn = rng.uniform(cfg.min_scale, cfg.max_scale);
  const double fit_w = gap_total >= cfg.img_w ? 0.0 : static_cast<double>(cfg.img_w - gap_total) / (5.0 * static_cast<double>(n));
  const double fit_h = static_cast<double>(cfg.img_h) / 7.0;
  const double limit = std::min(fit_w, fit_h);
  if (limit < cfg.min_scale || limit < 1.0 / 5.0) {
    throw ConfigError("text \"" + text + "\" is too long for a " + std::to_string(cfg.img_h) + "x" +
                      std::to_string(cfg.img_w) + " canvas");
  }
  const double scale_factor = std::min(drawn, limit);
  const auto gw = static_cast<std::size_t>(std::floor(5.0 * scale_factor));
  const auto gh = static_cast<std::size_t>(std::floor(7.0 * scale_factor));
  const std::size_t width = n * gw + gap_total;
  const std::size_t slack = cfg.img_w - width;
  std::size_t x = static_cast<std::size_t>(rng.range(0, static_cast<int>(std::min<std::size_t>(slack, static_cast<std::size_t>(std::max(0, cfg.max_x_offset))))));
  const std::size_t y0 = static_cast<std::size_t>(rng.range(0, static_cast<int>(cfg.img_h - gh)));
  const auto ink = static_cast<Real>(rng.uniform(cfg.min_ink, 1.0));

  s.image.assign(cfg.img_h * cfg.img_w, 0);
  for (std::size_t c = 0; c < n; ++c) {
    const Glyph& g = *glyphs[c];
    for (std::size_t yy = 0; yy < gh; ++yy) {
      const std::size_t gy = yy * 7 / gh;
      for (std::size_t xx = 0; xx < gw; ++xx) {
        const std::size_t gx = xx * 5 / gw;
        if (g[gy][gx] == '#') s.image[(y0 + yy) * cfg.img_w + x + xx] = ink;
      }
    }
    s.boxes.push_back({x, y0, x + gw, y0 + gh});
    x += gw + (c + 1 < n ? gaps[c] : 0);
  }
  if (cfg.noise > 0) {
    for (auto& v : s.image) {
      v = std::clamp(v + static_cast<Real>(rng.uniform(-cfg.noise, cfg.noise)), Real(0), Real(1));
    }
  }
  return s;
}

Sample corrupt_occlude(const Sample& sample, Rng& rng, std::optional<std::size_t> index) {
  const std::size_t n = sample.text.size();
  if (n == 0) throw ContractError("corrupt_occlude: sample has no characters");
  const std::size_t which = index ? *index : static_cast<std::size_t>(rng.below(n));
  if (which >= n) {
    throw ContractError("corrupt_occlude: index " + std::to_string(which) + " out of range for \"" + sample.text + "\"");
  }
  Sample out = sample;
  const Box& b = out.boxes[which];
  for (std::size_t y = b.y0; y < b.y1; ++y)
    for (std::size_t x = b.x0; x < b.x1; ++x) out.image[y * out.w + x] = 0;
  out.occluded_index = which;
  return out;
}

std::vector<Sample> make_dataset(const DatasetSpec& spec, std::size_t n_samples, Split split, std::uint64_t seed) {
  if (spec.vocab.empty()) throw ConfigError("vocabulary must not be empty");
  for (const auto& word : spec.vocab) validate_word(word, spec.charset, spec.t_max);
  const std::uint64_t split_seed = mix_seed(seed, split == Split::kTrain ? 0 : 1);
  std::vector<Sample> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Rng rng(mix_seed(split_seed, i));
    const std::string& word = spec.vocab[rng.below(spec.vocab.size())];
    out.push_back(render_word(word, spec.render, spec.charset, spec.t_max, rng));
  }
  return out;
}

std::vector<Sample> occlude_dataset(const std::vector<Sample>& clean, std::uint64_t seed) {
  const std::uint64_t occ_seed = mix_seed(seed, 2);
  std::vector<Sample> out;
  out.reserve(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    Rng rng(mix_seed(occ_seed, i));
    out.push_back(corrupt_occlude(clean[i], rng));
  }
  return out;
}

void dump_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream index(dir / "index.tsv");
  if (!index) throw IoError("cannot open " + (dir / "index.tsv").string() + " for writing");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu", i);
    write_pgm(dir / (std::string(name) + ".pgm"), s.w, s.h, quantize_unit(s.image));
    index << name << '\t' << s.text << '\t'
          << (s.occluded_index ? static_cast<long long>(*s.occluded_index) : -1LL) << '\n';
  }
  if (!index) throw IoError("failed writing " + (dir / "index.tsv").string());
}

}  // namespace lpv::inline LPV_NS
