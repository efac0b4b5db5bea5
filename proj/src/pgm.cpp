#include "lpv/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "lpv/errors.hpp"

namespace lpv::inline LPV_NS {

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw ShapeError("write_pgm: pixel count does not match " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  PgmImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw FormatError(path.string() + " is not an 8-bit P5 PGM");
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw FormatError(path.string() + " is truncated");
  return img;
}

std::vector<std::uint8_t> quantize_unit(std::span<const Real> values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(static_cast<double>(values[i]), 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

std::vector<std::uint8_t> quantize_minmax(std::span<const Real> values) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (range <= 0) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround((static_cast<double>(values[i]) - *lo) / range * 255.0));
  }
  return out;
}

}  // namespace lpv::inline LPV_NS
