#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lpv/real.hpp"

namespace lpv::inline LPV_NS {

// Binary P5 greymap, maxval 255.
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};
PgmImage read_pgm(const std::filesystem::path& path);

// Maps [0, 1] to [0, 255] with rounding; values outside are clamped.
std::vector<std::uint8_t> quantize_unit(std::span<const Real> values);
// Linear min-max stretch to [0, 255]; a constant input maps to 0.
std::vector<std::uint8_t> quantize_minmax(std::span<const Real> values);

}  // namespace lpv::inline LPV_NS
