#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fcdd/tensor.hpp"

namespace fcdd {

/// Reads an 8-bit PNG (grayscale or RGB; palette expanded, alpha stripped)
/// into a (1, c, h, w) raster with values in [0, 1].
Raster read_png(const std::filesystem::path& path);

void write_png_gray8(const std::filesystem::path& path, int h, int w,
                     const std::vector<std::uint8_t>& bytes);

/// Writes a (1, c, h, w) raster with values in [0, 1] as an 8-bit PNG
/// (c = 1 or 3), rounding to nearest.
void write_png(const std::filesystem::path& path, const Raster& image);

}  // namespace fcdd
