// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace opal {

/// 8-bit single-channel image, row-major. For masks, nonzero = foreground.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t foreground_count() const;
  bool empty_foreground() const { return foreground_count() == 0; }

  bool operator==(const Raster&) const = default;
};

/// Tight pixel bounds [x0, x1) x [y0, y1) of the foreground; false if empty.
bool foreground_bounds(const Raster& r, int& x0, int& y0, int& x1, int& y1);

Raster crop(const Raster& r, int x0, int y0, int x1, int y1);
Raster flip_horizontal(const Raster& r);
/// Nearest-neighbour resample.
Raster resize_nearest(const Raster& r, int height, int width);

/// Reads any PNG; every channel is collapsed so that a pixel is foreground
/// when any of its colour channels is nonzero. Throws opal::Error on failure.
Raster read_png_mask(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const Raster& r);
/// Palette PNG: pixel values index into `palette` (RGB triples).
void write_png_indexed(const std::filesystem::path& path, const Raster& r,
                       const std::vector<std::uint8_t>& palette_rgb);
std::vector<std::uint8_t> encode_png_indexed(const Raster& r,
                                             const std::vector<std::uint8_t>& palette_rgb);

}  // namespace opal
