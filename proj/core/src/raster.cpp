// SPDX-License-Identifier: Apache-2.0
#include "opal/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>

#include "opal/error.hpp"

namespace opal {

std::size_t Raster::foreground_count() const {
  return static_cast<std::size_t>(
      std::count_if(pixels.begin(), pixels.end(), [](std::uint8_t v) { return v != 0; }));
}

bool foreground_bounds(const Raster& r, int& x0, int& y0, int& x1, int& y1) {
  x0 = r.width;
  y0 = r.height;
  x1 = -1;
  y1 = -1;
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      if (r.at(y, x) == 0) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) return false;
  ++x1;
  ++y1;
  return true;
}

Raster crop(const Raster& r, int x0, int y0, int x1, int y1) {
  require(x0 >= 0 && y0 >= 0 && x1 <= r.width && y1 <= r.height && x0 < x1 && y0 < y1,
          "crop window outside raster");
  Raster out(y1 - y0, x1 - x0);
  for (int y = y0; y < y1; ++y) {
    std::copy_n(&r.pixels[static_cast<std::size_t>(y) * r.width + x0], x1 - x0,
                &out.pixels[static_cast<std::size_t>(y - y0) * out.width]);
  }
  return out;
}

Raster flip_horizontal(const Raster& r) {
  Raster out(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) out.at(y, x) = r.at(y, r.width - 1 - x);
  return out;
}

Raster resize_nearest(const Raster& r, int height, int width) {
  require(height > 0 && width > 0 && r.height > 0 && r.width > 0, "resize_nearest: empty");
  Raster out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(r.height - 1, static_cast<int>((y + 0.5) * r.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(r.width - 1, static_cast<int>((x + 0.5) * r.width / width));
      out.at(y, x) = r.at(sy, sx);
    }
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void png_error_fn(png_structp, png_const_charp msg) { throw Error(std::string("png: ") + msg); }
void png_warning_fn(png_structp, png_const_charp) {}

void write_png(png_structp png, png_infop info, const Raster& r, bool indexed,
               const std::vector<std::uint8_t>& palette_rgb) {
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), 8,
               indexed ? PNG_COLOR_TYPE_PALETTE : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> palette;
  if (indexed) {
    require(palette_rgb.size() % 3 == 0 && !palette_rgb.empty() && palette_rgb.size() <= 768,
            "palette must hold 1..256 RGB triples");
    for (std::size_t i = 0; i < palette_rgb.size(); i += 3) {
      palette.push_back({palette_rgb[i], palette_rgb[i + 1], palette_rgb[i + 2]});
    }
    png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  }
  png_write_info(png, info);
  for (int y = 0; y < r.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&r.pixels[static_cast<std::size_t>(y) * r.width]));
  }
  png_write_end(png, nullptr);
}

}  // namespace

Raster read_png_mask(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error("not a PNG file: " + path.string());
  }
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  Raster out;
  try {
    if (!info) throw Error("png_create_info_struct failed");
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_packing(png);
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    const int color_type = png_get_color_type(png, info);
    const bool has_alpha = (color_type & PNG_COLOR_MASK_ALPHA) != 0;
    const int colour_channels = has_alpha ? channels - 1 : channels;
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    out = Raster(height, width);
    for (int y = 0; y < height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < width; ++x) {
        bool fg = false;
        for (int c = 0; c < colour_channels; ++c) fg = fg || row[x * channels + c] != 0;
        out.at(y, x) = fg ? 1 : 0;
      }
    }
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_gray(const std::filesystem::path& path, const Raster& r) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error("cannot write " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, file.get());
    write_png(png, info, r, false, {});
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> encode_png_indexed(const Raster& r,
                                             const std::vector<std::uint8_t>& palette_rgb) {
  std::vector<std::uint8_t> bytes;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(
        png, &bytes,
        [](png_structp p, png_bytep data, png_size_t length) {
          auto* sink = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
          sink->insert(sink->end(), data, data + length);
        },
        [](png_structp) {});
    write_png(png, info, r, true, palette_rgb);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return bytes;
}

void write_png_indexed(const std::filesystem::path& path, const Raster& r,
                       const std::vector<std::uint8_t>& palette_rgb) {
  const auto bytes = encode_png_indexed(r, palette_rgb);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace opal
