#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "deepcfl/error.hpp"
#include "deepcfl/image.hpp"
#include "deepcfl/tensor.hpp"

namespace deepcfl {

// 8-bit PNG in and out. Values map to [0,1] by v / 255 and back by
// round(v * 255), so a write/read cycle of any 8-bit image is exact.

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline Tensor<float> read_png(const std::string& path, bool gray) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<std::uint8_t> buffer;
  std::vector<png_bytep> rows;
  int width = 0, height = 0, channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool src_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (gray && !src_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (!gray && src_gray) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const int out_c = gray ? 1 : 3;
  if (channels != out_c) throw IoError("unexpected channel layout in " + path);
  Tensor<float> t(out_c, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < out_c; ++c)
        t(c, y, x) = static_cast<float>(rows[y][x * out_c + c]) / 255.0f;
  return t;
}

}  // namespace detail

/// Reads any 8-bit/16-bit PNG as RGB in [0,1]; gray sources are replicated.
inline Tensor<float> read_png_rgb(const std::string& path) { return detail::read_png(path, false); }

/// Reads a PNG as a single channel in [0,1]; colour sources are converted to luminance.
inline Tensor<float> read_png_gray(const std::string& path) { return detail::read_png(path, true); }

inline Image load_image(const std::string& path) { return Image::from_tensor(read_png_rgb(path)); }

inline std::uint8_t to_byte(float v) {
  const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Writes a 1- or 3-channel tensor as an 8-bit PNG.
inline void write_png(const std::string& path, const Tensor<float>& t) {
  if (t.channels() != 1 && t.channels() != 3) throw ShapeError("PNG output needs 1 or 3 channels");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write image " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  const int c = t.channels();
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(t.height()) * t.width() * c);
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      for (int k = 0; k < c; ++k)
        buffer[(static_cast<std::size_t>(y) * t.width() + x) * c + k] = to_byte(t(k, y, x));
  std::vector<png_bytep> rows(t.height());
  for (int y = 0; y < t.height(); ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * t.width() * c;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, t.width(), t.height(), 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void save_image(const std::string& path, const Image& img) { write_png(path, img.tensor()); }

/// Quantizes to the 8-bit grid, as a PNG round trip would.
inline Image quantize8(const Image& img) {
  Tensor<float> t = img.tensor();
  for (auto& v : t.storage()) v = static_cast<float>(to_byte(v)) / 255.0f;
  return Image::from_tensor(std::move(t));
}

}  // namespace deepcfl
