#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "deepcfl/error.hpp"
#include "deepcfl/image.hpp"
#include "deepcfl/image_io.hpp"
#include "deepcfl/rng.hpp"

namespace deepcfl {

/// Zeroes the leftmost and rightmost k = round(width * fraction / 2) columns.
inline Mask make_outpaint_mask(int height, int width, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("outpaint fraction out of range (0,1)");
  const long k = std::lround(width * fraction / 2.0);
  if (k < 1) throw ConfigError("degenerate outpaint mask: no column removed at fraction " + std::to_string(fraction));
  if (2 * k >= width) throw ConfigError("degenerate outpaint mask: every column removed");
  Mask m(height, width, 1, MaskKind::outpaint);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (x < k || x >= width - k) m.set(y, x, false);
  return m;
}

/// Zeroes exactly round(H * W * r / 100) pixels chosen without replacement.
inline Mask make_random_mask(int height, int width, double r_percent, std::uint64_t seed) {
  if (!(r_percent > 0.0 && r_percent < 100.0)) throw ConfigError("random removal percentage out of range (0,100)");
  const std::size_t total = static_cast<std::size_t>(height) * width;
  const auto zeros = static_cast<std::size_t>(std::llround(static_cast<double>(total) * r_percent / 100.0));
  std::vector<std::uint32_t> order(total);
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(seed);
  // Partial Fisher-Yates: the first `zeros` slots are a uniform sample.
  for (std::size_t i = 0; i < zeros; ++i) {
    const std::size_t j = i + rng.below(total - i);
    std::swap(order[i], order[j]);
  }
  Mask m(height, width, 1, MaskKind::random);
  for (std::size_t i = 0; i < zeros; ++i) m.set(order[i] / width, order[i] % width, false);
  return m;
}

/// Binarizes a single-channel raster: intensity < 0.5 is missing.
inline Mask mask_from_raster(const Tensor<float>& raster, MaskKind kind = MaskKind::file) {
  if (raster.channels() != 1) throw ShapeError("mask raster must be single-channel");
  Mask m(raster.height(), raster.width(), 1, kind);
  for (int y = 0; y < raster.height(); ++y)
    for (int x = 0; x < raster.width(); ++x) m.set(y, x, raster(0, y, x) >= 0.5f);
  return m;
}

inline Mask check_mask(Mask m, Dims expected, const std::string& what,
                       std::vector<std::string>* warnings) {
  if (!(m.dims() == expected))
    throw ShapeError(what + ": mask dimension mismatch, got " + to_string(m.dims()) + ", expected " +
                     to_string(expected));
  if (m.ones() == 0) {
    const std::string w = what + ": no known pixels";
    if (warnings) warnings->push_back(w);
    else std::cerr << "warning: " << w << "\n";
  }
  return m;
}

/// Loads a mask PNG (black = missing). Warnings go to `warnings` when given, else stderr.
inline Mask load_mask(const std::string& path, Dims expected, MaskKind kind = MaskKind::file,
                      std::vector<std::string>* warnings = nullptr) {
  return check_mask(mask_from_raster(read_png_gray(path), kind), expected, path, warnings);
}

inline void save_mask(const std::string& path, const Mask& m) {
  Tensor<float> t(1, m.height(), m.width());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) t(0, y, x) = m.known(y, x) ? 1.0f : 0.0f;
  write_png(path, t);
}

inline void require_same_dims(Dims a, Dims b, const char* what) {
  if (!(a == b))
    throw ShapeError(std::string(what) + ": dimension mismatch " + to_string(a) + " vs " + to_string(b));
}

/// x = I (*) m: known pixels kept, missing pixels set to 0.
inline Image corrupt(const Image& image, const Mask& mask) {
  require_same_dims(image.dims(), mask.dims(), "corrupt");
  Tensor<float> t = image.tensor();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x)
        if (!mask.known(y, x)) t(c, y, x) = 0.0f;
  return Image::from_tensor(std::move(t));
}

/// source (*) m + restored (*) (1 - m).
inline Image composite(const Image& restored, const Image& source, const Mask& mask) {
  require_same_dims(restored.dims(), source.dims(), "composite");
  require_same_dims(source.dims(), mask.dims(), "composite");
  Tensor<float> t = restored.tensor();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x)
        if (mask.known(y, x)) t(c, y, x) = source(c, y, x);
  return Image::from_tensor(std::move(t));
}

/// Mask as a 1 x H x W tensor of 0/1 values.
template <typename T>
Tensor<T> mask_tensor(const Mask& m) {
  Tensor<T> t(1, m.height(), m.width());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) t(0, y, x) = m.known(y, x) ? T(1) : T(0);
  return t;
}

}  // namespace deepcfl
