#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "deepcfl/error.hpp"
#include "deepcfl/image.hpp"
#include "deepcfl/masking.hpp"

namespace deepcfl {

/// PSNR cap returned for identical images.
inline constexpr double kPsnrCap = 100.0;

inline double mse(const Image& a, const Image& b) {
  require_same_dims(a.dims(), b.dims(), "mse");
  const auto& x = a.tensor();
  const auto& y = b.tensor();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(x.size());
}

/// 10 log10(1 / MSE) in dB for data range 1, capped at kPsnrCap.
inline double psnr_from_mse(double m) {
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

/// SSIM settings: 11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, range 1.
/// Borders use reflect-101 padding so the map covers every pixel; the map is
/// averaged over the three channels.
struct SsimParams {
  static constexpr int kWindow = 11;
  static constexpr double kSigma = 1.5;
  static constexpr double kK1 = 0.01;
  static constexpr double kK2 = 0.03;
  static constexpr double kRange = 1.0;
};

namespace detail {

inline std::array<double, SsimParams::kWindow> gaussian_window() {
  std::array<double, SsimParams::kWindow> w{};
  const int r = SsimParams::kWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < SsimParams::kWindow; ++i) {
    const double x = i - r;
    w[i] = std::exp(-x * x / (2.0 * SsimParams::kSigma * SsimParams::kSigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

inline int reflect101(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

/// Separable Gaussian blur of an H x W plane.
inline std::vector<double> blur(const std::vector<double>& src, int h, int w) {
  static const auto k = gaussian_window();
  const int r = SsimParams::kWindow / 2;
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * src[static_cast<std::size_t>(y) * w + reflect101(x + i, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[static_cast<std::size_t>(reflect101(y + i, h)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = s;
    }
  return out;
}

}  // namespace detail

/// Per-pixel SSIM map (H x W, row-major), channel-averaged.
inline std::vector<double> ssim_map(const Image& a, const Image& b) {
  require_same_dims(a.dims(), b.dims(), "ssim");
  const int h = a.height(), w = a.width();
  if (h < SsimParams::kWindow || w < SsimParams::kWindow) throw ShapeError("ssim: image smaller than the 11x11 window");
  const double c1 = std::pow(SsimParams::kK1 * SsimParams::kRange, 2);
  const double c2 = std::pow(SsimParams::kK2 * SsimParams::kRange, 2);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> map(n, 0.0);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.tensor().channel(c)[i];
      y[i] = b.tensor().channel(c)[i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::blur(x, h, w), my = detail::blur(y, h, w);
    const auto sxx = detail::blur(xx, h, w), syy = detail::blur(yy, h, w), sxy = detail::blur(xy, h, w);
    for (std::size_t i = 0; i < n; ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cxy = sxy[i] - mx[i] * my[i];
      const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2);
      const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
      map[i] += num / den;
    }
  }
  for (auto& v : map) v /= 3.0;
  return map;
}

inline double ssim(const Image& a, const Image& b) {
  const auto map = ssim_map(a, b);
  double sum = 0.0;
  for (double v : map) sum += v;
  return sum / static_cast<double>(map.size());
}

/// SSIM map averaged over the restored region (mask == 0) only.
inline double masked_ssim(const Image& a, const Image& b, const Mask& mask) {
  require_same_dims(a.dims(), mask.dims(), "masked_ssim");
  if (mask.zeros() == 0) throw ShapeError("masked_ssim: empty evaluation region (mask has no missing pixels)");
  const auto map = ssim_map(a, b);
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (!mask.known(y, x)) {
        sum += map[static_cast<std::size_t>(y) * mask.width() + x];
        ++n;
      }
  return sum / static_cast<double>(n);
}

}  // namespace deepcfl
