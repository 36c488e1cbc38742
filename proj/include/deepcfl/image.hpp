#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "deepcfl/error.hpp"
#include "deepcfl/tensor.hpp"

namespace deepcfl {

inline constexpr int kMinImageSide = 32;

/// H x W x 3 image with values in [0,1]; the unit of all I/O and restoration.
class Image {
public:
  Image() = default;

  Image(int height, int width, float fill = 0.0f) : pixels_(3, height, width, fill) {
    check_extent(dims());
    check_range(fill);
  }

  /// Wraps a 3-channel tensor; throws if any value is non-finite or outside [0,1].
  static Image from_tensor(Tensor<float> t) {
    if (t.channels() != 3)
      throw ShapeError("image must have 3 channels, got " + std::to_string(t.channels()));
    check_extent(t.dims());
    for (float v : t.values()) check_range(v);
    Image img;
    img.pixels_ = std::move(t);
    return img;
  }

  /// Clamps to [0,1] instead of rejecting; used on network outputs.
  static Image clamped(Tensor<float> t) {
    for (auto& v : t.storage()) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
    return from_tensor(std::move(t));
  }

  int height() const { return pixels_.height(); }
  int width() const { return pixels_.width(); }
  Dims dims() const { return pixels_.dims(); }
  const Tensor<float>& tensor() const { return pixels_; }

  float operator()(int c, int y, int x) const { return pixels_(c, y, x); }
  void set(int c, int y, int x, float v) {
    check_range(v);
    pixels_(c, y, x) = v;
  }

  friend bool operator==(const Image&, const Image&) = default;

  static void check_extent(Dims d) {
    if (d.height < kMinImageSide || d.width < kMinImageSide)
      throw ShapeError("image " + to_string(d) + " is below the minimum side of " +
                       std::to_string(kMinImageSide) + " px");
  }

private:
  static void check_range(float v) {
    if (!(v >= 0.0f && v <= 1.0f))
      throw ShapeError("image value outside [0,1]: " + std::to_string(v));
  }

  Tensor<float> pixels_;
};

enum class MaskKind { outpaint, random, file, wordcloud_file, none };

inline const char* to_string(MaskKind k) {
  switch (k) {
    case MaskKind::outpaint: return "outpaint";
    case MaskKind::random: return "random";
    case MaskKind::file: return "file";
    case MaskKind::wordcloud_file: return "wordcloud-file";
    case MaskKind::none: return "none";
  }
  return "none";
}

/// Binary H x W field, 1 = known pixel, 0 = missing.
class Mask {
public:
  Mask() = default;
  Mask(int height, int width, std::uint8_t fill = 1, MaskKind kind = MaskKind::none)
      : dims_{height, width}, kind_(kind),
        bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
    if (height <= 0 || width <= 0) throw ShapeError("mask extent must be positive");
  }

  int height() const { return dims_.height; }
  int width() const { return dims_.width; }
  Dims dims() const { return dims_; }
  MaskKind kind() const { return kind_; }
  void set_kind(MaskKind k) { kind_ = k; }

  bool known(int y, int x) const { return bits_[index(y, x)] != 0; }
  std::uint8_t operator()(int y, int x) const { return bits_[index(y, x)]; }
  void set(int y, int x, bool known) { bits_[index(y, x)] = known ? 1 : 0; }

  const std::vector<std::uint8_t>& bits() const { return bits_; }

  std::size_t size() const { return bits_.size(); }
  std::size_t zeros() const {
    std::size_t n = 0;
    for (auto b : bits_) n += (b == 0);
    return n;
  }
  std::size_t ones() const { return size() - zeros(); }
  double zero_fraction() const { return static_cast<double>(zeros()) / static_cast<double>(size()); }

  /// Elementwise AND; a pixel is known only if known in both masks.
  Mask operator&(const Mask& o) const {
    if (!(dims_ == o.dims_)) throw ShapeError("mask AND: dimension mismatch");
    Mask out(*this);
    for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] & o.bits_[i];
    return out;
  }

  friend bool operator==(const Mask& a, const Mask& b) {
    return a.dims_ == b.dims_ && a.bits_ == b.bits_;
  }

private:
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * dims_.width + x; }

  Dims dims_;
  MaskKind kind_ = MaskKind::none;
  std::vector<std::uint8_t> bits_;
};

}  // namespace deepcfl
