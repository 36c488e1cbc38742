#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "deepcfl/error.hpp"

namespace deepcfl {

/// Spatial extent of an image or feature map.
struct Dims {
  int height = 0;
  int width = 0;

  friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(Dims d) {
  return std::to_string(d.height) + "x" + std::to_string(d.width);
}

/// Allocator with a fixed 64-byte alignment. Vectorized kernels choose their
/// code path from the data address, so a fixed alignment keeps floating-point
/// results independent of where a buffer happens to land.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

/// Contiguous numeric buffer used for tensors, parameters and gradients.
template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense channel-major (C x H x W) tensor for a single sample.
template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T(0))
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {
    if (channels < 0 || height < 0 || width < 0)
      throw ShapeError("negative tensor extent");
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  Dims dims() const { return {height_, width_}; }
  std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  Buffer<T>& storage() { return data_; }
  const Buffer<T>& storage() const { return data_; }

  T* channel(int c) { return data_.data() + c * plane(); }
  const T* channel(int c) const { return data_.data() + c * plane(); }

  T& operator()(int c, int y, int x) { return data_[(c * plane()) + static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int c, int y, int x) const {
    return data_[(c * plane()) + static_cast<std::size_t>(y) * width_ + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(*this, o, "tensor +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(channels_, height_, width_);
    std::transform(data_.begin(), data_.end(), out.storage().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
      throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() +
                       " vs " + b.shape_string());
  }

  std::string shape_string() const {
    return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
  }

private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  Buffer<T> data_;
};

}  // namespace deepcfl
