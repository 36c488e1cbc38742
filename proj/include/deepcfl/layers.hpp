#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepcfl/error.hpp"
#include "deepcfl/rng.hpp"
#include "deepcfl/tensor.hpp"

namespace deepcfl {

/// Named trainable (or frozen) parameter array.
template <typename T>
struct Param {
  std::string name;
  Buffer<T> value;
};

/// Per-parameter gradient arrays, parallel to a module's params() list.
template <typename T>
using Grads = std::vector<Buffer<T>>;

template <typename T>
Grads<T> zero_grads(const std::vector<Param<T>*>& params) {
  Grads<T> g;
  g.reserve(params.size());
  for (const auto* p : params) g.emplace_back(p->value.size(), T(0));
  return g;
}

template <typename T>
void clear(Grads<T>& g) {
  for (auto& v : g) std::fill(v.begin(), v.end(), T(0));
}

/// Values a layer keeps from forward() for its backward().
template <typename T>
struct LayerCache {
  Tensor<T> saved;
  std::vector<T> aux;
  std::vector<int> index;
  int in_channels = 0;
  Dims in_dims;
};

/// A differentiable op. forward/backward are const: parameters are only
/// changed by an optimizer, gradients are accumulated into caller buffers.
template <typename T>
class Layer {
public:
  virtual ~Layer() = default;

  /// `cache` may be null for inference-only passes.
  virtual Tensor<T> forward(const Tensor<T>& in, LayerCache<T>* cache) const = 0;

  /// Returns dL/d(input); accumulates into `grads` (one slot per param) unless empty.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, const LayerCache<T>& cache,
                             std::span<Buffer<T>> grads) const = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  virtual Dims output_dims(Dims in) const { return in; }
  virtual int output_channels(int in_channels) const { return in_channels; }
};

enum class Init {
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
  fan_in_uniform,
  /// N(0, 2/fan_in) weights, zero bias.
  he_normal,
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

}  // namespace detail

template <typename T>
class Conv2d final : public Layer<T> {
public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int pad,
         bool bias, Rng& rng, Init init = Init::fan_in_uniform)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias) {
    const int fan_in = in_channels * kernel * kernel;
    weight_.name = name + ".weight";
    weight_.value.resize(static_cast<std::size_t>(out_channels) * fan_in);
    if (init == Init::he_normal) {
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& w : weight_.value) w = static_cast<T>(sd * rng.normal());
    } else {
      const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& w : weight_.value) w = static_cast<T>(rng.uniform(-b, b));
    }
    if (has_bias_) {
      bias_.name = name + ".bias";
      bias_.value.assign(out_channels, T(0));
      if (init == Init::fan_in_uniform) {
        const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : bias_.value) v = static_cast<T>(rng.uniform(-b, b));
      }
    }
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  Dims output_dims(Dims in) const override {
    return {(in.height + 2 * pad_ - k_) / stride_ + 1, (in.width + 2 * pad_ - k_) / stride_ + 1};
  }
  int output_channels(int) const override { return out_; }

  std::vector<Param<T>*> params() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }

  Tensor<T> forward(const Tensor<T>& in, LayerCache<T>* cache) const override {
    if (in.channels() != in_)
      throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                       std::to_string(in.channels()));
    const Dims od = output_dims(in.dims());
    if (od.height <= 0 || od.width <= 0) throw ShapeError(weight_.name + ": input too small " + in.shape_string());
    Tensor<T> out(out_, od.height, od.width);
    const int kk = in_ * k_ * k_;
    const auto p = static_cast<Eigen::Index>(out.plane());
    detail::ConstMatMap<T> w(weight_.value.data(), out_, kk);
    detail::MatMap<T> o(out.data(), out_, p);
    if (is_pointwise()) {
      o.noalias() = w * detail::ConstMatMap<T>(in.data(), in_, p);
    } else {
      Buffer<T> col = im2col(in, od);
      o.noalias() = w * detail::ConstMatMap<T>(col.data(), kk, p);
    }
    if (has_bias_)
      for (int c = 0; c < out_; ++c) o.row(c).array() += bias_.value[c];
    if (cache) cache->saved = in;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const LayerCache<T>& cache,
                     std::span<Buffer<T>> grads) const override {
    const Tensor<T>& in = cache.saved;
    const Dims od = grad_out.dims();
    const int kk = in_ * k_ * k_;
    const auto p = static_cast<Eigen::Index>(grad_out.plane());
    detail::ConstMatMap<T> g(grad_out.data(), out_, p);
    detail::ConstMatMap<T> w(weight_.value.data(), out_, kk);

    Buffer<T> col;
    if (!grads.empty()) {
      detail::MatMap<T> gw(grads[0].data(), out_, kk);
      if (is_pointwise()) {
        gw.noalias() += g * detail::ConstMatMap<T>(in.data(), in_, p).transpose();
      } else {
        col = im2col(in, od);
        gw.noalias() += g * detail::ConstMatMap<T>(col.data(), kk, p).transpose();
      }
      if (has_bias_)
        for (int c = 0; c < out_; ++c) grads[1][c] += g.row(c).sum();
    }

    Tensor<T> grad_in(in_, in.height(), in.width());
    if (is_pointwise()) {
      detail::MatMap<T>(grad_in.data(), in_, p).noalias() = w.transpose() * g;
      return grad_in;
    }
    col.resize(static_cast<std::size_t>(kk) * p);
    detail::MatMap<T>(col.data(), kk, p).noalias() = w.transpose() * g;
    col2im(col, od, grad_in);
    return grad_in;
  }

private:
  bool is_pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  Buffer<T> im2col(const Tensor<T>& in, Dims od) const {
    const int h = in.height(), w = in.width();
    const std::size_t p = static_cast<std::size_t>(od.height) * od.width;
    Buffer<T> col(static_cast<std::size_t>(in_) * k_ * k_ * p);
    T* dst = col.data();
    for (int c = 0; c < in_; ++c) {
      const T* src = in.channel(c);
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          for (int oy = 0; oy < od.height; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            T* row = dst + static_cast<std::size_t>(oy) * od.width;
            if (iy < 0 || iy >= h) {
              std::fill(row, row + od.width, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < od.width; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              row[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
            }
          }
          dst += p;
        }
    }
    return col;
  }

  void col2im(const Buffer<T>& col, Dims od, Tensor<T>& out) const {
    const int h = out.height(), w = out.width();
    const std::size_t p = static_cast<std::size_t>(od.height) * od.width;
    const T* src = col.data();
    for (int c = 0; c < in_; ++c) {
      T* dst = out.channel(c);
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          for (int oy = 0; oy < od.height; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            const T* row = src + static_cast<std::size_t>(oy) * od.width;
            T* drow = dst + static_cast<std::size_t>(iy) * w;
            for (int ox = 0; ox < od.width; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < w) drow[ix] += row[ox];
            }
          }
          src += p;
        }
    }
  }

  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Param<T> weight_;
  Param<T> bias_;
};

/// Per-channel spatial mean/variance normalization with learned affine.
template <typename T>
class ContextNorm final : public Layer<T> {
public:
  ContextNorm(std::string name, int channels, T eps = T(1e-5)) : channels_(channels), eps_(eps) {
    gamma_.name = name + ".gamma";
    gamma_.value.assign(channels, T(1));
    beta_.name = name + ".beta";
    beta_.value.assign(channels, T(0));
  }

  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }

  Tensor<T> forward(const Tensor<T>& in, LayerCache<T>* cache) const override {
    if (in.channels() != channels_) throw ShapeError(gamma_.name + ": channel mismatch");
    Tensor<T> out(in.channels(), in.height(), in.width());
    Tensor<T> xhat;
    if (cache) {
      xhat = Tensor<T>(in.channels(), in.height(), in.width());
      cache->aux.assign(channels_, T(0));
    }
    const std::size_t n = in.plane();
    for (int c = 0; c < channels_; ++c) {
      const T* x = in.channel(c);
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
      var /= static_cast<double>(n);
      const T inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
      const T m = static_cast<T>(mean);
      T* y = out.channel(c);
      for (std::size_t i = 0; i < n; ++i) {
        const T xh = (x[i] - m) * inv_std;
        y[i] = gamma_.value[c] * xh + beta_.value[c];
        if (cache) xhat.channel(c)[i] = xh;
      }
      if (cache) cache->aux[c] = inv_std;
    }
    if (cache) cache->saved = std::move(xhat);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const LayerCache<T>& cache,
                     std::span<Buffer<T>> grads) const override {
    const Tensor<T>& xhat = cache.saved;
    Tensor<T> grad_in(xhat.channels(), xhat.height(), xhat.width());
    const std::size_t n = xhat.plane();
    for (int c = 0; c < channels_; ++c) {
      const T* g = grad_out.channel(c);
      const T* xh = xhat.channel(c);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
      if (!grads.empty()) {
        grads[0][c] += static_cast<T>(sum_gx);
        grads[1][c] += static_cast<T>(sum_g);
      }
      const T scale = gamma_.value[c] * cache.aux[c];
      const T mg = static_cast<T>(sum_g / static_cast<double>(n));
      const T mgx = static_cast<T>(sum_gx / static_cast<double>(n));
      T* d = grad_in.channel(c);
      for (std::size_t i = 0; i < n; ++i) d[i] = scale * (g[i] - mg - xh[i] * mgx);
    }
    return grad_in;
  }

private:
  int channels_;
  T eps_;
  Param<T> gamma_;
  Param<T> beta_;
};

template <typename T>
class LeakyRelu final : public Layer<T> {
public:
  explicit LeakyRelu(T slope) : slope_(slope) {}

  Tensor<T> forward(const Tensor<T>& in, LayerCache<T>* cache) const override {
    Tensor<T> out = in;
    for (auto& v : out.storage()) v = v > T(0) ? v : slope_ * v;
    if (cache) cache->saved = out;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const LayerCache<T>& cache,
                     std::span<Buffer<T>>) const override {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(cache.saved[i] > T(0))) g[i] *= slope_;
    return g;
  }

private:
  T slope_;
};

template <typename T>
class Relu final : public Layer<T> {
public:
  Tensor<T> forward(const Tensor<T>& in, LayerCache<T>* cache) const override {
    Tensor<T> out = in;
    for (auto& v : out.storage()) v = std::max(v, T(0));
    if (cache) cache->saved = out;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const LayerCache<T>& cache,
                     std::span<Buffer<T>>) const override {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(cache.saved[i] > T(0))) g[i] = T(0);
    return g;
  }
};

template <typename T>
class Sigmoid final : public Layer<T> {
public:
  Tensor<T> forward(const Tensor<T>& in, LayerCache<T>* cache) const override {
    Tensor<T> out = in;
    for (auto& v : out.storage()) v = T(1) / (T(1) + std::exp(-v));
    if (cache) cache->saved = out;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const LayerCache<T>& cache,
                     std::span<Buffer<T>>) const override {
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= cache.saved[i] * (T(1) - cache.saved[i]);
    return g;
  }
};

/// 2x2 stride-2 max pooling (floor on odd extents).
template <typename T>
class MaxPool2 final : public Layer<T> {
public:
  Dims output_dims(Dims in) const override { return {in.height / 2, in.width / 2}; }

  Tensor<T> forward(const Tensor<T>& in, LayerCache<T>* cache) const override {
    const Dims od = output_dims(in.dims());
    if (od.height == 0 || od.width == 0) throw ShapeError("max pool: input too small " + in.shape_string());
    Tensor<T> out(in.channels(), od.height, od.width);
    if (cache) {
      cache->index.resize(out.size());
      cache->in_channels = in.channels();
      cache->in_dims = in.dims();
    }
    std::size_t o = 0;
    for (int c = 0; c < in.channels(); ++c)
      for (int y = 0; y < od.height; ++y)
        for (int x = 0; x < od.width; ++x, ++o) {
          int best = (2 * y) * in.width() + 2 * x;
          const T* ch = in.channel(c);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int idx = (2 * y + dy) * in.width() + 2 * x + dx;
              if (ch[idx] > ch[best]) best = idx;
            }
          out[o] = ch[best];
          if (cache) cache->index[o] = best;
        }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const LayerCache<T>& cache,
                     std::span<Buffer<T>>) const override {
    Tensor<T> g(cache.in_channels, cache.in_dims.height, cache.in_dims.width);
    const std::size_t per = grad_out.plane();
    for (std::size_t o = 0; o < grad_out.size(); ++o) {
      const int c = static_cast<int>(o / per);
      g.channel(c)[cache.index[o]] += grad_out[o];
    }
    return g;
  }
};

/// 2x2 stride-2 average pooling (floor on odd extents).
template <typename T>
class AvgPool2 final : public Layer<T> {
public:
  Dims output_dims(Dims in) const override { return {in.height / 2, in.width / 2}; }

  Tensor<T> forward(const Tensor<T>& in, LayerCache<T>* cache) const override {
    const Dims od = output_dims(in.dims());
    if (od.height == 0 || od.width == 0) throw ShapeError("avg pool: input too small " + in.shape_string());
    Tensor<T> out(in.channels(), od.height, od.width);
    for (int c = 0; c < in.channels(); ++c)
      for (int y = 0; y < od.height; ++y)
        for (int x = 0; x < od.width; ++x)
          out(c, y, x) = T(0.25) * (in(c, 2 * y, 2 * x) + in(c, 2 * y, 2 * x + 1) +
                                    in(c, 2 * y + 1, 2 * x) + in(c, 2 * y + 1, 2 * x + 1));
    if (cache) cache->in_dims = in.dims();
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out, const LayerCache<T>& cache,
                     std::span<Buffer<T>>) const override {
    Tensor<T> g(grad_out.channels(), cache.in_dims.height, cache.in_dims.width);
    for (int c = 0; c < grad_out.channels(); ++c)
      for (int y = 0; y < grad_out.height(); ++y)
        for (int x = 0; x < grad_out.width(); ++x) {
          const T v = T(0.25) * grad_out(c, y, x);
          g(c, 2 * y, 2 * x) += v;
          g(c, 2 * y, 2 * x + 1) += v;
          g(c, 2 * y + 1, 2 * x) += v;
          g(c, 2 * y + 1, 2 * x + 1) += v;
        }
    return g;
  }
};

/// Nearest-neighbour resize to arbitrary target extents.
/// Output (y, x) reads input (floor(y * H_in / H_out), floor(x * W_in / W_out)).
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& in, Dims target) {
  Tensor<T> out(in.channels(), target.height, target.width);
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < target.height; ++y) {
      const int sy = static_cast<int>(static_cast<long long>(y) * in.height() / target.height);
      for (int x = 0; x < target.width; ++x) {
        const int sx = static_cast<int>(static_cast<long long>(x) * in.width() / target.width);
        out(c, y, x) = in(c, sy, sx);
      }
    }
  return out;
}

template <typename T>
Tensor<T> resize_nearest_backward(const Tensor<T>& grad_out, Dims source) {
  Tensor<T> g(grad_out.channels(), source.height, source.width);
  for (int c = 0; c < grad_out.channels(); ++c)
    for (int y = 0; y < grad_out.height(); ++y) {
      const int sy = static_cast<int>(static_cast<long long>(y) * source.height / grad_out.height());
      for (int x = 0; x < grad_out.width(); ++x) {
        const int sx = static_cast<int>(static_cast<long long>(x) * source.width / grad_out.width());
        g(c, sy, sx) += grad_out(c, y, x);
      }
    }
  return g;
}

/// Forward record of a Sequential pass.
template <typename T>
struct Trace {
  std::vector<LayerCache<T>> caches;
};

template <typename T>
class Sequential {
public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> out;
    for (auto* p : const_cast<Sequential*>(this)->params()) out.push_back(p);
    return out;
  }

  Dims output_dims(Dims in) const {
    for (const auto& l : layers_) in = l->output_dims(in);
    return in;
  }

  Tensor<T> forward(const Tensor<T>& in, Trace<T>* trace) const {
    if (trace) trace->caches.assign(layers_.size(), {});
    Tensor<T> x = in;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      x = layers_[i]->forward(x, trace ? &trace->caches[i] : nullptr);
    return x;
  }

  /// `grads` is either empty or holds one slot per entry of params().
  Tensor<T> backward(const Tensor<T>& grad_out, const Trace<T>& trace, std::span<Buffer<T>> grads) const {
    std::vector<std::size_t> offset(layers_.size() + 1, 0);
    for (std::size_t i = 0; i < layers_.size(); ++i)
      offset[i + 1] = offset[i] + layers_[i]->params().size();
    Tensor<T> g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      auto slot = grads.empty() ? std::span<Buffer<T>>{}
                                : grads.subspan(offset[i], offset[i + 1] - offset[i]);
      g = layers_[i]->backward(g, trace.caches[i], slot);
    }
    return g;
  }

private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace deepcfl
