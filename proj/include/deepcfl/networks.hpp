#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "deepcfl/error.hpp"
#include "deepcfl/image.hpp"
#include "deepcfl/layers.hpp"
#include "deepcfl/rng.hpp"
#include "deepcfl/tensor.hpp"

namespace deepcfl {

inline constexpr int kGeneratorDepth = 5;
inline constexpr double kLeakySlope = 0.2;

inline int ceil_half(int n) { return (n + 1) / 2; }

/// Encoder-decoder without skip connections.
///
/// Encoder stage: 3x3 stride-2 conv, context normalization, leaky ReLU.
/// Decoder stage: nearest resize, 3x3 conv, context normalization, leaky ReLU.
/// Head: 1x1 conv to RGB followed by a sigmoid.
///
/// Decoder stage k resizes to ceil(target / 2^(4-k)), so the last stage lands
/// exactly on the requested output dims; for restore tasks that equals the
/// input dims and each resize is an exact 2x nearest upsample of the mirrored
/// encoder extent.
template <typename T>
class Generator {
public:
  static constexpr std::array<int, kGeneratorDepth> kWidths{32, 64, 128, 256, 256};

  explicit Generator(std::uint64_t seed, int in_channels = 3) : in_channels_(in_channels) {
    Rng rng(seed);
    int c = in_channels;
    for (int i = 0; i < kGeneratorDepth; ++i) {
      const std::string n = "gen.enc" + std::to_string(i + 1);
      encoder_.template add<Conv2d<T>>(n + ".conv", c, kWidths[i], 3, 2, 1, false, rng);
      encoder_.template add<ContextNorm<T>>(n + ".norm", kWidths[i]);
      encoder_.template add<LeakyRelu<T>>(static_cast<T>(kLeakySlope));
      c = kWidths[i];
    }
    for (int i = 0; i < kGeneratorDepth; ++i) {
      // Mirrored widths: 256, 128, 64, 32, 32.
      const int out = i + 1 < kGeneratorDepth ? kWidths[kGeneratorDepth - 2 - i] : kWidths[0];
      const std::string n = "gen.dec" + std::to_string(i + 1);
      Sequential<T> stage;
      stage.template add<Conv2d<T>>(n + ".conv", c, out, 3, 1, 1, false, rng);
      stage.template add<ContextNorm<T>>(n + ".norm", out);
      stage.template add<LeakyRelu<T>>(static_cast<T>(kLeakySlope));
      decoder_.push_back(std::move(stage));
      c = out;
    }
    head_.template add<Conv2d<T>>("gen.head.conv", c, 3, 1, 1, 0, true, rng);
    head_.template add<Sigmoid<T>>();
  }

  int in_channels() const { return in_channels_; }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out = encoder_.params();
    for (auto& s : decoder_)
      for (auto* p : s.params()) out.push_back(p);
    for (auto* p : head_.params()) out.push_back(p);
    return out;
  }

  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> out;
    for (auto* p : const_cast<Generator*>(this)->params()) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : params()) n += p->value.size();
    return n;
  }

  /// Decoder stage output dims for a requested output size.
  static std::array<Dims, kGeneratorDepth> decoder_dims(Dims target) {
    std::array<Dims, kGeneratorDepth> d;
    d[kGeneratorDepth - 1] = target;
    for (int k = kGeneratorDepth - 2; k >= 0; --k)
      d[k] = {ceil_half(d[k + 1].height), ceil_half(d[k + 1].width)};
    return d;
  }

  static void check_target(Dims target) {
    if (target.height < kMinImageSide || target.width < kMinImageSide) {
      const Dims nearest{std::max(target.height, kMinImageSide), std::max(target.width, kMinImageSide)};
      throw ShapeError("target dims " + to_string(target) + " not producible by the upsampling schedule; nearest valid dims: " +
                       to_string(nearest));
    }
  }

  struct Pass {
    Trace<T> encoder;
    std::array<Trace<T>, kGeneratorDepth> decoder;
    std::array<Dims, kGeneratorDepth> resize_from;
    Trace<T> head;
    Dims input_dims;
  };

  Tensor<T> forward(const Tensor<T>& x, Dims target, Pass* pass = nullptr) const {
    if (x.channels() != in_channels_)
      throw ShapeError("generator expects " + std::to_string(in_channels_) + " input channels");
    if (x.height() < kMinImageSide || x.width() < kMinImageSide)
      throw ShapeError("generator input " + to_string(x.dims()) + " below minimum side");
    check_target(target);
    const auto dd = decoder_dims(target);
    Tensor<T> h = encoder_.forward(x, pass ? &pass->encoder : nullptr);
    for (int k = 0; k < kGeneratorDepth; ++k) {
      if (pass) pass->resize_from[k] = h.dims();
      h = decoder_[k].forward(resize_nearest(h, dd[k]), pass ? &pass->decoder[k] : nullptr);
    }
    if (pass) pass->input_dims = x.dims();
    return head_.forward(h, pass ? &pass->head : nullptr);
  }

  /// Accumulates parameter gradients into `grads` (parallel to params()) and returns d/d input.
  Tensor<T> backward(const Tensor<T>& grad_out, const Pass& pass, std::span<Buffer<T>> grads) const {
    std::size_t offset = encoder_.params().size();
    std::array<std::size_t, kGeneratorDepth + 1> dec_off{};
    for (int k = 0; k < kGeneratorDepth; ++k) {
      dec_off[k] = offset;
      offset += decoder_[k].params().size();
    }
    dec_off[kGeneratorDepth] = offset;
    auto slot = [&](std::size_t b, std::size_t e) {
      return grads.empty() ? std::span<Buffer<T>>{} : grads.subspan(b, e - b);
    };
    Tensor<T> g = head_.backward(grad_out, pass.head, slot(offset, offset + head_.params().size()));
    for (int k = kGeneratorDepth - 1; k >= 0; --k) {
      g = decoder_[k].backward(g, pass.decoder[k], slot(dec_off[k], dec_off[k + 1]));
      g = resize_nearest_backward(g, pass.resize_from[k]);
    }
    return encoder_.backward(g, pass.encoder, slot(0, dec_off[0]));
  }

private:
  int in_channels_;
  Sequential<T> encoder_;
  std::vector<Sequential<T>> decoder_;
  Sequential<T> head_;
};

/// Per-scale raw (no sigmoid) least-squares scores and their mixing weights.
template <typename T>
struct DiscriminatorMap {
  std::vector<Tensor<T>> maps;
  std::vector<T> weights;

  std::size_t scales() const { return maps.size(); }
};

/// Multi-scale discriminator over context-vector fields.
///
/// Scale s (1-based) average-pools the field by 2^(s-1) and scores it with an
/// independent 3-layer convolutional scorer (stride-2 conv, conv, 1-channel
/// conv). Scale weights are uniform. One instance scores both real and fake
/// fields.
template <typename T>
class Discriminator {
public:
  static constexpr int kHidden1 = 256;
  static constexpr int kHidden2 = 128;
  /// Smallest field side accepted at the coarsest scale.
  static constexpr int kMinFieldSide = 2;

  Discriminator(int in_channels, int scales, std::uint64_t seed) : in_channels_(in_channels) {
    if (scales < 1) throw ConfigError("discriminator_scales must be >= 1");
    Rng rng(seed);
    for (int s = 0; s < scales; ++s) {
      const std::string n = "disc.s" + std::to_string(s + 1);
      Sequential<T> net;
      net.template add<Conv2d<T>>(n + ".conv1", in_channels, kHidden1, 3, 2, 1, true, rng);
      net.template add<LeakyRelu<T>>(static_cast<T>(kLeakySlope));
      net.template add<Conv2d<T>>(n + ".conv2", kHidden1, kHidden2, 3, 1, 1, true, rng);
      net.template add<LeakyRelu<T>>(static_cast<T>(kLeakySlope));
      net.template add<Conv2d<T>>(n + ".conv3", kHidden2, 1, 3, 1, 1, true, rng);
      scorers_.push_back(std::move(net));
    }
  }

  int scales() const { return static_cast<int>(scorers_.size()); }
  int in_channels() const { return in_channels_; }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& s : scorers_)
      for (auto* p : s.params()) out.push_back(p);
    return out;
  }

  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> out;
    for (auto* p : const_cast<Discriminator*>(this)->params()) out.push_back(p);
    return out;
  }

  void check_field(Dims d) const {
    int h = d.height, w = d.width;
    for (int s = 1; s < scales(); ++s) {
      h /= 2;
      w /= 2;
    }
    if (h < kMinFieldSide || w < kMinFieldSide)
      throw ShapeError("context field " + to_string(d) + " too small for " + std::to_string(scales()) +
                       " discriminator scales; reduce discriminator_scales");
  }

  struct Pass {
    std::vector<Trace<T>> pools;
    std::vector<Trace<T>> scorers;
  };

  DiscriminatorMap<T> forward(const Tensor<T>& field, Pass* pass = nullptr) const {
    if (field.channels() != in_channels_)
      throw ShapeError("discriminator expects " + std::to_string(in_channels_) + "-channel context vectors, got " +
                       std::to_string(field.channels()));
    check_field(field.dims());
    DiscriminatorMap<T> out;
    if (pass) {
      pass->pools.assign(scales(), {});
      pass->scorers.assign(scales(), {});
    }
    Tensor<T> x = field;
    for (int s = 0; s < scales(); ++s) {
      if (s > 0) {
        LayerCache<T>* cache = nullptr;
        if (pass) {
          pass->pools[s].caches.assign(1, {});
          cache = &pass->pools[s].caches[0];
        }
        x = pool_.forward(x, cache);
      }
      out.maps.push_back(scorers_[s].forward(x, pass ? &pass->scorers[s] : nullptr));
      out.weights.push_back(T(1) / static_cast<T>(scales()));
    }
    return out;
  }

  /// d loss / d field from per-scale score gradients; accumulates into `grads` unless empty.
  Tensor<T> backward(const std::vector<Tensor<T>>& grad_maps, const Pass& pass, std::span<Buffer<T>> grads) const {
    std::vector<std::size_t> off(scales() + 1, 0);
    for (int s = 0; s < scales(); ++s) off[s + 1] = off[s] + scorers_[s].params().size();
    Tensor<T> carry;
    for (int s = scales() - 1; s >= 0; --s) {
      auto slot = grads.empty() ? std::span<Buffer<T>>{} : grads.subspan(off[s], off[s + 1] - off[s]);
      Tensor<T> g = scorers_[s].backward(grad_maps[s], pass.scorers[s], slot);
      if (!carry.empty()) g += carry;
      carry = s > 0 ? pool_.backward(g, pass.pools[s].caches[0], {}) : std::move(g);
    }
    return carry;
  }

private:
  int in_channels_;
  std::vector<Sequential<T>> scorers_;
  AvgPool2<T> pool_;
};

}  // namespace deepcfl
