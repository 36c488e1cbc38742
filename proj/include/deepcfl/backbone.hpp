#pragma once

#include <array>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "deepcfl/archive.hpp"
#include "deepcfl/error.hpp"
#include "deepcfl/layers.hpp"
#include "deepcfl/tensor.hpp"

namespace deepcfl {

/// Context vectors: named feature maps phi_l(image) of the frozen backbone.
template <typename T>
struct ContextField {
  std::map<std::string, Tensor<T>> layers;
  Dims source_dims;

  const Tensor<T>& at(const std::string& id) const {
    auto it = layers.find(id);
    if (it == layers.end()) throw ShapeError("context field has no layer " + id);
    return it->second;
  }
};

/// Env var naming the directory that holds the converted backbone weights.
inline constexpr const char* kWeightsEnv = "DEEPCFL_WEIGHTS_DIR";
inline constexpr const char* kWeightsFile = "vgg19_features.bin";
inline constexpr const char* kBackboneKind = "vgg19-features";

/// Resolves a backbone source spec to a weights path ("seeded:<n>" is returned as is).
inline std::string resolve_backbone_source(const std::string& spec) {
  if (!spec.empty()) return spec;
  if (const char* dir = std::getenv(kWeightsEnv); dir && *dir)
    return (std::filesystem::path(dir) / kWeightsFile).string();
  if (const char* home = std::getenv("HOME"); home && *home)
    return (std::filesystem::path(home) / ".cache" / "deepcfl" / kWeightsFile).string();
  return kWeightsFile;
}

/// VGG19 convolutional trunk with frozen weights.
///
/// Layer ids are "convB_K" (block B, conv K) and name the rectified output of
/// that convolution. Inputs are images in [0,1]; the ImageNet per-channel
/// mean/std standardization is applied internally.
template <typename T>
class Backbone {
public:
  struct ConvSpec {
    const char* name;
    int in;
    int out;
    bool pool_before;
  };

  static constexpr std::array<ConvSpec, 16> kConvs{{
      {"conv1_1", 3, 64, false},    {"conv1_2", 64, 64, false},   {"conv2_1", 64, 128, true},
      {"conv2_2", 128, 128, false}, {"conv3_1", 128, 256, true},  {"conv3_2", 256, 256, false},
      {"conv3_3", 256, 256, false}, {"conv3_4", 256, 256, false}, {"conv4_1", 256, 512, true},
      {"conv4_2", 512, 512, false}, {"conv4_3", 512, 512, false}, {"conv4_4", 512, 512, false},
      {"conv5_1", 512, 512, true},  {"conv5_2", 512, 512, false}, {"conv5_3", 512, 512, false},
      {"conv5_4", 512, 512, false},
  }};

  static constexpr std::array<float, 3> kMean{0.485f, 0.456f, 0.406f};
  static constexpr std::array<float, 3> kStd{0.229f, 0.224f, 0.225f};

  /// Deterministic He-initialised weights; a stand-in when no trained weights are available.
  static Backbone seeded(std::uint64_t seed) {
    Backbone b;
    Rng rng(seed);
    b.build(rng);
    b.source_ = "seeded:" + std::to_string(seed);
    return b;
  }

  static Backbone from_archive(const Archive& a, const std::string& origin) {
    Backbone b;
    Rng rng(0);
    b.build(rng);
    for (Param<T>* p : b.net_.params()) {
      const auto& src = a.array<float>(p->name);
      if (src.size() != p->value.size())
        throw FormatError(origin + ": parameter " + p->name + " has " + std::to_string(src.size()) +
                          " values, expected " + std::to_string(p->value.size()));
      for (std::size_t i = 0; i < src.size(); ++i) p->value[i] = static_cast<T>(src[i]);
    }
    b.source_ = origin;
    return b;
  }

  /// Loads from "seeded:<n>", a weights file path, or (empty spec) the weights cache.
  static Backbone load(const std::string& spec) {
    const std::string src = resolve_backbone_source(spec);
    if (src.rfind("seeded:", 0) == 0) {
      try {
        return seeded(std::stoull(src.substr(7)));
      } catch (const std::logic_error&) {
        throw ConfigError("bad seeded backbone spec '" + src + "'");
      }
    }
    if (!std::filesystem::exists(src))
      throw IoError("backbone weights unavailable: " + src + " not found (set " + kWeightsEnv +
                    " or convert weights with tools/export_vgg19_weights.py)");
    return from_archive(Archive::load(src), src);
  }

  Archive to_archive() const {
    Archive a;
    a.header = std::string("{\"kind\":\"") + kBackboneKind + "\"}";
    for (const Param<T>* p : net_.params())
      a.f32[p->name] = std::vector<float>(p->value.begin(), p->value.end());
    return a;
  }

  const std::string& source() const { return source_; }

  static bool has_layer(const std::string& id) {
    for (const auto& c : kConvs)
      if (id == c.name) return true;
    return false;
  }

  static int layer_channels(const std::string& id) {
    for (const auto& c : kConvs)
      if (id == c.name) return c.out;
    throw ConfigError("unknown backbone layer '" + id + "'");
  }

  /// Spatial dims of a layer's output for a given input size.
  static Dims layer_dims(const std::string& id, Dims in) {
    for (const auto& c : kConvs) {
      if (c.pool_before) in = {in.height / 2, in.width / 2};
      if (id == c.name) return in;
    }
    throw ConfigError("unknown backbone layer '" + id + "'");
  }

  /// Checksum over every parameter; unchanged by any number of forward/backward passes.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Param<T>* p : net_.params()) h = fnv1a_values<T>(p->value, h);
    return h;
  }

  struct Pass {
    Trace<T> trace;
    std::size_t depth = 0;
    std::map<std::string, std::size_t> taps;
  };

  /// phi(image) at the requested layers. With `pass`, records what backward() needs.
  ContextField<T> forward(const Tensor<T>& image, const std::vector<std::string>& layer_ids, Pass* pass = nullptr) const {
    if (image.channels() != 3) throw ShapeError("backbone expects a 3-channel image");
    if (layer_ids.empty()) throw ConfigError("no backbone layer requested");
    std::map<std::string, std::size_t> taps;
    std::size_t depth = 0;
    for (const auto& id : layer_ids) {
      auto it = tap_index_.find(id);
      if (it == tap_index_.end()) throw ConfigError("unknown backbone layer '" + id + "'");
      taps[id] = it->second;
      depth = std::max(depth, it->second + 1);
    }
    Tensor<T> x = standardize(image);
    ContextField<T> field;
    field.source_dims = image.dims();
    if (pass) {
      pass->trace.caches.assign(depth, {});
      pass->depth = depth;
      pass->taps = taps;
    }
    for (std::size_t i = 0; i < depth; ++i) {
      x = net_.layer(i).forward(x, pass ? &pass->trace.caches[i] : nullptr);
      for (const auto& [id, idx] : taps)
        if (idx == i) field.layers[id] = x;
    }
    return field;
  }

  /// d loss / d image, given d loss / d phi_l for each tapped layer. Weights receive no update.
  Tensor<T> backward(const std::map<std::string, Tensor<T>>& grad_layers, const Pass& pass) const {
    Tensor<T> g;
    for (std::size_t i = pass.depth; i-- > 0;) {
      for (const auto& [id, idx] : pass.taps) {
        if (idx != i) continue;
        auto it = grad_layers.find(id);
        if (it == grad_layers.end()) continue;
        if (g.empty()) g = it->second;
        else g += it->second;
      }
      if (g.empty()) continue;
      g = net_.layer(i).backward(g, pass.trace.caches[i], {});
    }
    if (g.empty()) throw ShapeError("backbone backward: no gradient supplied for any tapped layer");
    for (int c = 0; c < 3; ++c) {
      const T s = T(1) / static_cast<T>(kStd[c]);
      T* ch = g.channel(c);
      for (std::size_t i = 0; i < g.plane(); ++i) ch[i] *= s;
    }
    return g;
  }

  std::vector<const Param<T>*> params() const { return net_.params(); }

private:
  Backbone() = default;

  void build(Rng& rng) {
    for (const auto& c : kConvs) {
      if (c.pool_before) net_.template add<MaxPool2<T>>();
      net_.template add<Conv2d<T>>(c.name, c.in, c.out, 3, 1, 1, true, rng, Init::he_normal);
      net_.template add<Relu<T>>();
      tap_index_[c.name] = net_.size() - 1;
    }
  }

  static Tensor<T> standardize(const Tensor<T>& image) {
    Tensor<T> x = image;
    for (int c = 0; c < 3; ++c) {
      const T m = static_cast<T>(kMean[c]);
      const T s = T(1) / static_cast<T>(kStd[c]);
      T* ch = x.channel(c);
      for (std::size_t i = 0; i < x.plane(); ++i) ch[i] = (ch[i] - m) * s;
    }
    return x;
  }

  Sequential<T> net_;
  std::map<std::string, std::size_t> tap_index_;
  std::string source_;
};

}  // namespace deepcfl
