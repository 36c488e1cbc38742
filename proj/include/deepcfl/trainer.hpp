#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deepcfl/archive.hpp"
#include "deepcfl/backbone.hpp"
#include "deepcfl/config.hpp"
#include "deepcfl/error.hpp"
#include "deepcfl/image.hpp"
#include "deepcfl/losses.hpp"
#include "deepcfl/masking.hpp"
#include "deepcfl/networks.hpp"
#include "deepcfl/objective.hpp"
#include "deepcfl/optim.hpp"
#include "deepcfl/rng.hpp"

namespace deepcfl {

/// Raised when a loss turns NaN/Inf; carries the iteration and the offending breakdown.
class TrainingAborted : public NumericError {
public:
  TrainingAborted(int iteration, const LossTerms& terms, const std::string& why)
      : NumericError(describe(iteration, terms, why)), iteration_(iteration), terms_(terms) {}

  int iteration() const { return iteration_; }
  const LossTerms& terms() const { return terms_; }

private:
  static std::string describe(int it, const LossTerms& t, const std::string& why) {
    std::ostringstream os;
    os << "training aborted at iteration " << it << ": " << why << " (cal_g=" << t.cal_g << " cal_d=" << t.cal_d
       << " cvl=" << t.cvl << " rl=" << t.rl << ")";
    return os.str();
  }

  int iteration_;
  LossTerms terms_;
};

inline Dims resize_target(Dims source, double factor_x, double factor_y) {
  return {static_cast<int>(std::lround(source.height * factor_y)),
          static_cast<int>(std::lround(source.width * factor_x))};
}

/// Points inside Trainer::step() reported to an observer.
enum class StepPhase { discriminator_updated, generator_updated };

/// Per-image alternating optimisation of generator and discriminator.
///
/// Each iteration runs one discriminator step on (phi(x) real, phi(G(x)) fake)
/// followed by one generator step on the total loss. Everything that
/// influences the trajectory is part of the serialized state, so
/// save/load/continue reproduces an uninterrupted run bit for bit.
template <typename T = float>
class Trainer {
public:
  using BackbonePtr = std::shared_ptr<const Backbone<T>>;

  /// Restore task: `source` is the corrupted image x, `mask` its known-pixel map.
  Trainer(const RunConfig& config, BackbonePtr backbone, const Image& source, const Mask& mask)
      : Trainer(config, std::move(backbone), source, mask, source.dims()) {
    if (config_.task == Task::resize) throw ConfigError("use Trainer::for_resize for the resize task");
  }

  /// Resize task: no mask; output dims are the source dims scaled by the config factors.
  static Trainer for_resize(const RunConfig& config, BackbonePtr backbone, const Image& source) {
    RunConfig c = validate_config(config);
    if (c.task != Task::resize) throw ConfigError("for_resize requires task resize");
    const Dims target = resize_target(source.dims(), c.resize_factor_x, c.resize_factor_y);
    Generator<T>::check_target(target);
    return Trainer(c, std::move(backbone), source, Mask(source.height(), source.width()), target);
  }

  /// Rebuilds a trainer from a saved state (config, inputs and all optimisation state).
  static Trainer from_archive(const Archive& a, BackbonePtr backbone) {
    RunConfig c = parse_config(a.header);
    const auto& px = a.array<float>("input.source");
    const auto& dims = a.array<double>("input.dims");
    if (dims.size() != 4) throw FormatError("corrupt state: input.dims");
    Tensor<float> t(3, static_cast<int>(dims[0]), static_cast<int>(dims[1]));
    if (px.size() != t.size()) throw FormatError("corrupt state: input.source size");
    std::copy(px.begin(), px.end(), t.storage().begin());
    const std::string& bits = a.blob("input.mask");
    Mask m(t.height(), t.width());
    if (bits.size() != m.size()) throw FormatError("corrupt state: input.mask size");
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x) m.set(y, x, bits[static_cast<std::size_t>(y) * m.width() + x] != 0);
    const Dims target{static_cast<int>(dims[2]), static_cast<int>(dims[3])};
    Trainer tr(c, std::move(backbone), Image::from_tensor(std::move(t)), m, target);
    tr.load_state(a);
    return tr;
  }

  const RunConfig& config() const { return config_; }
  int iteration() const { return iteration_; }
  const std::vector<LossBreakdown>& trace() const { return trace_; }
  Dims output_dims() const { return target_; }
  const Mask& mask() const { return mask_; }
  const Image& source() const { return source_; }
  int best_iteration() const { return best_iteration_; }
  double best_tl() const { return best_tl_; }

  std::uint64_t generator_checksum() const { return checksum(generator_.params()); }
  std::uint64_t discriminator_checksum() const { return checksum(discriminator_.params()); }

  /// Called right after each optimizer update (testing and progress hooks).
  void set_observer(std::function<void(StepPhase)> f) { observer_ = std::move(f); }

  Generator<T>& generator() { return generator_; }
  Discriminator<T>& discriminator() { return discriminator_; }

  /// One discriminator step followed by one generator step.
  void step() {
    typename Generator<T>::Pass gpass;
    const Tensor<T> y = generator_.forward(input_, target_, &gpass);
    Tensor<T> grad_y(y.channels(), y.height(), y.width());

    Objective<T> obj = objective();
    obj.on_fake_field = [this](const Tensor<T>& fake_field) { return discriminator_step(fake_field); };
    LossTerms terms = obj.features(y, &grad_y);

    clear(ggrads_);
    if (config_.task == Task::resize) {
      typename Generator<T>::Pass cycle_pass;
      const Tensor<T> back = generator_.forward(network_input(y), source_.dims(), &cycle_pass);
      Tensor<T> gback;
      terms.rl = mse_loss(back, source_tensor_, &gback);
      gback *= static_cast<T>(config_.lambda_cyc);
      const Tensor<T> gin = generator_.backward(gback, cycle_pass, ggrads_);
      add_rgb(grad_y, gin);
    } else {
      reconstruction_term(terms, y, source_tensor_, mask_tensor_, config_.loss_weights.lambda_R, &grad_y);
    }

    LossBreakdown b;
    try {
      b = total_loss(terms, effective_weights());
    } catch (const NumericError& e) {
      throw TrainingAborted(iteration_, terms, e.what());
    }
    if (!grad_y.all_finite()) throw TrainingAborted(iteration_, terms, "non-finite generator gradient");

    generator_.backward(grad_y, gpass, ggrads_);
    if (b.tl < best_tl_) {
      best_tl_ = b.tl;
      best_iteration_ = iteration_;
      best_params_ = snapshot(generator_.params());
    }
    gen_opt_.step(generator_.params(), ggrads_);
    if (observer_) observer_(StepPhase::generator_updated);
    trace_.push_back(b);
    ++iteration_;
  }

  /// Runs until `iteration() == total`.
  void run_until(int total) {
    while (iteration_ < total) step();
  }

  void run() { run_until(config_.iterations); }

  /// Current generator output at the output dims.
  Tensor<T> output_tensor() const { return generator_.forward(input_, target_); }

  /// Output of the lowest-tl snapshot (the current one if no step ran yet).
  Tensor<T> best_output_tensor() const {
    if (best_params_.empty()) return output_tensor();
    Generator<T> g = make_generator();
    auto ps = g.params();
    for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->value = best_params_[k];
    return g.forward(input_, target_);
  }

  /// Final image per config: best snapshot iff emit_best, composited iff composite_output.
  Image result() const {
    Image raw = Image::clamped((config_.emit_best ? best_output_tensor() : output_tensor()).template cast<float>());
    if (config_.composite_output && config_.task != Task::resize) return composite(raw, source_, mask_);
    return raw;
  }

  Image raw_output() const { return Image::clamped(output_tensor().template cast<float>()); }

  // ---- state ------------------------------------------------------------

  Archive save_state() const {
    Archive a;
    a.header = to_json(config_).dump();
    a.f64["input.dims"] = {static_cast<double>(source_.height()), static_cast<double>(source_.width()),
                           static_cast<double>(target_.height), static_cast<double>(target_.width)};
    a.f32["input.source"].assign(source_.tensor().storage().begin(), source_.tensor().storage().end());
    a.bytes["input.mask"] = std::string(mask_.bits().begin(), mask_.bits().end());
    a.f64["state.iteration"] = {static_cast<double>(iteration_)};
    a.f64["state.best"] = {best_tl_, static_cast<double>(best_iteration_)};
    a.bytes["state.rng"] = rng_.state();
    auto gp = const_cast<Generator<T>&>(generator_).params();
    auto dp = const_cast<Discriminator<T>&>(discriminator_).params();
    for (auto* p : gp) a.template arrays<T>()[p->name].assign(p->value.begin(), p->value.end());
    for (auto* p : dp) a.template arrays<T>()[p->name].assign(p->value.begin(), p->value.end());
    for (std::size_t k = 0; k < best_params_.size(); ++k) a.template arrays<T>()["best." + gp[k]->name].assign(best_params_[k].begin(), best_params_[k].end());
    gen_opt_.save(a, "adam.gen", gp);
    disc_opt_.save(a, "adam.disc", dp);
    std::vector<double> flat;
    flat.reserve(trace_.size() * 6);
    for (const auto& r : trace_) flat.insert(flat.end(), {r.tl, r.cfl, r.cal_g, r.cal_d, r.cvl, r.rl});
    a.f64["state.trace"] = std::move(flat);
    return a;
  }

  void save_state(const std::string& path) const { save_state().save(path); }

private:
  Trainer(const RunConfig& config, BackbonePtr backbone, const Image& source, const Mask& mask, Dims target)
      : config_(validate_config(config)),
        backbone_(std::move(backbone)),
        source_(source),
        mask_(mask),
        target_(target),
        rng_(config_.seed),
        gen_seed_(rng_.next()),
        disc_seed_(rng_.next()),
        generator_(make_generator()),
        discriminator_(Backbone<T>::layer_channels(config_.cx_layer), config_.discriminator_scales, disc_seed_),
        gen_opt_(generator_.params(), config_.lr_G, config_.beta1_G, config_.beta2_G),
        disc_opt_(discriminator_.params(), config_.lr_D, config_.beta1_D, config_.beta2_D),
        ggrads_(zero_grads(generator_.params())),
        dgrads_(zero_grads(discriminator_.params())) {
    if (!backbone_) throw ConfigError("trainer needs a backbone");
    require_same_dims(source_.dims(), mask_.dims(), "trainer");
    source_tensor_ = source_.tensor().template cast<T>();
    mask_tensor_ = mask_tensor<T>(mask_);
    input_ = network_input(source_tensor_);
    if (feature_branch()) {
      phi_x_ = backbone_->forward(source_tensor_, layers());
      discriminator_.check_field(phi_x_.at(config_.cx_layer).dims());
      discriminator_.check_field(Backbone<T>::layer_dims(config_.cx_layer, target_));
      if (config_.cvl_exclude_masked) source_keep_ = known_locations();
    }
  }

  Generator<T> make_generator() const { return Generator<T>(gen_seed_, config_.mask_channel ? 4 : 3); }

  bool feature_branch() const { return objective().feature_branch(); }

  /// Generator objective bound to the current discriminator (without the discriminator-step hook).
  Objective<T> objective() const {
    Objective<T> o;
    o.backbone = backbone_.get();
    o.discriminator = &discriminator_;
    o.phi_x = &phi_x_;
    o.layer = config_.cx_layer;
    o.weights = config_.loss_weights;
    o.cx = cx_params();
    o.source_keep = config_.cvl_exclude_masked ? &source_keep_ : nullptr;
    return o;
  }

  LossWeights effective_weights() const {
    LossWeights w = config_.loss_weights;
    if (config_.task == Task::resize) w.lambda_R = config_.lambda_cyc;
    return w;
  }

  std::vector<std::string> layers() const { return {config_.cx_layer}; }
  CxParams cx_params() const { return {config_.cx_bandwidth, config_.cx_epsilon}; }

  /// Image (plus mask channel when enabled) as generator input.
  Tensor<T> network_input(const Tensor<T>& rgb) const {
    if (!config_.mask_channel) return rgb;
    Tensor<T> in(4, rgb.height(), rgb.width());
    std::copy(rgb.values().begin(), rgb.values().end(), in.storage().begin());
    const bool same = rgb.dims() == mask_.dims();
    for (int y = 0; y < rgb.height(); ++y)
      for (int x = 0; x < rgb.width(); ++x) in(3, y, x) = (!same || mask_.known(y, x)) ? T(1) : T(0);
    return in;
  }

  static void add_rgb(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Feature locations whose whole pixel footprint is known.
  std::map<std::string, std::vector<std::uint8_t>> known_locations() const {
    std::map<std::string, std::vector<std::uint8_t>> out;
    for (const auto& id : layers()) {
      const Dims fd = phi_x_.at(id).dims();
      std::vector<std::uint8_t> keep(static_cast<std::size_t>(fd.height) * fd.width, 1);
      for (int fy = 0; fy < fd.height; ++fy)
        for (int fx = 0; fx < fd.width; ++fx) {
          const int y0 = fy * mask_.height() / fd.height, y1 = (fy + 1) * mask_.height() / fd.height;
          const int x0 = fx * mask_.width() / fd.width, x1 = (fx + 1) * mask_.width() / fd.width;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
              if (!mask_.known(y, x)) keep[static_cast<std::size_t>(fy) * fd.width + fx] = 0;
        }
      out[id] = std::move(keep);
    }
    return out;
  }

  /// Discriminator update on (phi(x) real, phi(G(x)) fake); returns cal_d.
  double discriminator_step(const Tensor<T>& fake_field) {
    typename Discriminator<T>::Pass real_pass, fake_pass;
    const auto real = discriminator_.forward(phi_x_.at(config_.cx_layer), &real_pass);
    const auto fake = discriminator_.forward(fake_field, &fake_pass);
    std::vector<Tensor<T>> greal, gfake;
    const double loss = cal_discriminator_loss(real, fake, &greal, &gfake);
    if (!std::isfinite(loss)) {
      LossTerms t;
      t.cal_d = loss;
      throw TrainingAborted(iteration_, t, "non-finite discriminator loss");
    }
    clear(dgrads_);
    discriminator_.backward(greal, real_pass, dgrads_);
    discriminator_.backward(gfake, fake_pass, dgrads_);
    disc_opt_.step(discriminator_.params(), dgrads_);
    if (observer_) observer_(StepPhase::discriminator_updated);
    return loss;
  }

  static std::vector<Buffer<T>> snapshot(const std::vector<Param<T>*>& ps) {
    std::vector<Buffer<T>> s;
    s.reserve(ps.size());
    for (auto* p : ps) s.push_back(p->value);
    return s;
  }

  static std::uint64_t checksum(const std::vector<const Param<T>*>& ps) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto* p : ps) h = fnv1a_values<T>(p->value, h);
    return h;
  }

  void load_state(const Archive& a) {
    iteration_ = static_cast<int>(a.array<double>("state.iteration").at(0));
    const auto& best = a.array<double>("state.best");
    if (best.size() != 2) throw FormatError("corrupt state: state.best");
    best_tl_ = best[0];
    best_iteration_ = static_cast<int>(best[1]);
    rng_.restore(a.blob("state.rng"));
    auto gp = generator_.params();
    auto dp = discriminator_.params();
    auto load_into = [&](Param<T>* p, const std::string& key) {
      const auto& v = a.template array<T>(key);
      if (v.size() != p->value.size()) throw FormatError("corrupt state: size mismatch for " + key);
      p->value.assign(v.begin(), v.end());
    };
    for (auto* p : gp) load_into(p, p->name);
    for (auto* p : dp) load_into(p, p->name);
    best_params_.clear();
    if (best_iteration_ >= 0)
      for (auto* p : gp) {
        const auto& v = a.template array<T>("best." + p->name);
        best_params_.emplace_back(v.begin(), v.end());
      }
    gen_opt_.load(a, "adam.gen", gp);
    disc_opt_.load(a, "adam.disc", dp);
    const auto& flat = a.array<double>("state.trace");
    if (flat.size() != static_cast<std::size_t>(iteration_) * 6) throw FormatError("corrupt state: trace length");
    trace_.clear();
    for (std::size_t i = 0; i < flat.size(); i += 6)
      trace_.push_back({flat[i], flat[i + 1], flat[i + 2], flat[i + 3], flat[i + 4], flat[i + 5]});
  }

  RunConfig config_;
  BackbonePtr backbone_;
  Image source_;
  Mask mask_;
  Dims target_;
  Rng rng_;
  std::uint64_t gen_seed_;
  std::uint64_t disc_seed_;
  Generator<T> generator_;
  Discriminator<T> discriminator_;
  Adam<T> gen_opt_;
  Adam<T> disc_opt_;
  Grads<T> ggrads_;
  Grads<T> dgrads_;

  Tensor<T> source_tensor_;
  Tensor<T> mask_tensor_;
  Tensor<T> input_;
  ContextField<T> phi_x_;
  std::map<std::string, std::vector<std::uint8_t>> source_keep_;

  int iteration_ = 0;
  std::vector<LossBreakdown> trace_;
  double best_tl_ = std::numeric_limits<double>::infinity();
  int best_iteration_ = -1;
  std::vector<Buffer<T>> best_params_;
  std::function<void(StepPhase)> observer_;
};

}  // namespace deepcfl
