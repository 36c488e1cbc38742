#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deepcfl/backbone.hpp"
#include "deepcfl/config.hpp"
#include "deepcfl/losses.hpp"
#include "deepcfl/networks.hpp"

namespace deepcfl {

/// The generator's objective as a function of its output y.
///
/// Holds non-owning references to the frozen backbone, the current
/// discriminator and the source context field phi(x).
template <typename T>
struct Objective {
  const Backbone<T>* backbone = nullptr;
  const Discriminator<T>* discriminator = nullptr;
  const ContextField<T>* phi_x = nullptr;
  std::string layer = "conv4_2";
  LossWeights weights;
  CxParams cx;
  const std::map<std::string, std::vector<std::uint8_t>>* source_keep = nullptr;
  /// Called with phi_l(y) before the discriminator scores it; returns cal_d.
  std::function<double(const Tensor<T>&)> on_fake_field;

  bool feature_branch() const { return weights.lambda_G > 0.0 && (use_cal() || use_cvl()); }
  bool use_cal() const { return weights.lambda_G > 0.0 && weights.lambda_cal > 0.0; }
  bool use_cvl() const { return weights.lambda_G > 0.0 && weights.lambda_cvl > 0.0; }

  /// cal_g, cvl (and cal_d from the hook) at y. Adds d(lambda_G * cfl)/dy into `grad_y` when given.
  LossTerms features(const Tensor<T>& y, Tensor<T>* grad_y) const {
    LossTerms terms;
    if (!feature_branch()) return terms;
    const std::vector<std::string> ids{layer};
    typename Backbone<T>::Pass bpass;
    const ContextField<T> phi_y = backbone->forward(y, ids, grad_y ? &bpass : nullptr);
    const Tensor<T>& fake_field = phi_y.at(layer);
    std::map<std::string, Tensor<T>> grad_phi;

    if (use_cal()) {
      if (on_fake_field) terms.cal_d = on_fake_field(fake_field);
      typename Discriminator<T>::Pass dpass;
      const auto fake = discriminator->forward(fake_field, grad_y ? &dpass : nullptr);
      std::vector<Tensor<T>> gmap;
      terms.cal_g = cal_generator_loss(fake, grad_y ? &gmap : nullptr);
      if (grad_y) {
        for (auto& g : gmap) g *= static_cast<T>(weights.lambda_G * weights.lambda_cal);
        grad_phi[layer] = discriminator->backward(gmap, dpass, {});
      }
    }
    if (use_cvl()) {
      std::map<std::string, Tensor<T>> gcvl;
      terms.cvl = cvl_loss(*phi_x, phi_y, ids, cx, grad_y ? &gcvl : nullptr, source_keep);
      for (auto& [id, g] : gcvl) {
        g *= static_cast<T>(weights.lambda_G * weights.lambda_cvl);
        auto it = grad_phi.find(id);
        if (it == grad_phi.end()) grad_phi.emplace(id, std::move(g));
        else it->second += g;
      }
    }
    if (grad_y) *grad_y += backbone->backward(grad_phi, bpass);
    return terms;
  }
};

/// Sets terms.rl to the masked reconstruction error; adds lambda_R * d rl / dy into `grad_y` when given.
template <typename T>
void reconstruction_term(LossTerms& terms, const Tensor<T>& y, const Tensor<T>& corrupted, const Tensor<T>& mask,
                         double lambda_R, Tensor<T>* grad_y) {
  Tensor<T> g;
  terms.rl = rl_loss(y, corrupted, mask, grad_y ? &g : nullptr);
  if (grad_y) {
    g *= static_cast<T>(lambda_R);
    *grad_y += g;
  }
}

/// Full restore-task objective at y; `grad_y` (if given) must be zero-initialised with y's shape.
template <typename T>
LossBreakdown restore_objective(const Objective<T>& obj, const Tensor<T>& y, const Tensor<T>& corrupted,
                                const Tensor<T>& mask, Tensor<T>* grad_y) {
  LossTerms terms = obj.features(y, grad_y);
  reconstruction_term(terms, y, corrupted, mask, obj.weights.lambda_R, grad_y);
  return total_loss(terms, obj.weights);
}

}  // namespace deepcfl
