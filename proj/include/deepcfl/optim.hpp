#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "deepcfl/archive.hpp"
#include "deepcfl/layers.hpp"

namespace deepcfl {

/// Adaptive-moment gradient descent over a fixed parameter list.
template <typename T>
class Adam {
public:
  Adam(const std::vector<Param<T>*>& params, double lr, double beta1, double beta2, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(zero_grads(params)), v_(zero_grads(params)) {}

  long long steps() const { return t_; }

  void step(const std::vector<Param<T>*>& params, const Grads<T>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T step = static_cast<T>(lr_ / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(eps_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k]->value;
      const auto& g = grads[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        p[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  void save(Archive& a, const std::string& prefix, const std::vector<Param<T>*>& params) const {
    a.f64[prefix + ".t"] = {static_cast<double>(t_)};
    for (std::size_t k = 0; k < params.size(); ++k) {
      a.template arrays<T>()[prefix + ".m." + params[k]->name].assign(m_[k].begin(), m_[k].end());
      a.template arrays<T>()[prefix + ".v." + params[k]->name].assign(v_[k].begin(), v_[k].end());
    }
  }

  void load(const Archive& a, const std::string& prefix, const std::vector<Param<T>*>& params) {
    t_ = static_cast<long long>(a.array<double>(prefix + ".t").at(0));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& m = a.template array<T>(prefix + ".m." + params[k]->name);
      const auto& v = a.template array<T>(prefix + ".v." + params[k]->name);
      m_[k].assign(m.begin(), m.end());
      v_[k].assign(v.begin(), v.end());
      if (m_[k].size() != params[k]->value.size() || v_[k].size() != params[k]->value.size())
        throw FormatError("optimizer state size mismatch for " + params[k]->name);
    }
  }

private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  Grads<T> m_;
  Grads<T> v_;
};

}  // namespace deepcfl
