#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "deepcfl/backbone.hpp"
#include "deepcfl/config.hpp"
#include "deepcfl/error.hpp"
#include "deepcfl/networks.hpp"
#include "deepcfl/tensor.hpp"

namespace deepcfl {

/// One row of the loss trace.
struct LossBreakdown {
  double tl = 0.0;
  double cfl = 0.0;
  double cal_g = 0.0;
  double cal_d = 0.0;
  double cvl = 0.0;
  double rl = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

/// Component values fed to total_loss.
struct LossTerms {
  double cal_g = 0.0;
  double cal_d = 0.0;
  double cvl = 0.0;
  double rl = 0.0;
};

/// Composes tl = lambda_G * (lambda_cal * cal_g + lambda_cvl * cvl) + lambda_R * rl.
/// cal_d is carried along for reporting only.
inline LossBreakdown total_loss(const LossTerms& t, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {{"cal_g", t.cal_g}, {"cal_d", t.cal_d}, {"cvl", t.cvl}, {"rl", t.rl}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component ") + name);
  LossBreakdown b;
  b.cal_g = t.cal_g;
  b.cal_d = t.cal_d;
  b.cvl = t.cvl;
  b.rl = t.rl;
  b.cfl = w.lambda_cal * t.cal_g + w.lambda_cvl * t.cvl;
  b.tl = w.lambda_G * b.cfl + w.lambda_R * t.rl;
  return b;
}

// ---------------------------------------------------------------------------
// Contextual similarity

/// Column-per-vector feature set (C rows, one column per spatial location).
using FeatureSet = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;

/// Cosine distance assigned to pairs involving a zero-norm (after centering) vector.
inline constexpr double kMaxCosineDistance = 2.0;

/// Contextual similarity CX(source, target) in (0, 1].
///
/// Both sets are centred on the source mean. With cosine distances d_ij
/// (source i, target j):
///   d~_ij  = d_ij / (min_k d_ik + eps)
///   w_ij   = exp((1 - d~_ij) / h)
///   CX_ij  = w_ij / sum_k w_ik
///   CX     = mean_j max_i CX_ij
/// When `grad_target` is given it receives dCX / d target (same shape as target);
/// the source set is treated as a constant.
inline double cx_similarity(const FeatureSet& source, const FeatureSet& target, double h, double eps,
                            FeatureSet* grad_target = nullptr) {
  if (source.cols() == 0 || target.cols() == 0) throw ShapeError("cx_similarity: empty feature set");
  if (source.rows() != target.rows()) throw ShapeError("cx_similarity: channel mismatch");
  if (!(h > 0.0) || !(eps > 0.0)) throw ConfigError("cx_similarity: h and eps must be > 0");
  const Eigen::Index ns = source.cols(), nt = target.cols();

  const Eigen::VectorXd mu = source.rowwise().mean();
  FeatureSet xs = source.colwise() - mu;
  FeatureSet yt = target.colwise() - mu;
  Eigen::VectorXd nx = xs.colwise().norm().transpose();
  Eigen::VectorXd ny = yt.colwise().norm().transpose();
  constexpr double tiny = 1e-12;
  for (Eigen::Index i = 0; i < ns; ++i)
    if (nx[i] > tiny) xs.col(i) /= nx[i];
  for (Eigen::Index j = 0; j < nt; ++j)
    if (ny[j] > tiny) yt.col(j) /= ny[j];

  Eigen::MatrixXd d = Eigen::MatrixXd::Ones(ns, nt) - xs.transpose() * yt;
  for (Eigen::Index i = 0; i < ns; ++i)
    if (!(nx[i] > tiny)) d.row(i).setConstant(kMaxCosineDistance);
  for (Eigen::Index j = 0; j < nt; ++j)
    if (!(ny[j] > tiny)) d.col(j).setConstant(kMaxCosineDistance);

  Eigen::VectorXd dmin(ns);
  std::vector<Eigen::Index> argmin(ns);
  Eigen::MatrixXd cx(ns, nt);
  for (Eigen::Index i = 0; i < ns; ++i) {
    Eigen::Index k = 0;
    dmin[i] = d.row(i).minCoeff(&k);
    argmin[i] = k;
    const double denom = dmin[i] + eps;
    // Softmax over targets; subtracting the row maximum leaves CX_ij unchanged.
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < nt; ++j) {
      cx(i, j) = (1.0 - d(i, j) / denom) / h;
      top = std::max(top, cx(i, j));
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < nt; ++j) {
      cx(i, j) = std::exp(cx(i, j) - top);
      sum += cx(i, j);
    }
    cx.row(i) /= sum;
  }

  std::vector<Eigen::Index> argmax(nt);
  double total = 0.0;
  for (Eigen::Index j = 0; j < nt; ++j) {
    Eigen::Index i = 0;
    total += cx.col(j).maxCoeff(&i);
    argmax[j] = i;
  }
  const double value = total / static_cast<double>(nt);

  if (grad_target) {
    // dCX/dCX_ij is 1/nt at each column's argmax, 0 elsewhere.
    Eigen::MatrixXd gsel = Eigen::MatrixXd::Zero(ns, nt);
    for (Eigen::Index j = 0; j < nt; ++j) gsel(argmax[j], j) = 1.0 / static_cast<double>(nt);
    Eigen::MatrixXd gcos(ns, nt);
    for (Eigen::Index i = 0; i < ns; ++i) {
      const double dot = (gsel.row(i).array() * cx.row(i).array()).sum();
      const double denom = dmin[i] + eps;
      double through_min = 0.0;
      for (Eigen::Index j = 0; j < nt; ++j) {
        const double ga = cx(i, j) * (gsel(i, j) - dot);  // d/d logit
        gcos(i, j) = ga / (h * denom);                     // d logit / d cos = +1 / (h * denom)
        through_min += ga * d(i, j) / (h * denom * denom);
      }
      gcos(i, argmin[i]) -= through_min;  // min_k d_ik = 1 - cos at argmin
      if (!(nx[i] > tiny)) gcos.row(i).setZero();
    }
    for (Eigen::Index j = 0; j < nt; ++j)
      if (!(ny[j] > tiny)) gcos.col(j).setZero();
    FeatureSet g_hat = xs * gcos;  // d/d y_hat, one column per target
    grad_target->resize(target.rows(), nt);
    for (Eigen::Index j = 0; j < nt; ++j) {
      if (!(ny[j] > tiny)) {
        grad_target->col(j).setZero();
        continue;
      }
      const auto yhat = yt.col(j);
      grad_target->col(j) = (g_hat.col(j) - g_hat.col(j).dot(yhat) * yhat) / ny[j];
    }
  }
  return value;
}

/// Flattens a C x H x W map into a C x (H*W) feature set.
template <typename T>
FeatureSet feature_set(const Tensor<T>& t) {
  FeatureSet f(t.channels(), static_cast<Eigen::Index>(t.plane()));
  for (int c = 0; c < t.channels(); ++c) {
    const T* ch = t.channel(c);
    for (std::size_t i = 0; i < t.plane(); ++i) f(c, static_cast<Eigen::Index>(i)) = static_cast<double>(ch[i]);
  }
  return f;
}

/// Feature set restricted to locations whose flag is set (all locations if none is).
template <typename T>
FeatureSet feature_set(const Tensor<T>& t, const std::vector<std::uint8_t>& keep) {
  if (keep.size() != t.plane()) throw ShapeError("feature keep-mask size mismatch");
  Eigen::Index n = 0;
  for (auto k : keep) n += k != 0;
  if (n == 0) return feature_set(t);
  FeatureSet f(t.channels(), n);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < t.plane(); ++i) {
    if (!keep[i]) continue;
    for (int c = 0; c < t.channels(); ++c) f(c, col) = static_cast<double>(t.channel(c)[i]);
    ++col;
  }
  return f;
}

template <typename T>
Tensor<T> feature_tensor(const FeatureSet& f, int channels, Dims dims) {
  Tensor<T> t(channels, dims.height, dims.width);
  for (int c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < t.plane(); ++i) t.channel(c)[i] = static_cast<T>(f(c, static_cast<Eigen::Index>(i)));
  return t;
}

struct CxParams {
  double h = 0.5;
  double eps = 1e-5;
};

/// Context vector loss: sum over layers of -log CX(phi_l(x), phi_l(y)).
///
/// `source_keep` optionally restricts the source pool per layer (exclude-masked
/// ablation). Gradients w.r.t. phi_l(y) are written to `grad_y` when given.
template <typename T>
double cvl_loss(const ContextField<T>& phi_x, const ContextField<T>& phi_y, const std::vector<std::string>& layers,
                CxParams p, std::map<std::string, Tensor<T>>* grad_y = nullptr,
                const std::map<std::string, std::vector<std::uint8_t>>* source_keep = nullptr) {
  double loss = 0.0;
  for (const auto& id : layers) {
    const Tensor<T>& fx = phi_x.at(id);
    const Tensor<T>& fy = phi_y.at(id);
    FeatureSet src;
    if (source_keep) {
      auto it = source_keep->find(id);
      src = it != source_keep->end() ? feature_set(fx, it->second) : feature_set(fx);
    } else {
      src = feature_set(fx);
    }
    FeatureSet g;
    const double cx = cx_similarity(src, feature_set(fy), p.h, p.eps, grad_y ? &g : nullptr);
    loss += -std::log(cx);
    if (grad_y) {
      g *= -1.0 / cx;
      (*grad_y)[id] = feature_tensor<T>(g, fy.channels(), fy.dims());
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Least-squares adversarial terms

/// sum_s w_s * mean((mu_s - target)^2); writes d/d mu_s into `grads` when given.
template <typename T>
double lsgan_term(const DiscriminatorMap<T>& m, double target, std::vector<Tensor<T>>* grads = nullptr) {
  double loss = 0.0;
  if (grads) grads->clear();
  for (std::size_t s = 0; s < m.maps.size(); ++s) {
    const Tensor<T>& mu = m.maps[s];
    const double w = static_cast<double>(m.weights[s]);
    const double n = static_cast<double>(mu.size());
    double sum = 0.0;
    for (T v : mu.values()) sum += (static_cast<double>(v) - target) * (static_cast<double>(v) - target);
    loss += w * sum / n;
    if (grads) {
      Tensor<T> g(mu.channels(), mu.height(), mu.width());
      for (std::size_t i = 0; i < mu.size(); ++i)
        g[i] = static_cast<T>(2.0 * w * (static_cast<double>(mu[i]) - target) / n);
      grads->push_back(std::move(g));
    }
  }
  return loss;
}

template <typename T>
void check_scale_structure(const DiscriminatorMap<T>& a, const DiscriminatorMap<T>& b) {
  if (a.maps.size() != b.maps.size() || a.weights != b.weights)
    throw ShapeError("discriminator maps have mismatched scale structure");
}

/// sum_s w_s [ mean((mu_real - 1)^2) + mean(mu_fake^2) ].
template <typename T>
double cal_discriminator_loss(const DiscriminatorMap<T>& real, const DiscriminatorMap<T>& fake,
                              std::vector<Tensor<T>>* grad_real = nullptr,
                              std::vector<Tensor<T>>* grad_fake = nullptr) {
  check_scale_structure(real, fake);
  return lsgan_term(real, 1.0, grad_real) + lsgan_term(fake, 0.0, grad_fake);
}

/// sum_s w_s mean((mu_fake - 1)^2).
template <typename T>
double cal_generator_loss(const DiscriminatorMap<T>& fake, std::vector<Tensor<T>>* grad_fake = nullptr) {
  return lsgan_term(fake, 1.0, grad_fake);
}

// ---------------------------------------------------------------------------
// Reconstruction

/// mean((generated * m - corrupted)^2) over all 3 * H * W entries.
template <typename T>
double rl_loss(const Tensor<T>& generated, const Tensor<T>& corrupted, const Tensor<T>& mask,
               Tensor<T>* grad = nullptr) {
  Tensor<T>::require_same_shape(generated, corrupted, "rl_loss");
  if (mask.channels() != 1 || !(mask.dims() == generated.dims())) throw ShapeError("rl_loss: mask dimension mismatch");
  const double n = static_cast<double>(generated.size());
  const std::size_t plane = generated.plane();
  if (grad) *grad = Tensor<T>(generated.channels(), generated.height(), generated.width());
  double sum = 0.0;
  for (int c = 0; c < generated.channels(); ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      const double m = static_cast<double>(mask[i]);
      const double r = static_cast<double>(generated[k]) * m - static_cast<double>(corrupted[k]);
      sum += r * r;
      if (grad) (*grad)[k] = static_cast<T>(2.0 * r * m / n);
    }
  return sum / n;
}

/// mean((a - b)^2); the resize cycle-consistency term.
template <typename T>
double mse_loss(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* grad_a = nullptr) {
  Tensor<T>::require_same_shape(a, b, "mse_loss");
  const double n = static_cast<double>(a.size());
  if (grad_a) *grad_a = Tensor<T>(a.channels(), a.height(), a.width());
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double r = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    sum += r * r;
    if (grad_a) (*grad_a)[k] = static_cast<T>(2.0 * r / n);
  }
  return sum / n;
}

}  // namespace deepcfl
