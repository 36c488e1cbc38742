#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace deepcfl::support {

using Vectors = std::vector<std::vector<double>>;

/// Direct transcription of the contextual similarity, one loop per index.
inline double naive_cx(const Vectors& source, const Vectors& target, double h, double eps) {
  const std::size_t ns = source.size(), nt = target.size(), c = source[0].size();
  std::vector<double> mu(c, 0.0);
  for (const auto& v : source)
    for (std::size_t k = 0; k < c; ++k) mu[k] += v[k] / static_cast<double>(ns);

  auto centered_norm = [&](const std::vector<double>& v) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += (v[k] - mu[k]) * (v[k] - mu[k]);
    return std::sqrt(s);
  };
  std::vector<std::vector<double>> d(ns, std::vector<double>(nt));
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < nt; ++j) {
      const double a = centered_norm(source[i]), b = centered_norm(target[j]);
      if (a <= 1e-12 || b <= 1e-12) {
        d[i][j] = 2.0;
        continue;
      }
      double dot = 0;
      for (std::size_t k = 0; k < c; ++k) dot += (source[i][k] - mu[k]) * (target[j][k] - mu[k]);
      d[i][j] = 1.0 - dot / (a * b);
    }

  std::vector<std::vector<double>> cx(ns, std::vector<double>(nt));
  for (std::size_t i = 0; i < ns; ++i) {
    const double dmin = *std::min_element(d[i].begin(), d[i].end());
    double sum = 0;
    for (std::size_t j = 0; j < nt; ++j) {
      cx[i][j] = std::exp((1.0 - d[i][j] / (dmin + eps)) / h);
      sum += cx[i][j];
    }
    for (std::size_t j = 0; j < nt; ++j) cx[i][j] /= sum;
  }
  double total = 0;
  for (std::size_t j = 0; j < nt; ++j) {
    double best = 0;
    for (std::size_t i = 0; i < ns; ++i) best = std::max(best, cx[i][j]);
    total += best;
  }
  return total / static_cast<double>(nt);
}

}  // namespace deepcfl::support
