#pragma once

#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepcfl/config.hpp"
#include "deepcfl/losses.hpp"
#include "deepcfl/metrics.hpp"
#include "deepcfl/trainer.hpp"

namespace deepcfl {

struct Metrics {
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> masked_ssim;
};

/// Metrics of `output` against ground truth; masked SSIM only when the mask has holes.
inline Metrics evaluate(const Image& output, const Image& ground_truth, const Mask* mask = nullptr) {
  Metrics m;
  m.psnr = psnr(output, ground_truth);
  m.ssim = ssim(output, ground_truth);
  if (mask && mask->zeros() > 0) m.masked_ssim = masked_ssim(output, ground_truth, *mask);
  return m;
}

/// Everything persisted about one run.
struct RunReport {
  RunConfig config;
  std::vector<LossBreakdown> trace;
  std::optional<Metrics> metrics_raw;
  std::optional<Metrics> metrics_composite;
  double wall_seconds = 0.0;
  double mask_zero_fraction = 0.0;
  int best_iteration = -1;
  std::map<std::string, std::string> outputs;
  std::vector<std::string> warnings;

  /// The metrics selected by config.metrics_on_composite.
  const std::optional<Metrics>& headline() const {
    return config.metrics_on_composite ? metrics_composite : metrics_raw;
  }
};

inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j{{"psnr", m.psnr}, {"ssim", m.ssim}};
  j["masked_ssim"] = m.masked_ssim ? nlohmann::json(*m.masked_ssim) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j;
  j["config"] = to_json(r.config);
  j["iterations_executed"] = r.trace.size();
  j["wall_seconds"] = r.wall_seconds;
  j["mask_zero_fraction"] = r.mask_zero_fraction;
  j["best_iteration"] = r.best_iteration;
  if (!r.trace.empty()) {
    const auto& first = r.trace.front();
    const auto& last = r.trace.back();
    j["loss_initial"] = {{"tl", first.tl}, {"cfl", first.cfl}, {"cal_g", first.cal_g},
                         {"cal_d", first.cal_d}, {"cvl", first.cvl}, {"rl", first.rl}};
    j["loss_final"] = {{"tl", last.tl}, {"cfl", last.cfl}, {"cal_g", last.cal_g},
                       {"cal_d", last.cal_d}, {"cvl", last.cvl}, {"rl", last.rl}};
  }
  if (r.headline()) j["metrics"] = to_json(*r.headline());
  if (r.metrics_raw) j["metrics_raw"] = to_json(*r.metrics_raw);
  if (r.metrics_composite) j["metrics_composite"] = to_json(*r.metrics_composite);
  j["outputs"] = r.outputs;
  j["warnings"] = r.warnings;
  return j;
}

/// Loss trace as CSV: iteration,tl,cfl,cal_g,cal_d,cvl,rl (one row per iteration).
/// For the resize task the rl column holds the cycle-consistency term.
inline std::string trace_csv(const std::vector<LossBreakdown>& trace) {
  std::ostringstream os;
  os << "iteration,tl,cfl,cal_g,cal_d,cvl,rl\n" << std::setprecision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace[i];
    os << i << ',' << r.tl << ',' << r.cfl << ',' << r.cal_g << ',' << r.cal_d << ',' << r.cvl << ',' << r.rl << '\n';
  }
  return os.str();
}

template <typename T>
RunReport report_for(const Trainer<T>& tr, double seconds) {
  RunReport r;
  r.config = tr.config();
  r.trace = tr.trace();
  r.wall_seconds = seconds;
  r.mask_zero_fraction = tr.mask().zero_fraction();
  r.best_iteration = tr.best_iteration();
  return r;
}

/// Restores `source` (the corrupted x) under `mask`; returns the output image and the report.
inline std::pair<Image, RunReport> train_restore(const Image& source, const Mask& mask, const RunConfig& config,
                                                 std::shared_ptr<const Backbone<float>> backbone) {
  const auto t0 = std::chrono::steady_clock::now();
  Trainer<float> tr(config, std::move(backbone), source, mask);
  tr.run();
  Image out = tr.result();
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(out), report_for(tr, s)};
}

/// Resizes `source` by (sx along width, sy along height) with the cycle-consistent objective.
inline std::pair<Image, RunReport> train_resize(const Image& source, double sx, double sy, RunConfig config,
                                                std::shared_ptr<const Backbone<float>> backbone) {
  const auto t0 = std::chrono::steady_clock::now();
  config.task = Task::resize;
  config.resize_factor_x = sx;
  config.resize_factor_y = sy;
  auto tr = Trainer<float>::for_resize(config, std::move(backbone), source);
  tr.run();
  Image out = tr.result();
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(out), report_for(tr, s)};
}

}  // namespace deepcfl
