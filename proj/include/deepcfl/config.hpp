#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "deepcfl/error.hpp"

namespace deepcfl {

/// Coefficients of the total and contextual-features losses.
///   tl  = lambda_G * cfl + lambda_R * rl
///   cfl = lambda_cal * cal_g + lambda_cvl * cvl
struct LossWeights {
  double lambda_G = 1.0;
  double lambda_R = 1.0;
  double lambda_cal = 1.0;
  double lambda_cvl = 0.1;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;

  void validate() const {
    for (double v : {lambda_G, lambda_R, lambda_cal, lambda_cvl})
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
    if (lambda_G == 0.0 && lambda_R == 0.0 && lambda_cal == 0.0 && lambda_cvl == 0.0)
      throw ConfigError("at least one loss weight must be positive");
  }
};

enum class Task { outpaint, inpaint, restore_random, restore_wordcloud, resize };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::outpaint: return "outpaint";
    case Task::inpaint: return "inpaint";
    case Task::restore_random: return "restore_random";
    case Task::restore_wordcloud: return "restore_wordcloud";
    case Task::resize: return "resize";
  }
  return "outpaint";
}

inline Task parse_task(const std::string& s) {
  for (Task t : {Task::outpaint, Task::inpaint, Task::restore_random, Task::restore_wordcloud,
                 Task::resize})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown task '" + s + "'");
}

inline constexpr int kDefaultScales = 3;

/// Full description of one restoration or resize run.
///
/// Fields left at their "unset" value (discriminator_scales == 0, empty
/// optionals) are filled by validate_config.
struct RunConfig {
  Task task = Task::outpaint;
  /// Outpaint: total fraction of removed columns. Random removal: r / 100.
  std::optional<double> mask_fraction;
  std::optional<std::string> mask_path;
  int iterations = 4000;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  double lambda_cyc = 1.0;
  int discriminator_scales = 0;
  std::string cx_layer = "conv4_2";
  double cx_bandwidth = 0.5;
  double cx_epsilon = 1e-5;
  double lr_G = 1e-4;
  double lr_D = 1e-4;
  double beta1_G = 0.5;
  double beta2_G = 0.999;
  double beta1_D = 0.5;
  double beta2_D = 0.999;
  double resize_factor_x = 2.0;
  double resize_factor_y = 2.0;
  bool composite_output = false;
  bool emit_best = false;
  bool mask_channel = false;
  bool cvl_exclude_masked = false;
  bool metrics_on_composite = false;
  /// Weights file path, or "seeded:<n>" for a deterministic untrained backbone.
  /// Empty means the default cache location.
  std::string backbone_weights;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline RunConfig validate_config(RunConfig c) {
  if (c.iterations <= 0) throw ConfigError("iterations must be positive");
  c.loss_weights.validate();
  if (!(c.lambda_cyc >= 0.0) || !std::isfinite(c.lambda_cyc)) throw ConfigError("lambda_cyc must be >= 0");

  const bool needs_fraction = c.task == Task::outpaint || c.task == Task::restore_random;
  if (needs_fraction && !c.mask_fraction) throw ConfigError("mask_fraction required for task " + std::string(to_string(c.task)));
  if (c.mask_fraction && !(*c.mask_fraction > 0.0 && *c.mask_fraction < 1.0))
    throw ConfigError("mask_fraction: fraction out of range (0,1)");

  const bool needs_file = c.task == Task::inpaint || c.task == Task::restore_wordcloud;
  if (needs_file && (!c.mask_path || c.mask_path->empty()))
    throw ConfigError("mask file required for task " + std::string(to_string(c.task)));

  if (c.discriminator_scales == 0) c.discriminator_scales = kDefaultScales;
  if (c.discriminator_scales < 0) throw ConfigError("discriminator_scales must be positive");
  if (c.cx_layer.empty()) throw ConfigError("cx_layer must name a backbone layer");
  if (!(c.cx_bandwidth > 0.0)) throw ConfigError("cx_bandwidth must be > 0");
  if (!(c.cx_epsilon > 0.0)) throw ConfigError("cx_epsilon must be > 0");
  for (double lr : {c.lr_G, c.lr_D})
    if (!(lr > 0.0)) throw ConfigError("learning rates must be > 0");
  for (double b : {c.beta1_G, c.beta2_G, c.beta1_D, c.beta2_D})
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("optimizer betas must lie in [0,1)");
  if (c.task == Task::resize && !(c.resize_factor_x > 0.0 && c.resize_factor_y > 0.0))
    throw ConfigError("resize factors must be > 0");
  return c;
}

// Flat key-value document; keys are the RunConfig field names, loss weights
// are flattened to lambda_G / lambda_R / lambda_cal / lambda_cvl.

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["task"] = to_string(c.task);
  j["mask_fraction"] = c.mask_fraction ? nlohmann::json(*c.mask_fraction) : nlohmann::json(nullptr);
  j["mask_path"] = c.mask_path ? nlohmann::json(*c.mask_path) : nlohmann::json(nullptr);
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["lambda_G"] = c.loss_weights.lambda_G;
  j["lambda_R"] = c.loss_weights.lambda_R;
  j["lambda_cal"] = c.loss_weights.lambda_cal;
  j["lambda_cvl"] = c.loss_weights.lambda_cvl;
  j["lambda_cyc"] = c.lambda_cyc;
  j["discriminator_scales"] = c.discriminator_scales;
  j["cx_layer"] = c.cx_layer;
  j["cx_bandwidth"] = c.cx_bandwidth;
  j["cx_epsilon"] = c.cx_epsilon;
  j["lr_G"] = c.lr_G;
  j["lr_D"] = c.lr_D;
  j["beta1_G"] = c.beta1_G;
  j["beta2_G"] = c.beta2_G;
  j["beta1_D"] = c.beta1_D;
  j["beta2_D"] = c.beta2_D;
  j["resize_factor_x"] = c.resize_factor_x;
  j["resize_factor_y"] = c.resize_factor_y;
  j["composite_output"] = c.composite_output;
  j["emit_best"] = c.emit_best;
  j["mask_channel"] = c.mask_channel;
  j["cvl_exclude_masked"] = c.cvl_exclude_masked;
  j["metrics_on_composite"] = c.metrics_on_composite;
  j["backbone_weights"] = c.backbone_weights;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config document must be a flat object");
  RunConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "task") c.task = parse_task(v.get<std::string>());
      else if (key == "mask_fraction") c.mask_fraction = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "mask_path") c.mask_path = v.is_null() ? std::nullopt : std::optional<std::string>(v.get<std::string>());
      else if (key == "iterations") c.iterations = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "lambda_G") c.loss_weights.lambda_G = v.get<double>();
      else if (key == "lambda_R") c.loss_weights.lambda_R = v.get<double>();
      else if (key == "lambda_cal") c.loss_weights.lambda_cal = v.get<double>();
      else if (key == "lambda_cvl") c.loss_weights.lambda_cvl = v.get<double>();
      else if (key == "lambda_cyc") c.lambda_cyc = v.get<double>();
      else if (key == "discriminator_scales") c.discriminator_scales = v.get<int>();
      else if (key == "cx_layer") c.cx_layer = v.get<std::string>();
      else if (key == "cx_bandwidth") c.cx_bandwidth = v.get<double>();
      else if (key == "cx_epsilon") c.cx_epsilon = v.get<double>();
      else if (key == "lr_G") c.lr_G = v.get<double>();
      else if (key == "lr_D") c.lr_D = v.get<double>();
      else if (key == "beta1_G") c.beta1_G = v.get<double>();
      else if (key == "beta2_G") c.beta2_G = v.get<double>();
      else if (key == "beta1_D") c.beta1_D = v.get<double>();
      else if (key == "beta2_D") c.beta2_D = v.get<double>();
      else if (key == "resize_factor_x") c.resize_factor_x = v.get<double>();
      else if (key == "resize_factor_y") c.resize_factor_y = v.get<double>();
      else if (key == "composite_output") c.composite_output = v.get<bool>();
      else if (key == "emit_best") c.emit_best = v.get<bool>();
      else if (key == "mask_channel") c.mask_channel = v.get<bool>();
      else if (key == "cvl_exclude_masked") c.cvl_exclude_masked = v.get<bool>();
      else if (key == "metrics_on_composite") c.metrics_on_composite = v.get<bool>();
      else if (key == "backbone_weights") c.backbone_weights = v.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config value: ") + e.what());
  }
  return c;
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void write_config_file(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file " + path);
  out << dump_config(c);
}

}  // namespace deepcfl
