#pragma once

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deepcfl/backbone.hpp"
#include "deepcfl/config.hpp"
#include "deepcfl/error.hpp"
#include "deepcfl/image_io.hpp"
#include "deepcfl/masking.hpp"
#include "deepcfl/metrics.hpp"
#include "deepcfl/report.hpp"
#include "deepcfl/trainer.hpp"

namespace deepcfl {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Column order of the benchmark CSV.
inline constexpr const char* kBenchCsvHeader = "image,task,seed,iterations,ssim,psnr,masked_ssim,wall_s";

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Builds the corruption mask for a restore-type task on an image of `dims`.
inline Mask build_task_mask(const RunConfig& c, Dims dims, std::vector<std::string>* warnings) {
  switch (c.task) {
    case Task::outpaint:
      return make_outpaint_mask(dims.height, dims.width, *c.mask_fraction);
    case Task::restore_random:
      return make_random_mask(dims.height, dims.width, *c.mask_fraction * 100.0, c.seed);
    case Task::inpaint:
      return load_mask(*c.mask_path, dims, MaskKind::file, warnings);
    case Task::restore_wordcloud: {
      Mask m = load_mask(*c.mask_path, dims, MaskKind::wordcloud_file, warnings);
      if (c.mask_fraction) m = m & make_random_mask(dims.height, dims.width, *c.mask_fraction * 100.0, c.seed);
      m.set_kind(MaskKind::wordcloud_file);
      return m;
    }
    case Task::resize:
      return Mask(dims.height, dims.width);
  }
  return Mask(dims.height, dims.width);
}

struct RunPaths {
  fs::path dir;
  fs::path config() const { return dir / "config.echo"; }
  fs::path trace() const { return dir / "trace.csv"; }
  fs::path restored() const { return dir / "restored.png"; }
  fs::path composite() const { return dir / "composite.png"; }
  fs::path checkpoint() const { return dir / "checkpoint.bin"; }
  fs::path report() const { return dir / "report.json"; }
  fs::path mask() const { return dir / "mask.png"; }
};

struct RunRequest {
  RunConfig config;
  std::string image_path;
  std::optional<std::string> gt_path;
  std::optional<std::string> resume_path;
  fs::path out_dir = "run";
};

/// Loads inputs, trains, writes the run directory; returns the report.
inline RunReport execute_run(const RunRequest& req, std::shared_ptr<const Backbone<float>> backbone,
                             std::ostream& log) {
  const RunConfig cfg = validate_config(req.config);
  const auto t0 = std::chrono::steady_clock::now();
  const Image original = load_image(req.image_path);
  std::optional<Image> gt;
  if (req.gt_path) {
    gt = load_image(*req.gt_path);
    if (cfg.task != Task::resize) require_same_dims(gt->dims(), original.dims(), "ground truth");
  }

  RunPaths paths{req.out_dir};
  fs::create_directories(paths.dir);
  std::vector<std::string> warnings;

  std::optional<Trainer<float>> trainer;
  if (req.resume_path) {
    trainer.emplace(Trainer<float>::from_archive(Archive::load(*req.resume_path), backbone));
  } else if (cfg.task == Task::resize) {
    trainer.emplace(Trainer<float>::for_resize(cfg, backbone, original));
  } else {
    const Mask mask = build_task_mask(cfg, original.dims(), &warnings);
    trainer.emplace(cfg, backbone, corrupt(original, mask), mask);
  }
  for (const auto& w : warnings) log << "warning: " << w << "\n";

  const int target = req.resume_path ? cfg.iterations : trainer->config().iterations;
  trainer->run_until(target);

  const RunConfig& used = trainer->config();
  const Image raw = quantize8(Image::clamped((used.emit_best ? trainer->best_output_tensor() : trainer->output_tensor())));
  std::optional<Image> comp;
  if (used.task != Task::resize) comp = quantize8(composite(raw, trainer->source(), trainer->mask()));

  RunReport report = report_for(*trainer, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  report.warnings = warnings;
  if (gt && gt->dims() == raw.dims()) {
    const Mask* m = used.task == Task::resize ? nullptr : &trainer->mask();
    report.metrics_raw = evaluate(raw, *gt, m);
    if (comp) report.metrics_composite = evaluate(*comp, *gt, m);
  } else if (gt) {
    report.warnings.push_back("ground truth dims differ from output; metrics skipped");
  }

  write_text(paths.config(), dump_config(used));
  write_text(paths.trace(), trace_csv(report.trace));
  save_image(paths.restored().string(), used.composite_output && comp ? *comp : raw);
  report.outputs["restored"] = paths.restored().string();
  if (comp) {
    save_image(paths.composite().string(), *comp);
    report.outputs["composite"] = paths.composite().string();
    save_mask(paths.mask().string(), trainer->mask());
    report.outputs["mask"] = paths.mask().string();
  }
  trainer->save_state(paths.checkpoint().string());
  report.outputs["checkpoint"] = paths.checkpoint().string();
  report.outputs["trace"] = paths.trace().string();
  report.outputs["config"] = paths.config().string();
  write_text(paths.report(), to_json(report).dump(2) + "\n");
  return report;
}

inline std::string final_line(const RunReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << "final: iterations=" << r.trace.size();
  if (!r.trace.empty()) os << " tl=" << r.trace.back().tl << " rl=" << r.trace.back().rl;
  if (const auto& m = r.headline()) {
    os << " psnr=" << m->psnr << " ssim=" << m->ssim;
    if (m->masked_ssim) os << " masked_ssim=" << *m->masked_ssim;
  }
  os << " wall_s=" << r.wall_seconds;
  return os.str();
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchRow {
  std::string image;
  bool ok = false;
  std::string error;
  double ssim = 0.0;
  double psnr = 0.0;
  std::optional<double> masked_ssim;
  double wall_s = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::size_t failures = 0;
  double mean_ssim = 0.0;
  double mean_psnr = 0.0;
  std::optional<double> mean_masked_ssim;
};

inline std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("dataset directory has no PNG images: " + dir.string());
  return out;
}

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline std::string bench_csv(const RunConfig& c, const BenchReport& b) {
  std::ostringstream os;
  os << kBenchCsvHeader << "\n";
  for (const auto& r : b.rows) {
    os << r.image << ',' << to_string(c.task) << ',' << c.seed << ',' << c.iterations << ',';
    if (r.ok) os << fmt_num(r.ssim) << ',' << fmt_num(r.psnr) << ',' << (r.masked_ssim ? fmt_num(*r.masked_ssim) : "");
    else os << ",,";
    os << ',' << fmt_num(r.wall_s) << "\n";
  }
  double wall = 0.0;
  for (const auto& r : b.rows) wall += r.wall_s;
  os << "mean," << to_string(c.task) << ',' << c.seed << ',' << c.iterations << ',' << fmt_num(b.mean_ssim) << ','
     << fmt_num(b.mean_psnr) << ',' << (b.mean_masked_ssim ? fmt_num(*b.mean_masked_ssim) : "") << ','
     << fmt_num(b.rows.empty() ? 0.0 : wall / static_cast<double>(b.rows.size())) << "\n";
  return os.str();
}

inline BenchRow bench_one(const RunConfig& cfg, const fs::path& image, const fs::path& run_dir,
                          std::shared_ptr<const Backbone<float>> backbone) {
  BenchRow row;
  row.image = image.filename().string();
  try {
    RunRequest req;
    req.config = cfg;
    req.image_path = image.string();
    req.gt_path = image.string();
    req.out_dir = run_dir;
    std::ostringstream sink;
    const RunReport r = execute_run(req, std::move(backbone), sink);
    const auto& m = r.headline();
    if (!m) throw Error("no metrics produced");
    row.ok = true;
    row.ssim = m->ssim;
    row.psnr = m->psnr;
    row.masked_ssim = m->masked_ssim;
    row.wall_s = r.wall_seconds;
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

inline nlohmann::json to_json(const BenchRow& r) {
  nlohmann::json j{{"image", r.image}, {"ok", r.ok}, {"error", r.error}, {"ssim", r.ssim},
                   {"psnr", r.psnr}, {"wall_s", r.wall_s}};
  j["masked_ssim"] = r.masked_ssim ? nlohmann::json(*r.masked_ssim) : nlohmann::json(nullptr);
  return j;
}

inline BenchRow bench_row_from_json(const nlohmann::json& j) {
  BenchRow r;
  r.image = j.at("image").get<std::string>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.ssim = j.at("ssim").get<double>();
  r.psnr = j.at("psnr").get<double>();
  r.wall_s = j.at("wall_s").get<double>();
  if (!j.at("masked_ssim").is_null()) r.masked_ssim = j.at("masked_ssim").get<double>();
  return r;
}

/// Runs every PNG in `dataset` through corruption + training + metrics.
///
/// With workers > 1 images are split round-robin over forked processes that
/// share only the already-loaded backbone. Writes `bench.csv` (one row per
/// image plus a mean row), `summary.json` and per-image run directories.
inline BenchReport run_benchmark(const fs::path& dataset, const RunConfig& config, const fs::path& out_dir,
                                 std::shared_ptr<const Backbone<float>> backbone, int workers = 1) {
  const RunConfig cfg = validate_config(config);
  if (cfg.task == Task::resize) throw ConfigError("bench supports restore-type tasks only");
  const auto images = list_images(dataset);
  fs::create_directories(out_dir / "runs");
  auto run_dir = [&](const fs::path& img) { return out_dir / "runs" / img.stem(); };
  auto result_file = [&](const fs::path& img) { return run_dir(img) / "result.json"; };

  BenchReport report;
  if (workers <= 1) {
    for (const auto& img : images) report.rows.push_back(bench_one(cfg, img, run_dir(img), backbone));
  } else {
    std::vector<pid_t> pids;
    for (int w = 0; w < workers; ++w) {
      const pid_t pid = fork();
      if (pid < 0) throw Error("fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          for (std::size_t i = w; i < images.size(); i += workers) {
            const BenchRow row = bench_one(cfg, images[i], run_dir(images[i]), backbone);
            fs::create_directories(run_dir(images[i]));
            write_text(result_file(images[i]), to_json(row).dump());
          }
        } catch (...) {
          code = 1;
        }
        std::_Exit(code);
      }
      pids.push_back(pid);
    }
    for (pid_t pid : pids) {
      int status = 0;
      waitpid(pid, &status, 0);
    }
    for (const auto& img : images) {
      try {
        report.rows.push_back(bench_row_from_json(nlohmann::json::parse(read_text(result_file(img)))));
      } catch (const std::exception& e) {
        BenchRow r;
        r.image = img.filename().string();
        r.error = std::string("worker produced no result: ") + e.what();
        report.rows.push_back(r);
      }
    }
  }

  double s = 0.0, p = 0.0, ms = 0.0;
  std::size_t ok = 0, with_masked = 0;
  for (const auto& r : report.rows) {
    if (!r.ok) {
      ++report.failures;
      continue;
    }
    ++ok;
    s += r.ssim;
    p += r.psnr;
    if (r.masked_ssim) {
      ms += *r.masked_ssim;
      ++with_masked;
    }
  }
  if (ok > 0) {
    report.mean_ssim = s / static_cast<double>(ok);
    report.mean_psnr = p / static_cast<double>(ok);
  }
  if (with_masked > 0) report.mean_masked_ssim = ms / static_cast<double>(with_masked);

  write_text(out_dir / "bench.csv", bench_csv(cfg, report));
  nlohmann::json summary;
  summary["dataset"] = dataset.filename().string();
  summary["task"] = to_string(cfg.task);
  summary["images"] = report.rows.size();
  summary["succeeded"] = ok;
  summary["failures"] = report.failures;
  summary["mean_ssim"] = report.mean_ssim;
  summary["mean_psnr"] = report.mean_psnr;
  summary["config"] = to_json(cfg);
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& r : report.rows)
    if (!r.ok) errors.push_back({{"image", r.image}, {"error", r.error}});
  summary["errors"] = errors;
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");

  // SSIM on top, PSNR below, one column per dataset.
  std::ostringstream table;
  table << std::fixed << "| metric | " << dataset.filename().string() << " |\n|---|---|\n"
        << "| SSIM | " << std::setprecision(2) << report.mean_ssim << " |\n"
        << "| PSNR | " << std::setprecision(2) << report.mean_psnr << " |\n";
  write_text(out_dir / "table.md", table.str());
  return report;
}

// ---------------------------------------------------------------------------
// Command line

struct ConfigFlags {
  std::string config_file;
  std::optional<int> iters;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_g, lambda_r, lambda_cal, lambda_cvl, lambda_cyc;
  std::optional<int> scales;
  std::optional<std::string> cx_layer;
  std::optional<double> cx_h, cx_eps, lr_g, lr_d;
  bool composite = false, emit_best = false, mask_channel = false, exclude_masked = false, on_composite = false;
  std::optional<std::string> backbone;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "Base config file (flat JSON); flags override it");
    app->add_option("--iters", iters, "Optimisation iterations");
    app->add_option("--seed", seed, "Seed for masks, initialisation and updates");
    app->add_option("--lambda-g", lambda_g, "Weight of the contextual features loss");
    app->add_option("--lambda-r", lambda_r, "Weight of the reconstruction loss");
    app->add_option("--lambda-cal", lambda_cal, "Weight of the context adversarial loss");
    app->add_option("--lambda-cvl", lambda_cvl, "Weight of the context vector loss");
    app->add_option("--lambda-cyc", lambda_cyc, "Weight of the resize cycle loss");
    app->add_option("--scales", scales, "Discriminator scales (1 = single-scale)");
    app->add_option("--cx-layer", cx_layer, "Backbone layer for context vectors");
    app->add_option("--cx-h", cx_h, "Contextual similarity bandwidth");
    app->add_option("--cx-eps", cx_eps, "Contextual similarity epsilon");
    app->add_option("--lr-g", lr_g, "Generator learning rate");
    app->add_option("--lr-d", lr_d, "Discriminator learning rate");
    app->add_flag("--composite", composite, "Write the composited image as restored.png");
    app->add_flag("--emit-best", emit_best, "Emit the lowest-loss snapshot instead of the last iterate");
    app->add_flag("--mask-channel", mask_channel, "Feed the mask to the generator as a fourth channel");
    app->add_flag("--cvl-exclude-masked", exclude_masked, "Drop masked locations from the CVL source pool");
    app->add_flag("--metrics-on-composite", on_composite, "Headline metrics on the composited output");
    app->add_option("--backbone", backbone, "Weights file, or seeded:<n> for an untrained backbone");
  }

  RunConfig apply(RunConfig c) const {
    if (!config_file.empty()) {
      const Task t = c.task;
      const auto frac = c.mask_fraction;
      const auto path = c.mask_path;
      c = read_config_file(config_file);
      c.task = t;
      if (frac) c.mask_fraction = frac;
      if (path) c.mask_path = path;
    }
    if (iters) c.iterations = *iters;
    if (seed) c.seed = *seed;
    if (lambda_g) c.loss_weights.lambda_G = *lambda_g;
    if (lambda_r) c.loss_weights.lambda_R = *lambda_r;
    if (lambda_cal) c.loss_weights.lambda_cal = *lambda_cal;
    if (lambda_cvl) c.loss_weights.lambda_cvl = *lambda_cvl;
    if (lambda_cyc) c.lambda_cyc = *lambda_cyc;
    if (scales) c.discriminator_scales = *scales;
    if (cx_layer) c.cx_layer = *cx_layer;
    if (cx_h) c.cx_bandwidth = *cx_h;
    if (cx_eps) c.cx_epsilon = *cx_eps;
    if (lr_g) c.lr_G = *lr_g;
    if (lr_d) c.lr_D = *lr_d;
    c.composite_output = c.composite_output || composite;
    c.emit_best = c.emit_best || emit_best;
    c.mask_channel = c.mask_channel || mask_channel;
    c.cvl_exclude_masked = c.cvl_exclude_masked || exclude_masked;
    c.metrics_on_composite = c.metrics_on_composite || on_composite;
    if (backbone) c.backbone_weights = *backbone;
    return c;
  }
};

/// Entry point of the `deepcfl` tool. Exit 0 on success, 1 on configuration or
/// input errors, 2 when training aborts on a non-finite loss.
inline int run_task(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Single-image restoration and resize with contextual feature losses"};
  app.require_subcommand(1);

  std::string image, gt, out_dir = "run", resume;
  std::optional<double> fraction, random;
  std::string mask_file, wordcloud;
  double sx = 2.0, sy = 2.0;
  ConfigFlags flags;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--image", image, "Input PNG")->required();
    sub->add_option("--gt", gt, "Ground-truth PNG for metrics");
    sub->add_option("--out", out_dir, "Run directory");
    sub->add_option("--resume", resume, "Continue from a checkpoint.bin");
    flags.attach(sub);
  };

  auto* outpaint = app.add_subcommand("outpaint", "Restore symmetric removed border columns");
  add_common(outpaint);
  outpaint->add_option("--fraction", fraction, "Total fraction of removed columns")->required();

  auto* inpaint = app.add_subcommand("inpaint", "Fill holes given by a mask PNG");
  add_common(inpaint);
  inpaint->add_option("--mask", mask_file, "Mask PNG, black = missing")->required();

  auto* restore = app.add_subcommand("restore", "Restore randomly removed pixels and/or a word-cloud mask");
  add_common(restore);
  restore->add_option("--random", random, "Percentage of pixels removed at random");
  restore->add_option("--wordcloud", wordcloud, "Word-cloud mask PNG, black = missing");

  auto* resize = app.add_subcommand("resize", "Resize with the cycle-consistent objective");
  add_common(resize);
  resize->add_option("--sx", sx, "Width factor");
  resize->add_option("--sy", sy, "Height factor");

  std::string dataset, bench_task = "outpaint";
  int workers = 1;
  auto* bench = app.add_subcommand("bench", "Benchmark a folder of ground-truth images");
  bench->add_option("--dataset", dataset, "Directory of PNG images")->required();
  bench->add_option("--task", bench_task, "outpaint | restore | inpaint | restore_wordcloud");
  bench->add_option("--fraction", fraction, "Outpaint fraction");
  bench->add_option("--random", random, "Random removal percentage");
  bench->add_option("--mask", mask_file, "Mask PNG for inpaint / word-cloud tasks");
  bench->add_option("--out", out_dir, "Benchmark output directory");
  bench->add_option("--workers", workers, "Parallel worker processes");
  flags.attach(bench);

  std::string restored, eval_mask;
  auto* eval = app.add_subcommand("eval", "Recompute metrics from saved images");
  eval->add_option("--restored", restored, "Output PNG")->required();
  eval->add_option("--gt", gt, "Ground-truth PNG")->required();
  eval->add_option("--mask", eval_mask, "Mask PNG for masked SSIM");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (eval->parsed()) {
      const Image a = load_image(restored), b = load_image(gt);
      Mask m;
      const Mask* mp = nullptr;
      if (!eval_mask.empty()) {
        m = load_mask(eval_mask, a.dims());
        mp = &m;
      }
      const Metrics met = evaluate(a, b, mp);
      out << to_json(met).dump() << "\n";
      return kExitOk;
    }

    RunConfig cfg;
    if (outpaint->parsed()) {
      cfg.task = Task::outpaint;
      cfg.mask_fraction = fraction;
    } else if (inpaint->parsed()) {
      cfg.task = Task::inpaint;
      cfg.mask_path = mask_file;
    } else if (restore->parsed()) {
      if (!wordcloud.empty()) {
        cfg.task = Task::restore_wordcloud;
        cfg.mask_path = wordcloud;
      } else if (random) {
        cfg.task = Task::restore_random;
      } else {
        throw ConfigError("restore needs --random and/or --wordcloud");
      }
      if (random) cfg.mask_fraction = *random / 100.0;
    } else if (resize->parsed()) {
      cfg.task = Task::resize;
      cfg.resize_factor_x = sx;
      cfg.resize_factor_y = sy;
    } else if (bench->parsed()) {
      if (bench_task == "outpaint") {
        cfg.task = Task::outpaint;
        cfg.mask_fraction = fraction ? fraction : std::optional<double>(0.2);
      } else if (bench_task == "restore" || bench_task == "restore_random") {
        cfg.task = Task::restore_random;
        cfg.mask_fraction = (random ? *random : 50.0) / 100.0;
      } else if (bench_task == "inpaint") {
        cfg.task = Task::inpaint;
        cfg.mask_path = mask_file;
      } else if (bench_task == "restore_wordcloud") {
        cfg.task = Task::restore_wordcloud;
        cfg.mask_path = mask_file;
        if (random) cfg.mask_fraction = *random / 100.0;
      } else {
        throw ConfigError("unsupported bench task '" + bench_task + "'");
      }
    }
    cfg = validate_config(flags.apply(cfg));
    auto backbone = std::make_shared<const Backbone<float>>(Backbone<float>::load(cfg.backbone_weights));

    if (bench->parsed()) {
      const BenchReport r = run_benchmark(dataset, cfg, out_dir, backbone, workers);
      out << "bench: images=" << r.rows.size() << " failures=" << r.failures << std::setprecision(6)
          << " mean_ssim=" << r.mean_ssim << " mean_psnr=" << r.mean_psnr << "\n";
      return kExitOk;
    }

    RunRequest req;
    req.config = cfg;
    req.image_path = image;
    if (!gt.empty()) req.gt_path = gt;
    if (!resume.empty()) req.resume_path = resume;
    req.out_dir = out_dir;
    const RunReport r = execute_run(req, backbone, err);
    out << final_line(r) << "\n";
    return kExitOk;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

inline int run_task(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_task(args);
}

}  // namespace deepcfl
