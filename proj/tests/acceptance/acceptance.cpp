// Acceptance checks: one PASS/FAIL line per criterion.
// Usage: deepcfl_acceptance [criterion numbers...]   (default: all)
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include "deepcfl/deepcfl.hpp"
#include "support/cx_oracle.hpp"
#include "support/testing.hpp"

using namespace deepcfl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

support::Vectors random_vectors(std::size_t n, std::size_t c, Rng& rng) {
  support::Vectors v(n, std::vector<double>(c));
  for (auto& x : v)
    for (auto& e : x) e = rng.uniform(-1, 1);
  return v;
}

FeatureSet to_set(const support::Vectors& v) {
  FeatureSet f(static_cast<Eigen::Index>(v[0].size()), static_cast<Eigen::Index>(v.size()));
  for (std::size_t j = 0; j < v.size(); ++j)
    for (std::size_t k = 0; k < v[0].size(); ++k) f(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = v[j][k];
  return f;
}

ContextField<double> field_of(const Tensor<double>& t) {
  ContextField<double> f;
  f.layers["conv4_2"] = t;
  return f;
}

DiscriminatorMap<double> constant_map(std::vector<double> values) {
  DiscriminatorMap<double> m;
  for (double v : values) {
    m.maps.emplace_back(1, 3, 3, v);
    m.weights.push_back(1.0 / static_cast<double>(values.size()));
  }
  return m;
}

std::shared_ptr<const Backbone<float>> backbone_f() {
  static const auto b = std::make_shared<const Backbone<float>>(Backbone<float>::seeded(0));
  return b;
}

/// Worst relative error of `analytic` against central differences at 10 random coordinates of `x`.
template <typename F>
double fd_worst(Tensor<double>& x, const Tensor<double>& analytic, Rng& rng, F&& f) {
  double worst = 0.0;
  for (int s = 0; s < 10; ++s) {
    const std::size_t i = rng.below(x.size());
    const double n = support::central_difference(x[i], 1e-6, f);
    worst = std::max(worst, support::relative_error(analytic[i], n, 1e-8));
  }
  return worst;
}

Outcome cx_oracle() {
  Rng rng(0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 1 + rng.below(32);
    const std::size_t ns = 1 + rng.below(256), nt = 1 + rng.below(256);
    const auto s = random_vectors(ns, c, rng), t = random_vectors(nt, c, rng);
    const double h = rng.uniform(0.1, 1.0);
    const double fast = cx_similarity(to_set(s), to_set(t), h, 1e-5);
    worst = std::max(worst, support::relative_error(fast, support::naive_cx(s, t, h, 1e-5)));
  }
  return {worst <= 1e-5, "max rel err " + fmt(worst)};
}

Outcome gradients() {
  Rng rng(0);
  double worst_cvl, worst_cal, worst_rl, worst_tl;
  {
    const Tensor<double> x = support::random_tensor<double>(8, 4, 4, rng);
    Tensor<double> y = support::random_tensor<double>(8, 4, 4, rng);
    std::map<std::string, Tensor<double>> g;
    cvl_loss(field_of(x), field_of(y), {"conv4_2"}, {}, &g);
    worst_cvl = fd_worst(y, g["conv4_2"], rng, [&] { return cvl_loss(field_of(x), field_of(y), {"conv4_2"}, {}); });
  }
  {
    const Discriminator<double> d(8, 2, 0);
    Tensor<double> f = support::random_tensor<double>(8, 4, 4, rng);
    Discriminator<double>::Pass pass;
    std::vector<Tensor<double>> gmap;
    cal_generator_loss(d.forward(f, &pass), &gmap);
    const Tensor<double> g = d.backward(gmap, pass, {});
    worst_cal = fd_worst(f, g, rng, [&] { return cal_generator_loss(d.forward(f)); });
  }
  {
    Tensor<double> y = support::random_tensor<double>(3, 16, 16, rng, 0, 1);
    const Tensor<double> x = support::random_tensor<double>(3, 16, 16, rng, 0, 1);
    Tensor<double> m(1, 16, 16);
    for (auto& v : m.storage()) v = static_cast<double>(rng.below(2));
    Tensor<double> g;
    rl_loss(y, x, m, &g);
    worst_rl = fd_worst(y, g, rng, [&] { return rl_loss(y, x, m); });
  }
  {
    const auto backbone = Backbone<double>::seeded(0);
    const Discriminator<double> d(512, 1, 0);
    const Tensor<double> original = support::random_tensor<double>(3, 16, 16, rng, 0, 1);
    Tensor<double> m(1, 16, 16);
    for (auto& v : m.storage()) v = static_cast<double>(rng.below(2));
    Tensor<double> x = original;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < x.plane(); ++i) x.channel(c)[i] *= m[i];
    const auto phi_x = backbone.forward(x, {"conv4_2"});
    Objective<double> o;
    o.backbone = &backbone;
    o.discriminator = &d;
    o.phi_x = &phi_x;
    Tensor<double> y = support::random_tensor<double>(3, 16, 16, rng, 0, 1);
    Tensor<double> g(3, 16, 16);
    restore_objective<double>(o, y, x, m, &g);
    worst_tl = fd_worst(y, g, rng, [&] { return restore_objective<double>(o, y, x, m, nullptr).tl; });
  }
  const double worst = std::max({worst_cvl, worst_cal, worst_rl, worst_tl});
  return {worst <= 1e-3, "max rel err cvl " + fmt(worst_cvl) + ", cal_g " + fmt(worst_cal) + ", rl " + fmt(worst_rl) +
                             ", tl " + fmt(worst_tl)};
}

Outcome loss_algebra() {
  Rng rng(0);
  double worst = 0.0;
  bool separable = true;
  for (int i = 0; i < 1000; ++i) {
    const LossTerms t{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 5), rng.uniform(0, 1)};
    const LossWeights w{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
    const LossBreakdown b = total_loss(t, w);
    const double cfl = w.lambda_cal * t.cal_g + w.lambda_cvl * t.cvl;
    worst = std::max(worst, support::relative_error(b.cfl, cfl));
    worst = std::max(worst, support::relative_error(b.tl, w.lambda_G * cfl + w.lambda_R * t.rl));
    LossWeights cal_only = w, cvl_only = w;
    cal_only.lambda_cvl = 0.0;
    cvl_only.lambda_cal = 0.0;
    const double a = total_loss(t, cal_only).cfl, c = total_loss(t, cvl_only).cfl;
    separable = separable && a == w.lambda_cal * t.cal_g && c == w.lambda_cvl * t.cvl && a + c == b.cfl;
  }
  // Without the adversarial term the objective cannot depend on the discriminator.
  const auto backbone = Backbone<double>::seeded(0);
  const Discriminator<double> d1(512, 1, 1), d2(512, 1, 2);
  Rng r2(1);
  const Tensor<double> x = support::random_tensor<double>(3, 16, 16, r2, 0, 1);
  const Tensor<double> y = support::random_tensor<double>(3, 16, 16, r2, 0, 1);
  const Tensor<double> m(1, 16, 16, 1.0);
  const auto phi_x = backbone.forward(x, {"conv4_2"});
  Objective<double> o;
  o.backbone = &backbone;
  o.phi_x = &phi_x;
  o.weights = {.lambda_G = 1, .lambda_R = 1, .lambda_cal = 0, .lambda_cvl = 0.1};
  o.discriminator = &d1;
  const LossBreakdown l1 = restore_objective<double>(o, y, x, m, nullptr);
  o.discriminator = &d2;
  const LossBreakdown l2 = restore_objective<double>(o, y, x, m, nullptr);
  separable = separable && l1 == l2 && l1.cal_g == 0.0 && l1.cfl == 0.1 * l1.cvl;
  return {worst <= 1e-6 && separable,
          "max rel err " + fmt(worst) + ", separability " + (separable ? "bit-exact" : "violated")};
}

Outcome lsgan() {
  const bool ok = cal_discriminator_loss(constant_map({1.0}), constant_map({0.0})) == 0.0 &&
                  cal_discriminator_loss(constant_map({0.5}), constant_map({0.5})) == 0.5 &&
                  cal_generator_loss(constant_map({0.5})) == 0.25 && cal_generator_loss(constant_map({0.0})) == 1.0;
  return {ok, "D(1,0)=0, D(0.5,0.5)=0.5, G(0.5)=0.25, G(0)=1"};
}

Outcome masks() {
  Rng rng(0);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const int h = 1 + static_cast<int>(rng.below(128)), w = 1 + static_cast<int>(rng.below(128));
    const double r = rng.uniform(0.5, 99.5);
    const Mask m = make_random_mask(h, w, r, rng.next());
    std::size_t zeros = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) zeros += !m.known(y, x);
    exact += zeros == static_cast<std::size_t>(std::floor(h * w * r / 100.0 + 0.5));
  }
  const Mask o = make_outpaint_mask(50, 200, 0.2);
  bool columns = true;
  for (int y = 0; y < 50; ++y)
    for (int x = 0; x < 200; ++x) columns = columns && (o.known(y, x) == (x >= 20 && x < 180));
  return {exact == 100 && columns, std::to_string(exact) + "/100 exact counts, outpaint columns 0-19 and 180-199 " +
                                       (columns ? "removed" : "wrong")};
}

Outcome autoencode() {
  const Image image = support::texture_image(64, 64);
  RunConfig c;
  c.task = Task::restore_random;
  c.mask_fraction = 0.5;
  c.iterations = 1000;
  c.loss_weights.lambda_G = 0.0;
  auto [out, report] = train_restore(image, Mask(64, 64, 1), c, backbone_f());
  const double rl = report.trace.back().rl;
  return {rl < 1e-3, "rl " + fmt(report.trace.front().rl) + " -> " + fmt(rl) + " in " + fmt(report.wall_seconds) + " s"};
}

Outcome restoration_gate() {
  const Image original = support::texture_image(128, 128);
  const Mask m = make_random_mask(128, 128, 50, 0);
  RunConfig c;
  c.task = Task::restore_random;
  c.mask_fraction = 0.5;
  c.iterations = 2000;
  c = validate_config(c);
  const Image source = corrupt(original, m);
  auto [out, report] = train_restore(source, m, c, backbone_f());
  const double s = ssim(composite(out, source, m), original);
  const double tl0 = report.trace.front().tl, tl1 = report.trace.back().tl;
  return {s >= 0.80 && tl1 < 0.5 * tl0, "composited SSIM " + fmt(s) + " (gate 0.80), tl " + fmt(tl0) + " -> " +
                                            fmt(tl1) + " (ratio " + fmt(tl1 / tl0) + ", gate 0.5), " +
                                            fmt(report.wall_seconds) + " s"};
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const Image original = support::texture_image(64, 64, 1.0, 5);
  const Mask m = make_random_mask(64, 64, 50, 5);
  const Image source = corrupt(original, m);
  RunConfig c;
  c.task = Task::restore_random;
  c.mask_fraction = 0.5;
  c.iterations = 12;
  c.seed = 7;
  c = validate_config(c);
  const auto dir = support::temp_dir("acceptance_determinism");

  Trainer<float> a(c, backbone_f(), source, m), b(c, backbone_f(), source, m);
  a.run();
  b.run();
  Trainer<float> first(c, backbone_f(), source, m);
  first.run_until(5);
  first.save_state((dir / "state.bin").string());
  auto resumed = Trainer<float>::from_archive(Archive::load((dir / "state.bin").string()), backbone_f());
  resumed.run();

  save_image((dir / "a.png").string(), a.result());
  save_image((dir / "b.png").string(), b.result());
  save_image((dir / "r.png").string(), resumed.result());
  const std::string pa = file_bytes(dir / "a.png");
  const bool traces = a.trace() == b.trace() && a.trace() == resumed.trace();
  const bool pngs = !pa.empty() && pa == file_bytes(dir / "b.png") && pa == file_bytes(dir / "r.png");
  return {traces && pngs, std::string("traces ") + (traces ? "identical" : "differ") + ", PNGs " +
                              (pngs ? "identical" : "differ") + " (incl. resume at iteration 5)"};
}

Outcome metrics() {
  const Image zero(32, 32, 0.0f);
  // Constant offsets of 0.1 and sqrt(0.001) give MSE 0.01 and 0.001.
  const Image p1(32, 32, 0.1f), p2(32, 32, static_cast<float>(std::sqrt(0.001)));
  const double d20 = psnr_from_mse(0.01), d30 = psnr_from_mse(0.001);
  const bool closed = std::abs(d20 - 20.0) < 1e-9 && std::abs(d30 - 30.0) < 1e-9 &&
                      std::abs(psnr(p1, zero) - 20.0) < 1e-4 && std::abs(psnr(p2, zero) - 30.0) < 1e-4;
  const Image t = support::texture_image(48, 48);
  const bool ident = ssim(t, t) == 1.0;
  bool rejects = false;
  try {
    masked_ssim(t, t, Mask(48, 48, 1));
  } catch (const ShapeError&) {
    rejects = true;
  }
  return {closed && ident && rejects, "psnr " + fmt(psnr(p1, zero)) + " / " + fmt(psnr(p2, zero)) + " dB, ssim(a,a) " +
                                          fmt(ssim(t, t)) + ", hole-free masked_ssim " +
                                          (rejects ? "rejected" : "accepted")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"cx oracle equivalence", cx_oracle},
      {"gradient correctness", gradients},
      {"loss algebra", loss_algebra},
      {"lsgan closed forms", lsgan},
      {"mask exactness", masks},
      {"autoencoding sanity", autoencode},
      {"desk-scale restoration gate", restoration_gate},
      {"determinism", determinism},
      {"metrics correctness", metrics},
  };
  int failures = 0;
  for (int k = 0; k < 9; ++k) {
    const int id = k + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("criterion %d %s: %s (%s) [%.1f s]\n", id, criteria[k].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), s);
    std::fflush(stdout);
  }
  if (selected.empty() || selected.count(10))
    std::printf("criterion 10 full-scale outpainting (optional): NOT RUN (needs the Set5 images, converted "
                "pretrained weights and a GPU-scale budget; reported only)\n");
  return failures == 0 ? 0 : 1;
}
