#include <gtest/gtest.h>

#include <numeric>

#include "deepcfl/report.hpp"
#include "deepcfl/trainer.hpp"
#include "support/testing.hpp"

using namespace deepcfl;

namespace {

std::shared_ptr<const Backbone<float>> backbone() {
  static const auto b = std::make_shared<const Backbone<float>>(Backbone<float>::seeded(0));
  return b;
}

RunConfig restore_config(int iterations, std::uint64_t seed = 0) {
  RunConfig c;
  c.task = Task::restore_random;
  c.mask_fraction = 0.5;
  c.iterations = iterations;
  c.seed = seed;
  return validate_config(c);
}

struct Fixture {
  Image source;
  Mask mask;
};

Fixture random_removal(int side, std::uint64_t seed = 0) {
  const Image original = support::texture_image(side, side, 1.0, seed);
  Mask m = make_random_mask(side, side, 50, seed);
  return {corrupt(original, m), m};
}

void expect_same_trace(const std::vector<LossBreakdown>& a, const std::vector<LossBreakdown>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_TRUE(a[i] == b[i]) << "row " << i << ": tl " << a[i].tl << " vs " << b[i].tl;
}

}  // namespace

TEST(Trainer, IdenticalSeedsGiveIdenticalRuns) {
  const auto f = random_removal(64);
  Trainer<float> a(restore_config(8, 3), backbone(), f.source, f.mask);
  Trainer<float> b(restore_config(8, 3), backbone(), f.source, f.mask);
  a.run();
  b.run();
  expect_same_trace(a.trace(), b.trace());
  EXPECT_EQ(a.output_tensor(), b.output_tensor());
  Trainer<float> c(restore_config(8, 4), backbone(), f.source, f.mask);
  c.run();
  EXPECT_NE(c.trace()[0].tl, a.trace()[0].tl);
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  const auto f = random_removal(64, 1);
  Trainer<float> straight(restore_config(12), backbone(), f.source, f.mask);
  straight.run();

  Trainer<float> first(restore_config(12), backbone(), f.source, f.mask);
  first.run_until(6);
  const auto dir = support::temp_dir("resume");
  const auto path = (dir / "state.bin").string();
  first.save_state(path);
  auto resumed = Trainer<float>::from_archive(Archive::load(path), backbone());
  EXPECT_EQ(resumed.iteration(), 6);
  resumed.run();

  expect_same_trace(straight.trace(), resumed.trace());
  EXPECT_EQ(straight.generator_checksum(), resumed.generator_checksum());
  EXPECT_EQ(straight.discriminator_checksum(), resumed.discriminator_checksum());
  EXPECT_EQ(straight.output_tensor(), resumed.output_tensor());
  EXPECT_EQ(straight.best_iteration(), resumed.best_iteration());
  EXPECT_EQ(straight.best_output_tensor(), resumed.best_output_tensor());
}

TEST(Trainer, SerializationIsByteStable) {
  const auto f = random_removal(64, 2);
  Trainer<float> t(restore_config(3), backbone(), f.source, f.mask);
  t.run();
  const std::string a = t.save_state().serialize();
  EXPECT_EQ(t.save_state().serialize(), a);
  const auto reloaded = Trainer<float>::from_archive(Archive::deserialize(a), backbone());
  EXPECT_EQ(reloaded.save_state().serialize(), a);
}

TEST(Trainer, WrongVersionIsRejected) {
  const auto f = random_removal(64, 2);
  Trainer<float> t(restore_config(1), backbone(), f.source, f.mask);
  std::string bytes = t.save_state().serialize();
  bytes[8] = 99;  // u32 version follows the 8-byte magic
  try {
    Archive::deserialize(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  bytes = t.save_state().serialize();
  bytes[bytes.size() / 2] ^= 0x5a;
  EXPECT_THROW(Archive::deserialize(bytes), FormatError);
}

TEST(Trainer, UpdatesTouchOnlyTheirOwnNetwork) {
  const auto f = random_removal(64, 3);
  Trainer<float> t(restore_config(4), backbone(), f.source, f.mask);
  std::uint64_t gen = t.generator_checksum(), disc = t.discriminator_checksum();
  int d_updates = 0, g_updates = 0;
  t.set_observer([&](StepPhase phase) {
    if (phase == StepPhase::discriminator_updated) {
      ++d_updates;
      EXPECT_EQ(t.generator_checksum(), gen);
      EXPECT_NE(t.discriminator_checksum(), disc);
    } else {
      ++g_updates;
      EXPECT_EQ(t.discriminator_checksum(), disc);
      EXPECT_NE(t.generator_checksum(), gen);
    }
    gen = t.generator_checksum();
    disc = t.discriminator_checksum();
  });
  t.run();
  EXPECT_EQ(d_updates, 4);
  EXPECT_EQ(g_updates, 4);
}

TEST(Trainer, BackboneIsFrozen) {
  const auto f = random_removal(64, 4);
  const std::uint64_t before = backbone()->checksum();
  Trainer<float> t(restore_config(5), backbone(), f.source, f.mask);
  t.run();
  EXPECT_EQ(backbone()->checksum(), before);
}

TEST(Trainer, TraceHonoursCompositionInvariant) {
  const auto f = random_removal(64, 5);
  RunConfig c = restore_config(5);
  c.loss_weights = {.lambda_G = 0.7, .lambda_R = 1.3, .lambda_cal = 0.4, .lambda_cvl = 0.2};
  Trainer<float> t(c, backbone(), f.source, f.mask);
  t.run();
  for (const auto& r : t.trace()) {
    EXPECT_NEAR(r.cfl, 0.4 * r.cal_g + 0.2 * r.cvl, 1e-6 * std::abs(r.cfl));
    EXPECT_NEAR(r.tl, 0.7 * r.cfl + 1.3 * r.rl, 1e-6 * std::abs(r.tl));
    EXPECT_GT(r.cal_d, 0.0);
  }
}

TEST(Trainer, DiscriminatorIdleWithoutAdversarialTerm) {
  const auto f = random_removal(64, 6);
  RunConfig c = restore_config(3);
  c.loss_weights.lambda_cal = 0.0;
  Trainer<float> t(c, backbone(), f.source, f.mask);
  const std::uint64_t disc = t.discriminator_checksum();
  t.run();
  EXPECT_EQ(t.discriminator_checksum(), disc);
  for (const auto& r : t.trace()) {
    EXPECT_EQ(r.cal_g, 0.0);
    EXPECT_EQ(r.cal_d, 0.0);
    EXPECT_GT(r.cvl, 0.0);
  }
}

TEST(Trainer, NonFiniteLossAbortsWithBreakdown) {
  const auto f = random_removal(64, 7);
  Trainer<float> t(restore_config(3), backbone(), f.source, f.mask);
  t.generator().params().back()->value[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    t.step();
    FAIL();
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.iteration(), 0);
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
  }
}

TEST(Trainer, MaskMustMatchImage) {
  const auto f = random_removal(64, 8);
  EXPECT_THROW(Trainer<float>(restore_config(1), backbone(), f.source, Mask(64, 48, 1)), ShapeError);
}

TEST(Trainer, EmitBestAndCompositeSelectOutputs) {
  const auto f = random_removal(64, 9);
  RunConfig c = restore_config(6);
  c.composite_output = true;
  Trainer<float> t(c, backbone(), f.source, f.mask);
  t.run();
  const Image out = t.result();
  EXPECT_EQ(corrupt(out, f.mask), f.source);
  c.composite_output = false;
  c.emit_best = true;
  Trainer<float> b(c, backbone(), f.source, f.mask);
  b.run();
  const auto& tr = b.trace();
  const auto best = std::min_element(tr.begin(), tr.end(), [](auto& x, auto& y) { return x.tl < y.tl; });
  EXPECT_EQ(b.best_iteration(), best - tr.begin());
  EXPECT_EQ(b.result(), Image::clamped(b.best_output_tensor()));
}

TEST(Resize, TwoTimesWidthOnA64Texture) {
  RunConfig c;
  c.task = Task::resize;
  c.iterations = 4;
  c.resize_factor_x = 2.0;
  c.resize_factor_y = 1.0;
  auto [out, report] = train_resize(support::texture_image(64, 64), 2.0, 1.0, c, backbone());
  EXPECT_EQ(out.dims(), (Dims{64, 128}));
  ASSERT_EQ(report.trace.size(), 4u);
  for (const auto& r : report.trace) {
    EXPECT_GT(r.cal_g, 0.0);
    EXPECT_GT(r.rl, 0.0);  // cycle term
  }
}

TEST(Resize, NullObjectiveLeavesParametersUnchanged) {
  RunConfig c;
  c.task = Task::resize;
  c.iterations = 2;
  c.lambda_cyc = 0.0;
  c.loss_weights.lambda_cal = 0.0;
  c.loss_weights.lambda_cvl = 0.0;
  auto t = Trainer<float>::for_resize(c, backbone(), support::texture_image(48, 48));
  const std::uint64_t gen = t.generator_checksum(), disc = t.discriminator_checksum();
  t.run();
  EXPECT_EQ(t.generator_checksum(), gen);
  EXPECT_EQ(t.discriminator_checksum(), disc);
  for (const auto& r : t.trace()) EXPECT_EQ(r.tl, 0.0);
}

TEST(Resize, InvalidTargetIsRejected) {
  RunConfig c;
  c.task = Task::resize;
  c.iterations = 1;
  c.resize_factor_x = 0.5;
  c.resize_factor_y = 1.0;
  EXPECT_THROW(Trainer<float>::for_resize(c, backbone(), support::texture_image(48, 48)), ShapeError);
}
