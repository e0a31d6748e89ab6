#include <gtest/gtest.h>

#include <cmath>

#include "rft/error.hpp"
#include "rft/losses.hpp"
#include "rft/model.hpp"
#include "rft/random.hpp"
#include "test_support.hpp"

using namespace rft;

namespace {

void expect_contract(const FeatureMaps<float>& m) {
  for (std::size_t p = 0; p < m.pixels(); ++p) {
    double n = 0;
    for (int d = 0; d < m.dim; ++d) n += double(m.desc(d, p)) * m.desc(d, p);
    ASSERT_NEAR(std::sqrt(n), 1.0, 1e-5);
    ASSERT_GT(m.repeatability[p], 0.0f);
    ASSERT_LT(m.repeatability[p], 1.0f);
    ASSERT_GT(m.reliability[p], 0.0f);
    ASSERT_LT(m.reliability[p], 1.0f);
  }
}

}  // namespace

TEST(Forward, StandardModelShapesAndNorms) {
  const auto params = init_params<float>(ModelConfig::standard());
  const auto maps = forward<float>(rft::testing::random_image(64, 64, 1), params);
  EXPECT_EQ(maps.width, 64);
  EXPECT_EQ(maps.height, 64);
  EXPECT_EQ(maps.dim, 128);
  EXPECT_EQ(maps.descriptors.size(), 64u * 64 * 128);
  expect_contract(maps);
}

TEST(Forward, FullResolutionAcrossSizes) {
  Rng rng(2);
  ModelConfig cfg = ModelConfig::toy();
  for (int i = 0; i < 10; ++i) {
    cfg.seed = i;
    const int w = 32 + static_cast<int>(rng.below(40)), h = 32 + static_cast<int>(rng.below(40));
    const auto maps = forward<float>(rft::testing::random_image(w, h, i), init_params<float>(cfg));
    EXPECT_EQ(maps.width, w);
    EXPECT_EQ(maps.height, h);
    expect_contract(maps);
  }
}

TEST(Forward, Deterministic) {
  const auto params = init_params<float>(ModelConfig::toy());
  const Image img = rft::testing::structured_image(48, 40, 3);
  EXPECT_EQ(forward<float>(img, params), forward<float>(img, params));
}

TEST(Forward, RejectsSmallInput) {
  const auto params = init_params<float>(ModelConfig::toy());
  try {
    forward<float>(rft::testing::random_image(31, 64, 0), params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "input too small");
  }
}

TEST(InitParams, DeterministicGivenSeed) {
  ModelConfig cfg = ModelConfig::toy();
  const auto a = init_params<float>(cfg), b = init_params<float>(cfg);
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i].values, b.tensors[i].values);
  cfg.seed = 1;
  EXPECT_NE(init_params<float>(cfg).tensors[0].values, a.tensors[0].values);
}

TEST(InitParams, ToyParameterCountByHand) {
  // 3x3 convs: 3->8, 8->8, 8->16, 16->16, 16->32, then descriptor 32->32; two 1x1 heads 32->2.
  const std::size_t convs = 8 * (3 * 9 + 1) + 8 * (8 * 9 + 1) + 16 * (8 * 9 + 1) + 16 * (16 * 9 + 1) +
                            32 * (16 * 9 + 1) + 32 * (32 * 9 + 1);
  const std::size_t heads = 2 * (2 * 32 + 2);
  const ModelConfig cfg = ModelConfig::toy();
  EXPECT_EQ(cfg.parameter_count(), convs + heads);
  EXPECT_EQ(init_params<float>(cfg).count(), convs + heads);
  EXPECT_LT(convs + heads, 50000u);
}

TEST(InitParams, FreshModelGivesFiniteLoss) {
  const auto params = init_params<float>(ModelConfig::toy());
  const Image img = rft::testing::random_image(48, 48, 4);
  const auto maps = forward<float>(img, params);
  LossConfig cfg;
  cfg.window = 8;
  BatchLossReport report;
  EXPECT_TRUE(std::isfinite(total_loss<float>(maps, maps, WarpField::identity(48, 48), cfg, report)));
}

TEST(ModelConfig, Validation) {
  ModelConfig cfg = ModelConfig::toy();
  cfg.descriptor_dim = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ModelConfig::toy();
  cfg.dilations.pop_back();
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  rft::testing::TempDir dir("ckpt");
  ModelConfig cfg = ModelConfig::toy();
  cfg.seed = 42;
  const auto params = init_params<float>(cfg);
  save_checkpoint(params, dir / "m.ckpt");
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.config, cfg);
  const Image img = rft::testing::structured_image(40, 36, 5);
  EXPECT_EQ(forward<float>(img, loaded), forward<float>(img, params));
}

TEST(Checkpoint, MissingFileFails) { EXPECT_THROW(load_checkpoint("/nonexistent/m.ckpt"), IoError); }

TEST(Backward, MatchesFiniteDifferencesOnOutputs) {
  // Linear functional of all outputs; checks the backward pass independently of the losses.
  ModelConfig cfg = ModelConfig::toy();
  const auto params = init_params<double>(cfg);
  const Image img = rft::testing::structured_image(32, 32, 6);
  ForwardCache<double> cache;
  const auto maps = forward<double>(img, params, &cache);
  FeatureMaps<double> weights(maps.width, maps.height, maps.dim);
  Rng rng(7);
  for (auto& v : weights.descriptors) v = rng.normal();
  for (auto& v : weights.repeatability) v = rng.normal();
  for (auto& v : weights.reliability) v = rng.normal();
  auto objective = [&](const Params<double>& p) {
    const auto m = forward<double>(img, p);
    double s = 0;
    for (std::size_t i = 0; i < m.descriptors.size(); ++i) s += m.descriptors[i] * weights.descriptors[i];
    for (std::size_t i = 0; i < m.pixels(); ++i)
      s += m.repeatability[i] * weights.repeatability[i] + m.reliability[i] * weights.reliability[i];
    return s;
  };
  Params<double> grads = params.zeros_like();
  backward<double>(params, cache, weights, grads);
  int passed = 0;
  const int samples = 30;
  for (int k = 0; k < samples; ++k) {
    const std::size_t i = rng.below(params.count());
    Params<double> plus = params, minus = params;
    plus.flat(i) += 1e-6;
    minus.flat(i) -= 1e-6;
    const double fd = (objective(plus) - objective(minus)) / 2e-6;
    const double scale = std::max(std::abs(fd), std::abs(grads.flat(i)));
    if (scale < 1e-9 || std::abs(fd - grads.flat(i)) / scale < 1e-4) ++passed;
    else ADD_FAILURE() << "param " << i << " fd " << fd << " analytic " << grads.flat(i);
  }
  EXPECT_EQ(passed, samples);
}
