#include <gtest/gtest.h>

#include "rft/error.hpp"
#include "rft/homography.hpp"
#include "rft/random.hpp"
#include "test_support.hpp"

using namespace rft;
using Eigen::Vector2d;

namespace {

Homography random_h(std::uint64_t seed) { return to_pixel_frame(sample_homography({}, seed), {96, 96}, 192); }

}  // namespace

TEST(SampleHomography, DegenerateConfigGivesIdentity) {
  HomographyConfig cfg;
  cfg.max_rotation_deg = 0;
  cfg.scale_min = cfg.scale_max = 1;
  cfg.max_perspective = 0;
  cfg.max_translation_frac = 0;
  EXPECT_EQ(sample_homography(cfg, 17).matrix(), Eigen::Matrix3d::Identity());
}

TEST(SampleHomography, DeterministicGivenDrawSeed) {
  EXPECT_EQ(sample_homography({}, 5).matrix(), sample_homography({}, 5).matrix());
  EXPECT_NE(sample_homography({}, 5).matrix(), sample_homography({}, 6).matrix());
}

TEST(SampleHomography, InverseComposesToIdentity) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Homography h = sample_homography({}, s);
    EXPECT_LT(((h * h.inverse()).matrix() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_DOUBLE_EQ(h(2, 2), 1.0);
  }
}

TEST(SampleHomography, RejectsBadConfig) {
  HomographyConfig cfg;
  cfg.scale_min = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(HomographyCtor, RejectsSingular) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(1, 1) = 0;
  EXPECT_THROW(Homography{m}, Error);
}

TEST(WarpPoints, IdentityLeavesPointsUnchanged) {
  const auto out = warp_points({{3, 4}, {-1.5, 2}}, Homography::identity());
  EXPECT_EQ(out[0].p, Vector2d(3, 4));
  EXPECT_EQ(out[1].p, Vector2d(-1.5, 2));
}

TEST(WarpPoints, UniformScaling) {
  const auto out = warp_points({{3, 4}}, Homography::scaling(2, 2));
  ASSERT_TRUE(out[0].valid);
  EXPECT_EQ(out[0].p, Vector2d(6, 8));
}

TEST(WarpPoints, VanishingHomogeneousCoordinateIsInvalid) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 0) = 1;  // w = x + 1
  const auto out = warp_points({{-1, 0}}, Homography(m));
  EXPECT_FALSE(out[0].valid);
}

TEST(WarpPoints, InverseRoundTrip) {
  Rng rng(1);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Homography h = random_h(s);
    std::vector<Vector2d> pts;
    for (int i = 0; i < 10; ++i) pts.emplace_back(rng.uniform(0, 192), rng.uniform(0, 192));
    const auto fwd = warp_points(pts, h);
    for (int i = 0; i < 10; ++i) {
      const auto back = h.inverse().apply(fwd[i].p);
      ASSERT_TRUE(back);
      EXPECT_LT((*back - pts[i]).norm(), 1e-8);
    }
  }
}

TEST(Compose, MatchesSequentialApplication) {
  Rng rng(2);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Homography h1 = random_h(2 * s), h2 = random_h(2 * s + 1);
    const Vector2d p(rng.uniform(0, 192), rng.uniform(0, 192));
    const auto direct = compose(h1, h2).apply(p);
    const auto inner = h2.apply(p);
    ASSERT_TRUE(direct && inner);
    const auto seq = h1.apply(*inner);
    ASSERT_TRUE(seq);
    EXPECT_LT((*direct - *seq).norm(), 1e-8);
  }
}

TEST(HomographyFromPoints, RecoversKnownHomography) {
  const Homography h = random_h(9);
  std::array<Vector2d, 4> from = {Vector2d(0, 0), Vector2d(100, 0), Vector2d(100, 80), Vector2d(0, 80)}, to;
  for (int i = 0; i < 4; ++i) to[i] = *h.apply(from[i]);
  EXPECT_LT((homography_from_points(from, to).matrix() - h.matrix()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(CropPair, IdentityGivesIdentityGrid) {
  const Image img = rft::testing::structured_image(192, 192, 1);
  CropOptions opt;
  opt.placement_jitter = 0;
  const CropPair pair = make_crop_pair(img, img, Homography::identity(), opt, 3);
  EXPECT_EQ(pair.crop_a.width, 192);
  EXPECT_EQ(pair.crop_b.height, 192);
  EXPECT_EQ(pair.offset_a, Eigen::Vector2i::Zero());
  EXPECT_EQ(pair.offset_b, Eigen::Vector2i::Zero());
  for (int y = 0; y < 192; ++y)
    for (int x = 0; x < 192; ++x) {
      ASSERT_TRUE(pair.warp.is_valid(x, y));
      ASSERT_EQ(pair.warp.at(x, y), Eigen::Vector2f(x, y));
    }
  EXPECT_EQ(pair.crop_a, pair.crop_b);
}

TEST(CropPair, TranslationWarpIsExact) {
  const Image img = rft::testing::structured_image(300, 260, 2);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const CropPair pair = make_crop_pair(img, img, Homography::translation(5, 0), {}, s);
    const Eigen::Vector2i delta = pair.offset_a - pair.offset_b;
    int valid = 0;
    for (int y = 0; y < 192; ++y)
      for (int x = 0; x < 192; ++x) {
        if (!pair.warp.is_valid(x, y)) continue;
        ++valid;
        ASSERT_EQ(pair.warp.at(x, y).x(), static_cast<float>(x + 5 - delta.x()));
        ASSERT_EQ(pair.warp.at(x, y).y(), static_cast<float>(y - delta.y()));
      }
    EXPECT_GE(valid, 0.3 * 192 * 192);
  }
}

TEST(CropPair, OverlapContractOverManyDraws) {
  const Image img = rft::testing::structured_image(256, 256, 3);
  int built = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    try {
      const CropPair pair = make_crop_pair(img, img, random_h(s), {}, s);
      ASSERT_GE(pair.warp.valid_fraction(), 0.30) << s;
      ASSERT_EQ(pair.warp.width, pair.crop_b.width);
      ++built;
    } catch (const Error& e) {
      ASSERT_STREQ(e.what(), "insufficient overlap");
    }
  }
  EXPECT_GT(built, 900);
}

TEST(CropPair, ImpossibleOverlapFails) {
  const Image img = rft::testing::structured_image(192, 192, 4);
  try {
    make_crop_pair(img, img, Homography::scaling(20, 20), {}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "insufficient overlap");
  }
}

TEST(WarpField, AgreesWithWarpPoints) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Homography h = random_h(s);
    const Eigen::Vector2i oa(7, 11), ob(-3, 4);
    const WarpField f = warp_field_for(h, oa, ob, 192, 192, 64, 48);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 64; ++x) {
        if (!f.is_valid(x, y)) continue;
        const auto p = h.apply(Vector2d(x + ob.x(), y + ob.y()));
        ASSERT_TRUE(p);
        const Vector2d expect = *p - oa.cast<double>();
        ASSERT_LT((f.at(x, y).cast<double>() - expect).norm(), 1e-6 * std::max(1.0, expect.norm()));
        ASSERT_GE(f.at(x, y).x(), 0.0f);
        ASSERT_LE(f.at(x, y).x(), 191.0f);
      }
  }
}

TEST(WarpImage, ConstantImageStaysConstant) {
  Image img(64, 64, 3, 0.37f);
  std::vector<std::uint8_t> inside;
  const Image out = warp_image(img, random_h(1), 64, 64, 0.0f, &inside);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (inside[y * 64 + x]) ASSERT_NEAR(out.at(x, y, 1), 0.37f, 1e-6);
}
