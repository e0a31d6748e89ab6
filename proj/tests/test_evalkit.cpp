#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "rft/error.hpp"
#include "rft/evalkit.hpp"
#include "rft/random.hpp"
#include "test_support.hpp"

using namespace rft;
using Eigen::Vector2d;
using Eigen::Vector3d;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

FeatureSet keypoints_at(const std::vector<Vector2d>& pts, int dim = 4) {
  FeatureSet f;
  f.dim = dim;
  for (const auto& p : pts) {
    f.keypoints.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), 1, 0.9f, 0.9f});
    for (int d = 0; d < dim; ++d) f.descriptors.push_back(d == 0 ? 1.0f : 0.0f);
  }
  return f;
}

FeatureSet random_descriptors(int n, int dim, std::uint64_t seed) {
  Rng rng(seed);
  FeatureSet f;
  f.dim = dim;
  for (int i = 0; i < n; ++i) {
    f.keypoints.push_back({static_cast<float>(i), 0, 1, 0.9f, 0.9f});
    std::vector<double> v(dim);
    double norm = 0;
    for (auto& x : v) norm += (x = rng.normal()) * x;
    for (auto x : v) f.descriptors.push_back(static_cast<float>(x / std::sqrt(norm)));
  }
  return f;
}

PoseRecord pose_at(const Eigen::Quaterniond& q, const Vector3d& center) {
  PoseRecord p;
  p.q = q;
  p.t = -(q.toRotationMatrix() * center);
  return p;
}

/// Brute-force reference for mutual nearest neighbors.
std::vector<std::pair<int, int>> oracle_mnn(const FeatureSet& a, const FeatureSet& b) {
  auto dist = [&](int i, int j) {
    double s = 0;
    for (int d = 0; d < a.dim; ++d) s += std::pow(a.descriptor(i)[d] - b.descriptor(j)[d], 2);
    return s;
  };
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < static_cast<int>(a.size()); ++i) {
    int best = 0;
    for (int j = 1; j < static_cast<int>(b.size()); ++j)
      if (dist(i, j) < dist(i, best)) best = j;
    int back = 0;
    for (int k = 1; k < static_cast<int>(a.size()); ++k)
      if (dist(k, best) < dist(back, best)) back = k;
    if (back == i) out.emplace_back(i, best);
  }
  return out;
}

}  // namespace

TEST(MutualNn, IdenticalSetsMatchIdentically) {
  const FeatureSet a = random_descriptors(30, 16, 1);
  const MatchSet m = mutual_nn(a, a);
  ASSERT_EQ(m.size(), 30u);
  for (int i = 0; i < 30; ++i) {
    EXPECT_EQ(m.pairs[i].index_a, i);
    EXPECT_EQ(m.pairs[i].index_b, i);
    EXPECT_NEAR(m.pairs[i].distance, 0.0f, 1e-6);
  }
}

TEST(MutualNn, SingleQueryPicksNearer) {
  FeatureSet a, b;
  a.dim = b.dim = 2;
  a.keypoints.resize(1);
  a.descriptors = {1, 0};
  b.keypoints.resize(2);
  b.descriptors = {0, 1, 0.8f, 0.6f};
  const MatchSet m = mutual_nn(a, b);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.pairs[0].index_b, 1);
  EXPECT_NEAR(m.pairs[0].distance, std::sqrt(0.04 + 0.36), 1e-6);
}

TEST(MutualNn, MatchesBruteForceAndIsBijective) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const FeatureSet a = random_descriptors(25, 8, 2 * s), b = random_descriptors(40, 8, 2 * s + 1);
    const MatchSet m = mutual_nn(a, b);
    std::vector<std::pair<int, int>> got;
    std::set<int> seen_a, seen_b;
    for (const auto& p : m.pairs) {
      got.emplace_back(p.index_a, p.index_b);
      EXPECT_TRUE(seen_a.insert(p.index_a).second);
      EXPECT_TRUE(seen_b.insert(p.index_b).second);
    }
    EXPECT_EQ(got, oracle_mnn(a, b));
  }
}

TEST(MutualNn, RelabelingBPermutesMatches) {
  const FeatureSet a = random_descriptors(20, 8, 3), b = random_descriptors(20, 8, 4);
  FeatureSet rb = b;
  const int n = 20;
  for (int j = 0; j < n; ++j) {
    rb.keypoints[j] = b.keypoints[n - 1 - j];
    std::copy(b.descriptor(n - 1 - j), b.descriptor(n - 1 - j) + 8, rb.descriptors.begin() + j * 8);
  }
  const MatchSet m = mutual_nn(a, b), mr = mutual_nn(a, rb);
  ASSERT_EQ(m.size(), mr.size());
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(mr.pairs[i].index_b, n - 1 - m.pairs[i].index_b);
}

TEST(MutualNn, EmptySideGivesNoMatches) {
  FeatureSet empty;
  empty.dim = 8;
  EXPECT_EQ(mutual_nn(empty, random_descriptors(3, 8, 0)).size(), 0u);
}

TEST(Repeatability, IdenticalKeypoints) {
  const FeatureSet a = keypoints_at({{1, 2}, {30, 40}, {7, 7}});
  EXPECT_DOUBLE_EQ(repeatability_at(a, a, Homography::identity(), 0.1).value, 1.0);
}

TEST(Repeatability, DistanceThreePointFive) {
  const FeatureSet a = keypoints_at({{10, 10}}), b = keypoints_at({{13.5, 10}});
  EXPECT_DOUBLE_EQ(repeatability_at(a, b, Homography::identity(), 3).value, 0.0);
  EXPECT_DOUBLE_EQ(repeatability_at(a, b, Homography::identity(), 4).value, 1.0);
}

TEST(Repeatability, ExactTranslation) {
  const FeatureSet a = keypoints_at({{10, 10}, {50, 20}, {3, 90}}), b = keypoints_at({{15, 10}, {55, 20}, {8, 90}});
  EXPECT_DOUBLE_EQ(repeatability_at(a, b, Homography::translation(5, 0), 0.5).value, 1.0);
}

TEST(Repeatability, EachBKeypointCountsOnce) {
  const FeatureSet a = keypoints_at({{10, 10}, {11, 10}}), b = keypoints_at({{10.5, 10}, {200, 200}});
  EXPECT_DOUBLE_EQ(repeatability_at(a, b, Homography::identity(), 3).value, 0.5);
}

TEST(Repeatability, EmptySideIsFlagged) {
  const auto r = repeatability_at(keypoints_at({}), keypoints_at({{1, 1}}), Homography::identity(), 3);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.empty_input);
}

TEST(Mma, HalfDisplaced) {
  const FeatureSet a = keypoints_at({{0, 0}, {10, 0}, {20, 0}, {30, 0}});
  const FeatureSet b = keypoints_at({{0, 0}, {20, 0}, {20, 0}, {40, 0}});
  MatchSet m;
  for (int i = 0; i < 4; ++i) m.pairs.push_back({i, i, 0});
  EXPECT_DOUBLE_EQ(mma_at(m, a, b, Homography::identity(), 3).value, 0.5);
  EXPECT_DOUBLE_EQ(mma_at(m, a, a, Homography::identity(), 3).value, 1.0);
  EXPECT_TRUE(mma_at({}, a, b, Homography::identity(), 3).empty_input);
}

TEST(Mma, NonIncreasingAsEpsShrinks) {
  Rng rng(5);
  std::vector<Vector2d> pa, pb;
  for (int i = 0; i < 50; ++i) {
    pa.emplace_back(rng.uniform(0, 100), rng.uniform(0, 100));
    pb.push_back(pa.back() + Vector2d(rng.normal(0, 3), rng.normal(0, 3)));
  }
  MatchSet m;
  for (int i = 0; i < 50; ++i) m.pairs.push_back({i, i, 0});
  const FeatureSet a = keypoints_at(pa), b = keypoints_at(pb);
  double prev = 1.0;
  for (double eps = 10; eps > 0.1; eps -= 0.5) {
    const double v = mma_at(m, a, b, Homography::identity(), eps).value;
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(PoseError, HandValues) {
  const PoseRecord gt = pose_at(Eigen::Quaterniond::Identity(), {1, 2, 3});
  EXPECT_EQ(pose_error(gt, gt).meters, 0.0);
  EXPECT_EQ(pose_error(gt, gt).degrees, 0.0);

  const PoseRecord rotated =
      pose_at(Eigen::Quaterniond(Eigen::AngleAxisd(10 * std::numbers::pi / 180, Vector3d::UnitZ())), {1, 2, 3});
  EXPECT_NEAR(pose_error(rotated, gt).meters, 0.0, 1e-12);
  EXPECT_NEAR(pose_error(rotated, gt).degrees, 10.0, 1e-6);

  const PoseRecord moved = pose_at(Eigen::Quaterniond::Identity(), {4, 6, 3});
  EXPECT_NEAR(pose_error(moved, gt).meters, 5.0, 1e-6);
  EXPECT_NEAR(pose_error(moved, gt).degrees, 0.0, 1e-6);
}

TEST(PoseError, SymmetricAndSignInvariant) {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const PoseRecord a = pose_at(Eigen::Quaterniond::UnitRandom(), {rng.normal(), rng.normal(), rng.normal()});
    const PoseRecord b = pose_at(Eigen::Quaterniond::UnitRandom(), {rng.normal(), rng.normal(), rng.normal()});
    EXPECT_NEAR(pose_error(a, b).meters, pose_error(b, a).meters, 1e-9);
    EXPECT_NEAR(pose_error(a, b).degrees, pose_error(b, a).degrees, 1e-9);
    PoseRecord neg = a;
    neg.q.coeffs() *= -1;
    EXPECT_NEAR(pose_error(neg, b).degrees, pose_error(a, b).degrees, 1e-9);
  }
}

TEST(PoseError, NonUnitQuaternionFails) {
  PoseRecord bad;
  bad.q = Eigen::Quaterniond(1.01, 0, 0, 0);
  EXPECT_THROW(pose_error(bad, PoseRecord{}), Error);
}

TEST(SuccessRates, Fixture) {
  const auto r = success_rates({{0.1, 1}, {0.3, 3}, {4, 8}, {10, 1}});
  EXPECT_EQ(r.percent, (std::array<double, 3>{25.0, 50.0, 75.0}));
}

TEST(SuccessRates, Extremes) {
  EXPECT_EQ(success_rates({{0, 0}, {0, 0}}).percent, (std::array<double, 3>{100, 100, 100}));
  EXPECT_EQ(success_rates({PoseError::failure(), {kInf, kInf}}).percent, (std::array<double, 3>{0, 0, 0}));
  EXPECT_THROW(success_rates({}), Error);
}

TEST(SynthBenchmark, CountsAndUnitQuaternions) {
  const Image texture = make_texture(320, 240, 1);
  const SynthBenchmark b = synth_benchmark(10, 5, texture, 2);
  EXPECT_EQ(b.database.size(), 10u);
  EXPECT_EQ(b.queries.size(), 5u);
  for (const auto& v : b.database) EXPECT_NEAR(v.pose.q.norm(), 1.0, 1e-12);
  for (const auto& v : b.queries) EXPECT_NEAR(v.pose.q.norm(), 1.0, 1e-12);
  EXPECT_EQ(b.retrieval.entries.size(), 5u);
}

TEST(SynthBenchmark, DeterministicGivenSeed) {
  const Image texture = make_texture(320, 240, 1);
  const auto a = synth_benchmark(3, 2, texture, 9), b = synth_benchmark(3, 2, texture, 9);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a.database[i].image, b.database[i].image);
    EXPECT_EQ(a.database[i].pose.t, b.database[i].pose.t);
  }
}

TEST(RenderPlaneView, FrontoParallelViewIsScaledTextureCrop) {
  const Image texture = make_texture(400, 400, 3);
  PlaneGeometry plane;
  plane.extent_u = plane.extent_v = 400 * 0.05;
  Intrinsics k{300, 300, 79.5, 59.5, 160, 120};
  // Camera looking straight down at the plane center; x_cam = (s, -t, -z) + t.
  PoseRecord pose;
  pose.q = Eigen::Quaterniond(Eigen::AngleAxisd(std::numbers::pi, Vector3d::UnitX()));
  const Vector3d center(10, 10, 10);
  pose.t = -(pose.rotation() * center);
  const Image view = render_plane_view(texture, pose, k, plane, 4);
  // Closed form: pixel (x, y) sees plane point center.xy + ((x - cx), -(y - cy)) · z / f.
  std::vector<double> a, b;
  for (int y = 5; y < 115; ++y)
    for (int x = 5; x < 155; ++x) {
      const double s = 10 + (x - k.cx) * 10 / 300, t = 10 - (y - k.cy) * 10 / 300;
      a.push_back(view.at(x, y, 1));
      b.push_back(sample_bilinear(texture, s / 0.05 - 0.5, t / 0.05 - 0.5, 1));
    }
  const double n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    sab += (a[i] - ma) * (b[i] - mb), saa += (a[i] - ma) * (a[i] - ma), sbb += (b[i] - mb) * (b[i] - mb);
  EXPECT_GT(sab / std::sqrt(saa * sbb), 0.99);
}

TEST(PlaneToImage, ProjectsPlanePoints) {
  const SynthBenchmark b = synth_benchmark(2, 1, make_texture(320, 240, 1), 4);
  const PoseRecord& pose = b.database[0].pose;
  const Homography h = plane_to_image(pose, b.intrinsics, b.plane);
  const Vector3d x = pose.rotation() * (b.plane.origin + 3 * b.plane.axis_u + 5 * b.plane.axis_v) + pose.t;
  const Vector3d px = b.intrinsics.matrix() * x;
  EXPECT_LT((*h.apply({3, 5}) - px.hnormalized()).norm(), 1e-9);
}

namespace {

/// Correspondences from plane points seen by a known camera, optionally with pixel noise.
std::vector<Correspondence2D3D> plane_correspondences(const PoseRecord& pose, const Intrinsics& k,
                                                      const PlaneGeometry& plane, int n, double noise_px,
                                                      std::uint64_t seed) {
  Rng rng(seed);
  const Homography h = plane_to_image(pose, k, plane);
  std::vector<Correspondence2D3D> out;
  while (static_cast<int>(out.size()) < n) {
    const double s = rng.uniform(0, plane.extent_u), t = rng.uniform(0, plane.extent_v);
    const auto p = h.apply({s, t});
    if (!p || p->x() < 0 || p->y() < 0 || p->x() > k.width - 1 || p->y() > k.height - 1) continue;
    out.push_back({*p + Vector2d(rng.normal(0, noise_px), rng.normal(0, noise_px)),
                   plane.origin + s * plane.axis_u + t * plane.axis_v});
  }
  return out;
}

}  // namespace

TEST(PlanarPnp, NoiseFreeRecoversPose) {
  const SynthBenchmark b = synth_benchmark(3, 0, make_texture(320, 240, 1), 5);
  for (const auto& view : b.database) {
    const auto corr = plane_correspondences(view.pose, b.intrinsics, b.plane, 60, 0.0, 1);
    const auto r = solve_planar_pnp_ransac(corr, b.plane, b.intrinsics, {});
    ASSERT_TRUE(r.pose);
    const PoseError e = pose_error(*r.pose, view.pose);
    EXPECT_LT(e.meters, 1e-3);
    EXPECT_LT(e.degrees, 1e-2);
  }
}

TEST(PlanarPnp, RobustToOutliers) {
  const SynthBenchmark b = synth_benchmark(1, 0, make_texture(320, 240, 1), 6);
  auto corr = plane_correspondences(b.database[0].pose, b.intrinsics, b.plane, 80, 0.5, 2);
  Rng rng(3);
  for (int i = 0; i < 60; ++i)
    corr.push_back({{rng.uniform(0, 319), rng.uniform(0, 239)},
                    b.plane.origin + rng.uniform(0, b.plane.extent_u) * b.plane.axis_u +
                        rng.uniform(0, b.plane.extent_v) * b.plane.axis_v});
  const auto r = solve_planar_pnp_ransac(corr, b.plane, b.intrinsics, {});
  ASSERT_TRUE(r.pose);
  const PoseError e = pose_error(*r.pose, b.database[0].pose);
  EXPECT_LT(e.meters, 0.25);
  EXPECT_LT(e.degrees, 2.0);
}

TEST(PlanarPnp, TooFewCorrespondencesFail) {
  const SynthBenchmark b = synth_benchmark(1, 0, make_texture(320, 240, 1), 6);
  EXPECT_FALSE(solve_planar_pnp_ransac({}, b.plane, b.intrinsics, {}).pose);
  const auto corr = plane_correspondences(b.database[0].pose, b.intrinsics, b.plane, 8, 0.0, 1);
  EXPECT_FALSE(solve_planar_pnp_ransac(corr, b.plane, b.intrinsics, {}).pose);
}

namespace {

/// Database and query features sharing exact plane points; keypoints carry one-hot descriptors.
struct PlanarFixture {
  std::map<std::string, DatabaseEntry> db;
  FeatureSet query;
  RetrievalList retrieval;
};

PlanarFixture planar_fixture(const SynthBenchmark& b, const PoseRecord& query_pose, int n, std::uint64_t seed) {
  PlanarFixture fx;
  Rng rng(seed);
  const Homography hq = plane_to_image(query_pose, b.intrinsics, b.plane);
  const Homography hd = plane_to_image(b.database[0].pose, b.intrinsics, b.plane);
  fx.query.dim = fx.db["db"].features.dim = n;
  int made = 0;
  while (made < n) {
    const Vector2d st(rng.uniform(0, b.plane.extent_u), rng.uniform(0, b.plane.extent_v));
    const auto pq = hq.apply(st), pd = hd.apply(st);
    auto inside = [&](const std::optional<Vector2d>& p) {
      return p && p->x() >= 0 && p->y() >= 0 && p->x() <= b.intrinsics.width - 1 && p->y() <= b.intrinsics.height - 1;
    };
    if (!inside(pq) || !inside(pd)) continue;
    for (auto* f : {&fx.query, &fx.db["db"].features}) {
      const Vector2d& p = f == &fx.query ? *pq : *pd;
      f->keypoints.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()), 1, 0.9f, 0.9f});
      for (int d = 0; d < n; ++d) f->descriptors.push_back(d == made ? 1.0f : 0.0f);
    }
    ++made;
  }
  fx.db["db"].pose = b.database[0].pose;
  fx.retrieval.entries.push_back({"q", {"db"}});
  return fx;
}

}  // namespace

TEST(Localize, SelfLocalization) {
  const SynthBenchmark b = synth_benchmark(1, 0, make_texture(320, 240, 1), 7);
  const auto fx = planar_fixture(b, b.database[0].pose, 40, 1);
  const auto r = localize("q", fx.query, fx.retrieval, fx.db, b.plane, b.intrinsics);
  ASSERT_TRUE(r.pose);
  const PoseError e = pose_error(*r.pose, b.database[0].pose);
  EXPECT_LT(e.meters, 0.01);
  EXPECT_LT(e.degrees, 0.1);
}

TEST(Localize, ZeroMatchesFails) {
  const SynthBenchmark b = synth_benchmark(1, 0, make_texture(320, 240, 1), 7);
  auto fx = planar_fixture(b, b.database[0].pose, 20, 1);
  FeatureSet empty;
  empty.dim = fx.query.dim;
  EXPECT_FALSE(localize("q", empty, fx.retrieval, fx.db, b.plane, b.intrinsics).pose);
  EXPECT_EQ(success_rates({PoseError::failure()}).percent, (std::array<double, 3>{0, 0, 0}));
}

TEST(Localize, InvariantToGlobalRigidTransform) {
  const SynthBenchmark b = synth_benchmark(2, 0, make_texture(320, 240, 1), 8);
  const PoseRecord& query_pose = b.database[1].pose;
  const auto fx = planar_fixture(b, query_pose, 40, 2);
  const auto base = localize("q", fx.query, fx.retrieval, fx.db, b.plane, b.intrinsics);
  ASSERT_TRUE(base.pose);

  // World' = R_g · world + t_g; camera-from-world' = (R R_gᵀ, t − R R_gᵀ t_g).
  const Eigen::Quaterniond qg(Eigen::AngleAxisd(0.7, Vector3d(1, 2, 3).normalized()));
  const Vector3d tg(5, -3, 2);
  auto move = [&](PoseRecord p) {
    p.q = (p.q * qg.conjugate()).normalized();
    p.t = p.t - p.rotation() * tg;
    return p;
  };
  PlaneGeometry plane = b.plane;
  plane.origin = qg * plane.origin + tg;
  plane.axis_u = qg * plane.axis_u;
  plane.axis_v = qg * plane.axis_v;
  auto db = fx.db;
  for (auto& [name, entry] : db) entry.pose = move(entry.pose);
  const auto moved = localize("q", fx.query, fx.retrieval, db, plane, b.intrinsics);
  ASSERT_TRUE(moved.pose);
  const PoseError e0 = pose_error(*base.pose, query_pose), e1 = pose_error(*moved.pose, move(query_pose));
  EXPECT_NEAR(e0.meters, e1.meters, 1e-6);
  EXPECT_NEAR(e0.degrees, e1.degrees, 1e-6);
}

TEST(PoseFiles, RoundTrip) {
  rft::testing::TempDir dir("poses");
  const SynthBenchmark b = synth_benchmark(3, 2, make_texture(320, 240, 1), 9);
  std::vector<PoseRecord> poses;
  for (const auto& v : b.database) poses.push_back(v.pose);
  save_poses(poses, dir / "p.txt");
  const auto loaded = load_poses(dir / "p.txt");
  ASSERT_EQ(loaded.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].name, poses[i].name);
    EXPECT_EQ(loaded[i].q.coeffs(), poses[i].q.coeffs());
    EXPECT_EQ(loaded[i].t, poses[i].t);
  }
  save_retrieval(b.retrieval, dir / "r.txt");
  EXPECT_EQ(load_retrieval(dir / "r.txt").entries, b.retrieval.entries);
}

TEST(AppearanceShift, ChangesAppearanceDeterministically) {
  const Image img = make_texture(64, 48, 1);
  for (auto shift : {AppearanceShift::night, AppearanceShift::mist}) {
    const Image a = apply_appearance_shift(img, shift, 3);
    EXPECT_EQ(a, apply_appearance_shift(img, shift, 3));
    EXPECT_NE(a, img);
    for (float v : a.data) ASSERT_TRUE(v >= 0 && v <= 1);
  }
  EXPECT_EQ(apply_appearance_shift(img, AppearanceShift::none, 3), img);
}
