#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rft/extract.hpp"
#include "rft/homography.hpp"
#include "rft/image.hpp"

namespace rft {

struct Match {
  int index_a = 0;
  int index_b = 0;
  float distance = 0;
  bool operator==(const Match&) const = default;
};

/// Partial bijection between two feature sets.
struct MatchSet {
  std::vector<Match> pairs;
  std::size_t size() const { return pairs.size(); }
};

/// Camera-from-world pose: x_cam = R(q) · x_world + t, q = (w, x, y, z).
struct PoseRecord {
  std::string name;
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Matrix3d rotation() const { return q.toRotationMatrix(); }
  Eigen::Vector3d center() const { return -(rotation().transpose() * t); }
};

struct PoseError {
  double meters = std::numeric_limits<double>::infinity();
  double degrees = std::numeric_limits<double>::infinity();
  static PoseError failure() { return {}; }
};

/// query name -> ordered database names.
struct RetrievalList {
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;
  const std::vector<std::string>* find(const std::string& query) const;
};

inline constexpr std::array<std::pair<double, double>, 3> kPoseThresholds = {
    std::pair{0.25, 2.0}, std::pair{0.5, 5.0}, std::pair{5.0, 10.0}};

struct SuccessRates {
  std::array<double, 3> percent = {0, 0, 0};
};

/// Mutual nearest neighbors under Euclidean descriptor distance.
MatchSet mutual_nn(const FeatureSet& a, const FeatureSet& b);

struct ScoreWithFlag {
  double value = 0;
  bool empty_input = false;  // set when the metric was undefined and reported as 0
};

/// Fraction of A keypoints (warped by h_ab) with a distinct B keypoint within eps_px,
/// normalized by min(|A|, |B|); B keypoints are assigned greedily by increasing distance.
ScoreWithFlag repeatability_at(const FeatureSet& a, const FeatureSet& b, const Homography& h_ab, double eps_px);

/// Fraction of matches whose B keypoint lies within eps_px of the warped A keypoint.
ScoreWithFlag mma_at(const MatchSet& matches, const FeatureSet& a, const FeatureSet& b, const Homography& h_ab,
                     double eps_px);

/// Camera-center distance and rotation angle. Throws Error for quaternions off unit norm by > 1e-3.
PoseError pose_error(const PoseRecord& estimate, const PoseRecord& truth);

/// Percent of entries within each of (0.25 m, 2°), (0.5 m, 5°), (5 m, 10°). Throws on empty input.
SuccessRates success_rates(const std::vector<PoseError>& errors);

/// Pinhole intrinsics (no distortion).
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Eigen::Matrix3d matrix() const;
};

/// World plane given by a point and orthonormal in-plane axes; plane coordinates (s, t) map to
/// origin + s·axis_u + t·axis_v.
struct PlaneGeometry {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d axis_u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d axis_v = Eigen::Vector3d::UnitY();
  Eigen::Vector3d normal() const { return axis_u.cross(axis_v); }
  /// Extent of the textured region in plane units.
  double extent_u = 0, extent_v = 0;
};

/// Homography from plane coordinates (s, t) to image pixels for a given camera.
Homography plane_to_image(const PoseRecord& pose, const Intrinsics& k, const PlaneGeometry& plane);

/// Homography mapping pixels of camera `from` into pixels of camera `to` via the plane.
Homography image_to_image(const PoseRecord& from, const PoseRecord& to, const Intrinsics& k,
                          const PlaneGeometry& plane);

struct RenderedView {
  Image image;
  PoseRecord pose;
};

struct SynthBenchmark {
  Intrinsics intrinsics;
  PlaneGeometry plane;
  std::vector<RenderedView> database;
  std::vector<RenderedView> queries;
  RetrievalList retrieval;
};

struct SynthBenchmarkOptions {
  int image_width = 320;
  int image_height = 240;
  double focal = 300.0;
  double texture_meters_per_pixel = 0.05;
  double min_height = 9.0, max_height = 12.0;
  double max_tilt_deg = 15.0;
  double max_yaw_deg = 15.0;
  int retrieval_k = 20;
};

/// Renders database and query views of a textured plane at randomized poses.
SynthBenchmark synth_benchmark(int n_db, int n_q, const Image& texture, std::uint64_t seed,
                               const SynthBenchmarkOptions& options = {});

/// Pinhole rendering of the textured plane; pixels whose ray misses the texture are 0.
Image render_plane_view(const Image& texture, const PoseRecord& pose, const Intrinsics& k, const PlaneGeometry& plane,
                        int supersample = 2);

/// Procedural texture: smooth colored noise with random shapes and edges.
Image make_texture(int width, int height, std::uint64_t seed);

enum class AppearanceShift { none, night, mist };
Image apply_appearance_shift(const Image& image, AppearanceShift shift, std::uint64_t seed);
const char* appearance_name(AppearanceShift shift);

struct LocalizeOptions {
  int retrieval_k = 20;
  double inlier_threshold_px = 3.0;
  int ransac_iterations = 1000;
  int min_inliers = 12;
  std::uint64_t seed = 0;
};

struct LocalizeResult {
  std::optional<PoseRecord> pose;
  int inliers = 0;
  int correspondences = 0;
};

/// Database views known by name: features plus pose.
struct DatabaseEntry {
  FeatureSet features;
  PoseRecord pose;
};

/// 2D-2D matches against retrieved database images are lifted to 2D-3D by back-projecting the
/// database keypoints onto the plane, then a planar PnP is solved inside RANSAC.
LocalizeResult localize(const std::string& query_name, const FeatureSet& query, const RetrievalList& retrieval,
                        const std::map<std::string, DatabaseEntry>& database, const PlaneGeometry& plane,
                        const Intrinsics& intrinsics, const LocalizeOptions& options = {});

struct Correspondence2D3D {
  Eigen::Vector2d pixel;
  Eigen::Vector3d point;
};

/// RANSAC over 4-point planar pose hypotheses followed by Gauss-Newton refinement on the
/// inliers. All points must lie on `plane`.
LocalizeResult solve_planar_pnp_ransac(const std::vector<Correspondence2D3D>& correspondences,
                                       const PlaneGeometry& plane, const Intrinsics& k,
                                       const LocalizeOptions& options);

/// Pose text files: `name qw qx qy qz tx ty tz` per line.
void save_poses(const std::vector<PoseRecord>& poses, const std::filesystem::path& path);
std::vector<PoseRecord> load_poses(const std::filesystem::path& path);

/// Retrieval text files: `query db1 db2 ... dbK` per line.
void save_retrieval(const RetrievalList& list, const std::filesystem::path& path);
RetrievalList load_retrieval(const std::filesystem::path& path);

}  // namespace rft
