#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "rft/image.hpp"

namespace rft {

/// Projective map of the plane, normalized so that H(2,2) == 1.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}
  /// Throws Error when |det| <= 1e-8 or H(2,2) == 0.
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty);
  static Homography scaling(double sx, double sy);

  const Eigen::Matrix3d& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  Homography inverse() const;
  /// (*this) ∘ other: applies `other` first.
  Homography operator*(const Homography& other) const;

  /// Returns nullopt when the homogeneous coordinate vanishes (|w| < 1e-12).
  std::optional<Eigen::Vector2d> apply(const Eigen::Vector2d& p) const;

 private:
  Eigen::Matrix3d m_;
};

Homography compose(const Homography& outer, const Homography& inner);

struct HomographyConfig {
  double max_rotation_deg = 25.0;
  double scale_min = 0.7, scale_max = 1.4;
  double max_perspective = 0.1;       // per-corner jitter, fraction of the reference size
  double max_translation_frac = 0.1;  // fraction of the reference size
  std::uint64_t seed = 0;

  void validate() const;
};

/// Draws H = translation · rotation · scale · perspective in a frame centered at the origin
/// whose unit is the reference size (the crop size); see `to_pixel_frame`.
Homography sample_homography(const HomographyConfig& cfg, std::uint64_t draw_seed);

/// Conjugates a normalized homography into pixel coordinates around `center` with unit `size`.
Homography to_pixel_frame(const Homography& normalized, const Eigen::Vector2d& center, double size);

/// Homography mapping the four `from` points onto the four `to` points.
Homography homography_from_points(const std::array<Eigen::Vector2d, 4>& from,
                                  const std::array<Eigen::Vector2d, 4>& to);

struct WarpedPoint {
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  bool valid = false;
};

std::vector<WarpedPoint> warp_points(const std::vector<Eigen::Vector2d>& points, const Homography& h);

/// Dense correspondence field from crop_b pixels to crop_a coordinates.
struct WarpField {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector2f> grid;  // row-major, (u, v) in crop_a pixels
  std::vector<std::uint8_t> valid;

  bool is_valid(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
  const Eigen::Vector2f& at(int x, int y) const { return grid[static_cast<std::size_t>(y) * width + x]; }
  double valid_fraction() const;

  static WarpField identity(int width, int height);
};

struct CropPair {
  Image crop_a;
  Image crop_b;
  WarpField warp;
  Eigen::Vector2i offset_a = Eigen::Vector2i::Zero();
  Eigen::Vector2i offset_b = Eigen::Vector2i::Zero();
};

struct CropOptions {
  int crop_size = 192;
  double min_overlap = 0.30;
  int max_tries = 50;
  /// crop_b is placed around the warped crop_a center, jittered by up to this fraction of crop_size.
  double placement_jitter = 0.25;
};

/// `h_ab` maps coordinates of the warped view I' (crop_b's frame) into image_a.
/// Throws Error("insufficient overlap") when no placement reaches min_overlap.
CropPair make_crop_pair(const Image& image_a, const Image& image_b, const Homography& h_ab,
                        const CropOptions& options, std::uint64_t draw_seed);

/// Dense warp field for crop_b placed at offset_b in I' against crop_a at offset_a.
WarpField warp_field_for(const Homography& h_ab, Eigen::Vector2i offset_a, Eigen::Vector2i offset_b, int size_a_w,
                         int size_a_h, int size_b_w, int size_b_h);

/// Renders `image` seen through `h` (output pixel p takes image(h(p))). Pixels mapping
/// outside the source are filled with `fill`.
Image warp_image(const Image& image, const Homography& h, int out_width, int out_height, float fill = 0.0f,
                 std::vector<std::uint8_t>* inside = nullptr);

}  // namespace rft
