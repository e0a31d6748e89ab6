#include "rft/homography.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "rft/error.hpp"
#include "rft/random.hpp"

namespace rft {

Homography::Homography(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) throw Error("homography has non-finite entries");
  if (std::abs(m(2, 2)) < 1e-12) throw Error("homography cannot be normalized (H22 == 0)");
  m_ = m / m(2, 2);
  if (std::abs(m_.determinant()) <= 1e-8) throw Error("degenerate homography (|det| <= 1e-8)");
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

Homography Homography::scaling(double sx, double sy) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = sx;
  m(1, 1) = sy;
  return Homography(m);
}

Homography Homography::inverse() const { return Homography(m_.inverse()); }

Homography Homography::operator*(const Homography& other) const { return Homography(m_ * other.m_); }

std::optional<Eigen::Vector2d> Homography::apply(const Eigen::Vector2d& p) const {
  const Eigen::Vector3d q = m_ * p.homogeneous();
  if (std::abs(q.z()) < 1e-12) return std::nullopt;
  return q.hnormalized();
}

Homography compose(const Homography& outer, const Homography& inner) { return outer * inner; }

void HomographyConfig::validate() const {
  if (!(scale_min > 0) || !(scale_min <= scale_max)) throw ConfigError("homography: invalid scale range");
  if (max_rotation_deg < 0 || max_perspective < 0 || max_translation_frac < 0)
    throw ConfigError("homography: magnitudes must be >= 0");
}

Homography homography_from_points(const std::array<Eigen::Vector2d, 4>& from,
                                  const std::array<Eigen::Vector2d, 4>& to) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = from[i].x(), y = from[i].y(), u = to[i].x(), v = to[i].y();
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b[2 * i] = u;
    b[2 * i + 1] = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Eigen::Matrix3d m;
  m << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0;
  return Homography(m);
}

Homography sample_homography(const HomographyConfig& cfg, std::uint64_t draw_seed) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, draw_seed));
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
    const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    const double tx = rng.uniform(-cfg.max_translation_frac, cfg.max_translation_frac);
    const double ty = rng.uniform(-cfg.max_translation_frac, cfg.max_translation_frac);
    const std::array<Eigen::Vector2d, 4> corners = {Eigen::Vector2d(-0.5, -0.5), Eigen::Vector2d(0.5, -0.5),
                                                    Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(-0.5, 0.5)};
    std::array<Eigen::Vector2d, 4> jittered;
    for (int i = 0; i < 4; ++i) {
      jittered[i] = corners[i] + Eigen::Vector2d(rng.uniform(-cfg.max_perspective, cfg.max_perspective),
                                                 rng.uniform(-cfg.max_perspective, cfg.max_perspective));
    }
    try {
      Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
      t(0, 2) = tx;
      t(1, 2) = ty;
      Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
      r.topLeftCorner<2, 2>() << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
      Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
      s(0, 0) = s(1, 1) = scale;
      const Homography p = cfg.max_perspective > 0 ? homography_from_points(corners, jittered) : Homography();
      return Homography(t * r * s * p.matrix());
    } catch (const Error&) {
      continue;
    }
  }
  throw Error("sample_homography: 100 degenerate draws");
}

Homography to_pixel_frame(const Homography& normalized, const Eigen::Vector2d& center, double size) {
  Eigen::Matrix3d to_px = Eigen::Matrix3d::Identity();
  to_px(0, 0) = to_px(1, 1) = size;
  to_px(0, 2) = center.x();
  to_px(1, 2) = center.y();
  Eigen::Matrix3d from_px = Eigen::Matrix3d::Identity();
  from_px(0, 0) = from_px(1, 1) = 1.0 / size;
  from_px(0, 2) = -center.x() / size;
  from_px(1, 2) = -center.y() / size;
  return Homography(to_px * normalized.matrix() * from_px);
}

std::vector<WarpedPoint> warp_points(const std::vector<Eigen::Vector2d>& points, const Homography& h) {
  std::vector<WarpedPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    auto q = h.apply(p);
    out.push_back(q ? WarpedPoint{*q, true} : WarpedPoint{});
  }
  return out;
}

double WarpField::valid_fraction() const {
  if (valid.empty()) return 0.0;
  std::size_t n = 0;
  for (auto v : valid) n += v;
  return static_cast<double>(n) / static_cast<double>(valid.size());
}

WarpField WarpField::identity(int width, int height) {
  WarpField w;
  w.width = width;
  w.height = height;
  w.grid.resize(static_cast<std::size_t>(width) * height);
  w.valid.assign(w.grid.size(), 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) w.grid[static_cast<std::size_t>(y) * width + x] = Eigen::Vector2f(x, y);
  return w;
}

WarpField warp_field_for(const Homography& h_ab, Eigen::Vector2i offset_a, Eigen::Vector2i offset_b, int size_a_w,
                         int size_a_h, int size_b_w, int size_b_h) {
  WarpField w;
  w.width = size_b_w;
  w.height = size_b_h;
  w.grid.assign(static_cast<std::size_t>(size_b_w) * size_b_h, Eigen::Vector2f::Zero());
  w.valid.assign(w.grid.size(), 0);
  const Eigen::Matrix3d& m = h_ab.matrix();
  for (int y = 0; y < size_b_h; ++y) {
    for (int x = 0; x < size_b_w; ++x) {
      const Eigen::Vector3d q = m * Eigen::Vector3d(x + offset_b.x(), y + offset_b.y(), 1.0);
      if (std::abs(q.z()) < 1e-12) continue;
      const double u = q.x() / q.z() - offset_a.x();
      const double v = q.y() / q.z() - offset_a.y();
      const std::size_t i = static_cast<std::size_t>(y) * size_b_w + x;
      w.grid[i] = Eigen::Vector2f(static_cast<float>(u), static_cast<float>(v));
      w.valid[i] = (u >= 0 && v >= 0 && u <= size_a_w - 1 && v <= size_a_h - 1) ? 1 : 0;
    }
  }
  return w;
}

Image warp_image(const Image& image, const Homography& h, int out_width, int out_height, float fill,
                 std::vector<std::uint8_t>* inside) {
  Image out(out_width, out_height, image.channels, fill);
  if (inside) inside->assign(static_cast<std::size_t>(out_width) * out_height, 0);
  const Eigen::Matrix3d& m = h.matrix();
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Eigen::Vector3d q = m * Eigen::Vector3d(x, y, 1.0);
      if (std::abs(q.z()) < 1e-12) continue;
      const double u = q.x() / q.z(), v = q.y() / q.z();
      if (u < 0 || v < 0 || u > image.width - 1 || v > image.height - 1) continue;
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = sample_bilinear(image, u, v, c);
      if (inside) (*inside)[static_cast<std::size_t>(y) * out_width + x] = 1;
    }
  }
  return out;
}

CropPair make_crop_pair(const Image& image_a, const Image& image_b, const Homography& h_ab,
                        const CropOptions& options, std::uint64_t draw_seed) {
  const int c = options.crop_size;
  if (image_a.width != image_b.width || image_a.height != image_b.height)
    throw Error("make_crop_pair: images must share pixel geometry");
  if (image_a.width < c || image_a.height < c) throw Error("make_crop_pair: image smaller than crop");
  Rng rng(draw_seed);
  const Homography h_ba = h_ab.inverse();
  for (int attempt = 0; attempt < options.max_tries; ++attempt) {
    const Eigen::Vector2i offset_a(static_cast<int>(rng.below(image_a.width - c + 1)),
                                   static_cast<int>(rng.below(image_a.height - c + 1)));
    const double half = (c - 1) / 2.0;
    const auto center_b = h_ba.apply(Eigen::Vector2d(offset_a.x() + half, offset_a.y() + half));
    const double jx = rng.uniform(-options.placement_jitter, options.placement_jitter) * c;
    const double jy = rng.uniform(-options.placement_jitter, options.placement_jitter) * c;
    if (!center_b) continue;
    const Eigen::Vector2i offset_b(static_cast<int>(std::lround(center_b->x() - half + jx)),
                                   static_cast<int>(std::lround(center_b->y() - half + jy)));
    WarpField warp = warp_field_for(h_ab, offset_a, offset_b, c, c, c, c);
    if (warp.valid_fraction() < options.min_overlap) continue;

    CropPair pair;
    pair.offset_a = offset_a;
    pair.offset_b = offset_b;
    pair.crop_a = Image(c, c, image_a.channels);
    for (int y = 0; y < c; ++y)
      for (int x = 0; x < c; ++x)
        for (int ch = 0; ch < image_a.channels; ++ch)
          pair.crop_a.at(x, y, ch) = image_a.at(x + offset_a.x(), y + offset_a.y(), ch);
    const Homography crop_b_to_image = h_ab * Homography::translation(offset_b.x(), offset_b.y());
    pair.crop_b = warp_image(image_b, crop_b_to_image, c, c);
    pair.warp = std::move(warp);
    return pair;
  }
  throw Error("insufficient overlap");
}

}  // namespace rft
