#include "rft/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "rft/error.hpp"
#include "rft/log.hpp"
#include "rft/random.hpp"

namespace rft {
namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle < 1e-15) return Eigen::Matrix3d::Identity() + skew(w);
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

Eigen::Matrix3d plane_frame(const PlaneGeometry& plane) {
  Eigen::Matrix3d p;
  p.col(0) = plane.axis_u;
  p.col(1) = plane.axis_v;
  p.col(2) = plane.normal();
  return p;
}

// Pose of the camera relative to the plane frame: x_cam = R · (s, t, 0) + t.
struct PlanePose {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

// Planar correspondence: plane coordinates and observed pixel.
struct PlanarObs {
  Eigen::Vector2d st;
  Eigen::Vector2d pixel;
  int pixel_id = 0;  // correspondences sharing a query pixel share an id
};

bool reprojection_error(const PlanePose& pose, const Intrinsics& k, const PlanarObs& obs, double& err) {
  const Eigen::Vector3d xc = pose.r.col(0) * obs.st.x() + pose.r.col(1) * obs.st.y() + pose.t;
  if (xc.z() <= 1e-9) return false;
  const Eigen::Vector2d proj(k.fx * xc.x() / xc.z() + k.cx, k.fy * xc.y() / xc.z() + k.cy);
  err = (proj - obs.pixel).norm();
  return true;
}

std::optional<PlanePose> pose_from_plane_homography(const Eigen::Matrix3d& h_norm) {
  // h_norm maps (s, t, 1) to normalized image coordinates, up to scale.
  const double n1 = h_norm.col(0).norm(), n2 = h_norm.col(1).norm();
  if (n1 < 1e-12 || n2 < 1e-12) return std::nullopt;
  double lambda = 2.0 / (n1 + n2);
  if (h_norm(2, 2) < 0) lambda = -lambda;  // plane origin must be in front of the camera
  Eigen::Matrix3d r;
  r.col(0) = lambda * h_norm.col(0);
  r.col(1) = lambda * h_norm.col(1);
  r.col(2) = r.col(0).cross(r.col(1));
  PlanePose pose;
  pose.r = nearest_rotation(r);
  pose.t = lambda * h_norm.col(2);
  if (!pose.r.allFinite() || !pose.t.allFinite()) return std::nullopt;
  return pose;
}

// Support is the number of distinct query pixels with a correspondence within `threshold`. One
// query keypoint matched into several database images must not count more than once: otherwise a
// camera far away, which projects many 3D points onto one pixel, collects spurious support.
int count_inliers(const PlanePose& pose, const Intrinsics& k, const std::vector<PlanarObs>& obs, double threshold,
                  double& score, std::vector<int>* inliers = nullptr) {
  thread_local std::vector<std::uint8_t> seen;
  seen.assign(obs.size(), 0);
  int n = 0;
  score = 0;
  if (inliers) inliers->clear();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    double err;
    if (!reprojection_error(pose, k, obs[i], err) || err > threshold) continue;
    score += err;
    if (inliers) inliers->push_back(static_cast<int>(i));
    if (!seen[obs[i].pixel_id]) {
      seen[obs[i].pixel_id] = 1;
      ++n;
    }
  }
  return n;
}

PlanePose refine_pose(PlanePose pose, const Intrinsics& k, const std::vector<PlanarObs>& obs,
                      const std::vector<int>& subset) {
  double lambda = 1e-4;
  auto cost = [&](const PlanePose& p) {
    double c = 0;
    for (int i : subset) {
      double e;
      if (!reprojection_error(p, k, obs[i], e)) return std::numeric_limits<double>::infinity();
      c += e * e;
    }
    return c;
  };
  double current = cost(pose);
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (int i : subset) {
      const Eigen::Vector3d rp = pose.r.col(0) * obs[i].st.x() + pose.r.col(1) * obs[i].st.y();
      const Eigen::Vector3d xc = rp + pose.t;
      const double z = xc.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << k.fx / z, 0, -k.fx * xc.x() / (z * z), 0, k.fy / z, -k.fy * xc.y() / (z * z);
      Eigen::Matrix<double, 3, 6> dx;
      dx.leftCols<3>() = -skew(rp);
      dx.rightCols<3>().setIdentity();
      const Eigen::Matrix<double, 2, 6> j = dproj * dx;
      const Eigen::Vector2d r(k.fx * xc.x() / z + k.cx - obs[i].pixel.x(), k.fy * xc.y() / z + k.cy - obs[i].pixel.y());
      jtj += j.transpose() * j;
      jtr += j.transpose() * r;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 10 && !improved; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      a.diagonal() *= (1.0 + lambda);
      const Eigen::Matrix<double, 6, 1> delta = -a.ldlt().solve(jtr);
      PlanePose next;
      next.r = so3_exp(delta.head<3>()) * pose.r;
      next.t = pose.t + delta.tail<3>();
      const double c = cost(next);
      if (c < current) {
        improved = true;
        const double gain = current - c;
        pose = next;
        current = c;
        lambda = std::max(lambda * 0.3, 1e-12);
        if (gain < 1e-14 * (1 + current)) return pose;
      } else {
        lambda *= 10;
      }
    }
    if (!improved) break;
  }
  return pose;
}

PoseRecord to_world_pose(const PlanePose& pose, const PlaneGeometry& plane) {
  const Eigen::Matrix3d frame = plane_frame(plane);
  const Eigen::Matrix3d r_world = pose.r * frame.transpose();
  PoseRecord out;
  out.q = Eigen::Quaterniond(nearest_rotation(r_world));
  out.q.normalize();
  out.t = pose.t - r_world * plane.origin;
  return out;
}

double smooth_noise(const std::vector<float>& lattice, int cells, double u, double v) {
  // Bilinear value noise on a (cells+1)^2 lattice, u, v in [0, 1].
  const double x = u * cells, y = v * cells;
  const int x0 = std::min(static_cast<int>(x), cells - 1), y0 = std::min(static_cast<int>(y), cells - 1);
  const double fx = x - x0, fy = y - y0;
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  auto at = [&](int i, int j) { return lattice[static_cast<std::size_t>(j) * (cells + 1) + i]; };
  const double top = (1 - sx) * at(x0, y0) + sx * at(x0 + 1, y0);
  const double bottom = (1 - sx) * at(x0, y0 + 1) + sx * at(x0 + 1, y0 + 1);
  return (1 - sy) * top + sy * bottom;
}

}  // namespace

const std::vector<std::string>* RetrievalList::find(const std::string& query) const {
  for (const auto& [q, list] : entries)
    if (q == query) return &list;
  return nullptr;
}

MatchSet mutual_nn(const FeatureSet& a, const FeatureSet& b) {
  MatchSet out;
  if (a.size() == 0 || b.size() == 0) return out;
  if (a.dim != b.dim) throw Error("mutual_nn: descriptor dimension mismatch");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
  const auto na = static_cast<Eigen::Index>(a.size()), nb = static_cast<Eigen::Index>(b.size());
  Mat da(a.dim, na), db(b.dim, nb);
  for (Eigen::Index i = 0; i < na; ++i)
    for (int d = 0; d < a.dim; ++d) da(d, i) = a.descriptor(i)[d];
  for (Eigen::Index j = 0; j < nb; ++j)
    for (int d = 0; d < b.dim; ++d) db(d, j) = b.descriptor(j)[d];
  const Eigen::VectorXd sa = da.colwise().squaredNorm().transpose();
  const Eigen::VectorXd sb = db.colwise().squaredNorm().transpose();
  Mat d2 = -2.0 * (da.transpose() * db);
  d2.colwise() += sa;
  d2.rowwise() += sb.transpose();
  std::vector<Eigen::Index> nn_a(na), nn_b(nb);
  for (Eigen::Index i = 0; i < na; ++i) d2.row(i).minCoeff(&nn_a[i]);
  for (Eigen::Index j = 0; j < nb; ++j) d2.col(j).minCoeff(&nn_b[j]);
  for (Eigen::Index i = 0; i < na; ++i) {
    const Eigen::Index j = nn_a[i];
    if (nn_b[j] != i) continue;
    double s = 0;
    for (int d = 0; d < a.dim; ++d) {
      const double diff = static_cast<double>(a.descriptor(i)[d]) - b.descriptor(j)[d];
      s += diff * diff;
    }
    out.pairs.push_back({static_cast<int>(i), static_cast<int>(j), static_cast<float>(std::sqrt(s))});
  }
  return out;
}

ScoreWithFlag repeatability_at(const FeatureSet& a, const FeatureSet& b, const Homography& h_ab, double eps_px) {
  if (!(eps_px > 0)) throw Error("repeatability_at: eps must be > 0");
  if (a.size() == 0 || b.size() == 0) {
    log_debug("repeatability_at: empty feature set");
    return {0.0, true};
  }
  struct Candidate {
    double d;
    int i, j;
  };
  std::vector<Candidate> close;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto w = h_ab.apply(Eigen::Vector2d(a.keypoints[i].x, a.keypoints[i].y));
    if (!w) continue;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = std::hypot(w->x() - b.keypoints[j].x, w->y() - b.keypoints[j].y);
      if (d <= eps_px) close.push_back({d, static_cast<int>(i), static_cast<int>(j)});
    }
  }
  std::stable_sort(close.begin(), close.end(), [](const auto& x, const auto& y) { return x.d < y.d; });
  std::vector<std::uint8_t> used_a(a.size(), 0), used_b(b.size(), 0);
  std::size_t hits = 0;
  for (const auto& c : close) {
    if (used_a[c.i] || used_b[c.j]) continue;
    used_a[c.i] = used_b[c.j] = 1;
    ++hits;
  }
  return {static_cast<double>(hits) / static_cast<double>(std::min(a.size(), b.size())), false};
}

ScoreWithFlag mma_at(const MatchSet& matches, const FeatureSet& a, const FeatureSet& b, const Homography& h_ab,
                     double eps_px) {
  if (matches.size() == 0) {
    log_debug("mma_at: empty match set");
    return {0.0, true};
  }
  std::size_t good = 0;
  for (const auto& m : matches.pairs) {
    if (m.index_a < 0 || m.index_b < 0 || static_cast<std::size_t>(m.index_a) >= a.size() ||
        static_cast<std::size_t>(m.index_b) >= b.size())
      throw Error("mma_at: match references an invalid keypoint");
    const auto& ka = a.keypoints[m.index_a];
    const auto& kb = b.keypoints[m.index_b];
    const auto w = h_ab.apply(Eigen::Vector2d(ka.x, ka.y));
    if (w && std::hypot(w->x() - kb.x, w->y() - kb.y) <= eps_px) ++good;
  }
  return {static_cast<double>(good) / static_cast<double>(matches.size()), false};
}

PoseError pose_error(const PoseRecord& estimate, const PoseRecord& truth) {
  for (const auto* p : {&estimate, &truth}) {
    if (std::abs(p->q.norm() - 1.0) > 1e-3) throw Error("pose_error: quaternion is not unit norm (" + p->name + ")");
  }
  const Eigen::Quaterniond qe = estimate.q.normalized(), qt = truth.q.normalized();
  PoseError e;
  e.meters = (estimate.center() - truth.center()).norm();
  const Eigen::Quaterniond rel = qe.conjugate() * qt;
  e.degrees = 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w())) * kDeg;
  return e;
}

SuccessRates success_rates(const std::vector<PoseError>& errors) {
  if (errors.empty()) throw Error("success_rates: no entries");
  SuccessRates rates;
  for (std::size_t t = 0; t < kPoseThresholds.size(); ++t) {
    std::size_t ok = 0;
    for (const auto& e : errors)
      if (e.meters <= kPoseThresholds[t].first && e.degrees <= kPoseThresholds[t].second) ++ok;
    rates.percent[t] = 100.0 * static_cast<double>(ok) / static_cast<double>(errors.size());
  }
  if (!(rates.percent[0] <= rates.percent[1] && rates.percent[1] <= rates.percent[2]))
    throw Error("success_rates: thresholds are not nested");
  return rates;
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Homography plane_to_image(const PoseRecord& pose, const Intrinsics& k, const PlaneGeometry& plane) {
  const Eigen::Matrix3d r = pose.rotation();
  Eigen::Matrix3d m;
  m.col(0) = r * plane.axis_u;
  m.col(1) = r * plane.axis_v;
  m.col(2) = r * plane.origin + pose.t;
  return Homography(k.matrix() * m);
}

Homography image_to_image(const PoseRecord& from, const PoseRecord& to, const Intrinsics& k,
                          const PlaneGeometry& plane) {
  return plane_to_image(to, k, plane) * plane_to_image(from, k, plane).inverse();
}

Image render_plane_view(const Image& texture, const PoseRecord& pose, const Intrinsics& k, const PlaneGeometry& plane,
                        int supersample) {
  const Homography image_from_plane = plane_to_image(pose, k, plane);
  const Eigen::Matrix3d inv = image_from_plane.inverse().matrix();
  const double mpp_u = plane.extent_u / texture.width;
  const double mpp_v = plane.extent_v / texture.height;
  Image out(k.width, k.height, 3);
  const int ss = std::max(1, supersample);
  const double inv_n = 1.0 / (ss * ss);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      double acc[3] = {0, 0, 0};
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss - 0.5, py = y + (sy + 0.5) / ss - 0.5;
          const Eigen::Vector3d st = inv * Eigen::Vector3d(px, py, 1.0);
          if (std::abs(st.z()) < 1e-12) continue;
          // Reject rays that hit the plane behind the camera.
          const Eigen::Vector3d back = image_from_plane.matrix() * st;
          if (back.z() / st.z() <= 0) continue;
          const double u = st.x() / st.z() / mpp_u - 0.5, v = st.y() / st.z() / mpp_v - 0.5;
          if (u < 0 || v < 0 || u > texture.width - 1 || v > texture.height - 1) continue;
          for (int c = 0; c < 3; ++c) acc[c] += sample_bilinear(texture, u, v, c);
        }
      }
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = static_cast<float>(acc[c] * inv_n);
    }
  }
  return out;
}

Image make_texture(int width, int height, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x7e87u));
  Image img(width, height, 3);
  // Colored background: a coarse and a finer octave of value noise.
  const int coarse = 6, fine = std::max(8, width / 24);
  std::vector<float> lattice[3], detail[3];
  for (int c = 0; c < 3; ++c) {
    lattice[c].resize(static_cast<std::size_t>(coarse + 1) * (coarse + 1));
    for (auto& v : lattice[c]) v = static_cast<float>(rng.uniform(0.2, 0.8));
    detail[c].resize(static_cast<std::size_t>(fine + 1) * (fine + 1));
    for (auto& v : detail[c]) v = static_cast<float>(rng.uniform(-0.15, 0.15));
  }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width, v = (y + 0.5) / height;
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<float>(smooth_noise(lattice[c], coarse, u, v) + smooth_noise(detail[c], fine, u, v));
    }

  // Shapes: filled discs, rectangles and thick line segments with random colors.
  const int shapes = std::max(8, width * height / 160);
  for (int s = 0; s < shapes; ++s) {
    const int kind = static_cast<int>(rng.below(3));
    float color[3];
    for (float& c : color) c = static_cast<float>(rng.uniform());
    const double cx = rng.uniform(0, width), cy = rng.uniform(0, height);
    const double size = rng.uniform(2, 12);
    const double angle = rng.uniform(0, std::numbers::pi);
    const double aspect = rng.uniform(0.3, 1.0);
    const int r = static_cast<int>(std::ceil(size)) + 1;
    for (int y = std::max(0, static_cast<int>(cy) - r); y < std::min(height, static_cast<int>(cy) + r + 1); ++y) {
      for (int x = std::max(0, static_cast<int>(cx) - r); x < std::min(width, static_cast<int>(cx) + r + 1); ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = dx * std::cos(angle) + dy * std::sin(angle);
        const double v = -dx * std::sin(angle) + dy * std::cos(angle);
        bool inside = false;
        if (kind == 0) inside = u * u + (v / aspect) * (v / aspect) <= size * size;
        if (kind == 1) inside = std::abs(u) <= size && std::abs(v) <= size * aspect;
        if (kind == 2) inside = std::abs(u) <= size && std::abs(v) <= 1.2;
        if (inside)
          for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
      }
    }
  }
  for (auto& v : img.data) v = static_cast<float>(v + rng.normal(0.0, 0.01));
  return clamp01(std::move(img));
}

const char* appearance_name(AppearanceShift shift) {
  switch (shift) {
    case AppearanceShift::night: return "night";
    case AppearanceShift::mist: return "mist";
    default: return "none";
  }
}

Image apply_appearance_shift(const Image& image, AppearanceShift shift, std::uint64_t seed) {
  if (shift == AppearanceShift::none) return image;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(shift)));
  Image out = image;
  if (shift == AppearanceShift::night) {
    // Dark, blue-tinted, gamma-compressed, with sensor noise.
    const float tint[3] = {0.55f, 0.65f, 1.0f};
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        for (int c = 0; c < 3; ++c) {
          const float v = std::pow(std::max(image.at(x, y, c), 0.0f), 1.6f);
          out.at(x, y, c) = static_cast<float>(0.32f * tint[c] * v + 0.02f + rng.normal(0.0, 0.01));
        }
  } else {
    // Haze: blend toward a bright veil and desaturate.
    const float veil[3] = {0.80f, 0.82f, 0.85f};
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        const float l = 0.299f * image.at(x, y, 0) + 0.587f * image.at(x, y, 1) + 0.114f * image.at(x, y, 2);
        for (int c = 0; c < 3; ++c) {
          const float desat = 0.5f * image.at(x, y, c) + 0.5f * l;
          out.at(x, y, c) = static_cast<float>(0.4f * desat + 0.6f * veil[c] + rng.normal(0.0, 0.008));
        }
      }
  }
  return clamp01(std::move(out));
}

SynthBenchmark synth_benchmark(int n_db, int n_q, const Image& texture, std::uint64_t seed,
                               const SynthBenchmarkOptions& options) {
  if (n_db < 1 || n_q < 0) throw Error("synth_benchmark: need at least one database image");
  SynthBenchmark bench;
  bench.intrinsics = {options.focal, options.focal, (options.image_width - 1) / 2.0, (options.image_height - 1) / 2.0,
                      options.image_width, options.image_height};
  bench.plane.extent_u = texture.width * options.texture_meters_per_pixel;
  bench.plane.extent_v = texture.height * options.texture_meters_per_pixel;
  // Footprint half-size at the largest height, used to keep views on the textured area.
  const double half_w = options.max_height * options.image_width / (2 * options.focal);
  const double half_h = options.max_height * options.image_height / (2 * options.focal);
  const double margin_u = half_w * 1.2, margin_v = half_h * 1.2;
  if (bench.plane.extent_u <= 2 * margin_u || bench.plane.extent_v <= 2 * margin_v)
    throw Error("synth_benchmark: texture too small for the camera footprint");

  Rng rng(mix_seed(seed, 0xbe7cULL));
  auto make_pose = [&](const Eigen::Vector2d& target, const std::string& name) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double height = rng.uniform(options.min_height, options.max_height);
      const double tilt = rng.uniform(0, options.max_tilt_deg) / kDeg;
      const double tilt_dir = rng.uniform(0, 2 * std::numbers::pi);
      const double yaw = rng.uniform(-options.max_yaw_deg, options.max_yaw_deg) / kDeg;
      const Eigen::Matrix3d r_yaw = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
      const Eigen::Matrix3d r_tilt =
          Eigen::AngleAxisd(tilt, Eigen::Vector3d(std::cos(tilt_dir), std::sin(tilt_dir), 0)).toRotationMatrix();
      const Eigen::Matrix3d r = r_yaw * r_tilt;  // world -> camera
      const Eigen::Vector3d view_dir = r.transpose() * Eigen::Vector3d::UnitZ();
      if (view_dir.z() < 0.2) continue;  // nearly parallel to the plane
      const Eigen::Vector3d target3(target.x(), target.y(), 0.0);
      const Eigen::Vector3d center = target3 - view_dir * (height / view_dir.z());
      PoseRecord pose;
      pose.name = name;
      pose.q = Eigen::Quaterniond(r).normalized();
      pose.t = -(pose.rotation() * center);
      return pose;
    }
    throw Error("synth_benchmark: could not sample a non-degenerate pose");
  };

  const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(n_db * (bench.plane.extent_u - 2 * margin_u) /
                                                                       (bench.plane.extent_v - 2 * margin_v)))));
  const int rows = (n_db + cols - 1) / cols;
  for (int i = 0; i < n_db; ++i) {
    const int gx = i % cols, gy = i / cols;
    const double fu = cols > 1 ? static_cast<double>(gx) / (cols - 1) : 0.5;
    const double fv = rows > 1 ? static_cast<double>(gy) / (rows - 1) : 0.5;
    Eigen::Vector2d target(margin_u + fu * (bench.plane.extent_u - 2 * margin_u),
                           margin_v + fv * (bench.plane.extent_v - 2 * margin_v));
    target += Eigen::Vector2d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    char name[32];
    std::snprintf(name, sizeof(name), "db_%03d", i);
    RenderedView view;
    view.pose = make_pose(target, name);
    view.image = render_plane_view(texture, view.pose, bench.intrinsics, bench.plane);
    bench.database.push_back(std::move(view));
  }
  for (int i = 0; i < n_q; ++i) {
    Eigen::Vector2d target(rng.uniform(margin_u, bench.plane.extent_u - margin_u),
                           rng.uniform(margin_v, bench.plane.extent_v - margin_v));
    char name[32];
    std::snprintf(name, sizeof(name), "query_%03d", i);
    RenderedView view;
    view.pose = make_pose(target, name);
    view.image = render_plane_view(texture, view.pose, bench.intrinsics, bench.plane);
    bench.queries.push_back(std::move(view));
  }
  // Retrieval by camera-center proximity (a stand-in for an image-retrieval system).
  for (const auto& q : bench.queries) {
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& d : bench.database) ranked.emplace_back((d.pose.center() - q.pose.center()).norm(), d.pose.name);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::string> names;
    for (std::size_t k = 0; k < ranked.size() && static_cast<int>(k) < options.retrieval_k; ++k)
      names.push_back(ranked[k].second);
    bench.retrieval.entries.emplace_back(q.pose.name, std::move(names));
  }
  return bench;
}

namespace {

// Every triangle of the four pixels and of the four plane points must have non-trivial area.
bool non_degenerate_sample(const std::vector<PlanarObs>& obs, const std::array<std::size_t, 4>& idx) {
  constexpr int kTriangles[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
  auto area = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    return 0.5 * std::abs((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x());
  };
  double st_scale = 0;
  for (int i = 0; i < 4; ++i) st_scale = std::max(st_scale, (obs[idx[i]].st - obs[idx[0]].st).norm());
  if (st_scale <= 0) return false;
  for (const auto& t : kTriangles) {
    const auto &a = obs[idx[t[0]]], &b = obs[idx[t[1]]], &c = obs[idx[t[2]]];
    if (area(a.pixel, b.pixel, c.pixel) < 4.0) return false;  // px^2
    if (area(a.st, b.st, c.st) < 1e-3 * st_scale * st_scale) return false;
  }
  return true;
}

}  // namespace

LocalizeResult solve_planar_pnp_ransac(const std::vector<Correspondence2D3D>& correspondences,
                                       const PlaneGeometry& plane, const Intrinsics& k,
                                       const LocalizeOptions& options) {
  LocalizeResult result;
  result.correspondences = static_cast<int>(correspondences.size());
  if (correspondences.size() < 4) return result;
  std::vector<PlanarObs> obs;
  obs.reserve(correspondences.size());
  std::map<std::pair<double, double>, int> pixel_ids;
  for (const auto& c : correspondences) {
    const Eigen::Vector3d rel = c.point - plane.origin;
    const int id = pixel_ids.emplace(std::pair{c.pixel.x(), c.pixel.y()}, static_cast<int>(pixel_ids.size())).first->second;
    obs.push_back({Eigen::Vector2d(rel.dot(plane.axis_u), rel.dot(plane.axis_v)), c.pixel, id});
  }
  const Eigen::Matrix3d k_inv = k.matrix().inverse();
  Rng rng(mix_seed(options.seed, 0x9a75acULL));
  std::optional<PlanePose> best;
  int best_inliers = -1;
  double best_score = 0;
  const auto n = obs.size();
  for (int iter = 0; iter < options.ransac_iterations; ++iter) {
    std::array<std::size_t, 4> idx;
    // Degenerate samples (repeated or nearly collinear points) are redrawn, not counted.
    bool usable = false;
    for (int redraw = 0; redraw < 100 && !usable; ++redraw) {
      for (int s = 0; s < 4; ++s) idx[s] = rng.below(n);
      usable = non_degenerate_sample(obs, idx);
    }
    if (!usable) continue;
    std::array<Eigen::Vector2d, 4> from, to;
    for (int s = 0; s < 4; ++s) {
      from[s] = obs[idx[s]].st;
      to[s] = (k_inv * obs[idx[s]].pixel.homogeneous()).hnormalized();
    }
    std::optional<PlanePose> pose;
    try {
      pose = pose_from_plane_homography(homography_from_points(from, to).matrix());
    } catch (const Error&) {
      continue;
    }
    if (!pose) continue;
    // The homography of noisy points is not an exact rotation; fit the pose to the sample itself.
    pose = refine_pose(*pose, k, obs, {static_cast<int>(idx[0]), static_cast<int>(idx[1]), static_cast<int>(idx[2]),
                                       static_cast<int>(idx[3])});
    double score;
    std::vector<int> support;
    int inliers = count_inliers(*pose, k, obs, options.inlier_threshold_px, score, &support);
    if (inliers > 4) {
      // Local optimization: a 4-point hypothesis from noisy, nearby points extrapolates poorly,
      // so any hypothesis with support beyond its own sample is refined and re-scored.
      for (int round = 0; round < 2; ++round) {
        const PlanePose refined = refine_pose(*pose, k, obs, support);
        double refined_score;
        std::vector<int> refined_support;
        const int n_refined = count_inliers(refined, k, obs, options.inlier_threshold_px, refined_score, &refined_support);
        if (n_refined < inliers) break;
        pose = refined;
        inliers = n_refined;
        score = refined_score;
        support = std::move(refined_support);
      }
    }
    if (inliers > best_inliers || (inliers == best_inliers && score < best_score)) {
      best = pose;
      best_inliers = inliers;
      best_score = score;
    }
  }
  if (!best || best_inliers < 4) return result;
  std::vector<int> inliers;
  double score;
  int support = count_inliers(*best, k, obs, options.inlier_threshold_px, score, &inliers);
  PlanePose refined = *best;
  for (int round = 0; round < 3; ++round) {
    const PlanePose candidate = refine_pose(refined, k, obs, inliers);
    std::vector<int> next;
    const int n_next = count_inliers(candidate, k, obs, options.inlier_threshold_px, score, &next);
    if (n_next < support) break;
    refined = candidate;
    support = n_next;
    const bool converged = next == inliers;
    inliers = std::move(next);
    if (converged) break;
  }
  result.inliers = support;
  if (result.inliers < options.min_inliers) return result;
  result.pose = to_world_pose(refined, plane);
  return result;
}

LocalizeResult localize(const std::string& query_name, const FeatureSet& query, const RetrievalList& retrieval,
                        const std::map<std::string, DatabaseEntry>& database, const PlaneGeometry& plane,
                        const Intrinsics& intrinsics, const LocalizeOptions& options) {
  const auto* retrieved = retrieval.find(query_name);
  if (!retrieved) throw Error("localize: query not in retrieval list: " + query_name);
  std::vector<Correspondence2D3D> corr;
  const int k = std::min<int>(options.retrieval_k, static_cast<int>(retrieved->size()));
  for (int r = 0; r < k; ++r) {
    auto it = database.find((*retrieved)[r]);
    if (it == database.end()) throw Error("localize: unknown database image " + (*retrieved)[r]);
    const auto& entry = it->second;
    const Homography pixel_to_plane = plane_to_image(entry.pose, intrinsics, plane).inverse();
    for (const auto& m : mutual_nn(query, entry.features).pairs) {
      const auto& kd = entry.features.keypoints[m.index_b];
      const auto st = pixel_to_plane.apply(Eigen::Vector2d(kd.x, kd.y));
      if (!st) continue;
      const Eigen::Vector3d point = plane.origin + st->x() * plane.axis_u + st->y() * plane.axis_v;
      const auto& kq = query.keypoints[m.index_a];
      corr.push_back({Eigen::Vector2d(kq.x, kq.y), point});
    }
  }
  LocalizeResult result = solve_planar_pnp_ransac(corr, plane, intrinsics, options);
  if (result.pose) result.pose->name = query_name;
  return result;
}

void save_poses(const std::vector<PoseRecord>& poses, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pose file: " + path.string());
  out << std::setprecision(17);
  for (const auto& p : poses)
    out << p.name << ' ' << p.q.w() << ' ' << p.q.x() << ' ' << p.q.y() << ' ' << p.q.z() << ' ' << p.t.x() << ' '
        << p.t.y() << ' ' << p.t.z() << '\n';
}

std::vector<PoseRecord> load_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read pose file: " + path.string());
  std::vector<PoseRecord> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    PoseRecord p;
    double w, x, y, z;
    if (!(ls >> p.name >> w >> x >> y >> z >> p.t.x() >> p.t.y() >> p.t.z()))
      throw IoError("pose file line " + std::to_string(line_no) + ": expected `name qw qx qy qz tx ty tz`");
    p.q = Eigen::Quaterniond(w, x, y, z);
    if (std::abs(p.q.norm() - 1.0) > 1e-6) throw IoError("pose file line " + std::to_string(line_no) + ": non-unit quaternion");
    poses.push_back(p);
  }
  return poses;
}

void save_retrieval(const RetrievalList& list, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write retrieval file: " + path.string());
  for (const auto& [q, names] : list.entries) {
    out << q;
    for (const auto& n : names) out << ' ' << n;
    out << '\n';
  }
}

RetrievalList load_retrieval(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read retrieval file: " + path.string());
  RetrievalList list;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string q, name;
    if (!(ls >> q)) continue;
    std::vector<std::string> names;
    while (ls >> name) names.push_back(name);
    if (names.empty()) throw IoError("retrieval entry without database images: " + q);
    list.entries.emplace_back(q, std::move(names));
  }
  return list;
}

}  // namespace rft
