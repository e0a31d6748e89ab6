#pragma once

#include <Eigen/Core>
#include <filesystem>

#include "rft/data_ingest.hpp"
#include "rft/image.hpp"

namespace rft {

/// Global RGB color statistics of an image: per-channel mean and 1/N covariance.
struct ColorStats {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
};

/// Affine color map x -> linear * (x - source_mean) + target_mean.
struct ColorTransferMap {
  Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();
  Eigen::Vector3d source_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d target_mean = Eigen::Vector3d::Zero();

  Eigen::Vector3d operator()(const Eigen::Vector3d& x) const { return linear * (x - source_mean) + target_mean; }
};

ColorStats fit_color_stats(const Image& image);

/// Linear Monge-Kantorovich map between two Gaussians:
/// T = C^{-1/2} (C^{1/2} S C^{1/2})^{1/2} C^{-1/2} with C, S regularized by eps·I.
ColorTransferMap monge_kantorovich_map(const ColorStats& content, const ColorStats& style, double eps = 1e-5);

/// Maps every pixel through `map` without blending or clamping.
Image apply_color_map(const Image& image, const ColorTransferMap& map);

/// Transfers the style's global color statistics onto `content`, blends with the original
/// by `strength` and clamps to [0, 1].
Image apply_transfer(const Image& content, const ColorStats& style_stats, double strength = 1.0,
                     double eps = 1e-5);

struct StylizeOptions {
  double strength = 1.0;
  double eps = 1e-5;
  int max_dim = 1024;
};

/// Writes one stylization per (manifest image, category, exemplar) to
/// `out_dir/<scene>/<stem>__<category>_<exemplar>.png`. Existing files are reused.
StylizedIndex build_stylized_index(const DatasetManifest& manifest, const StylePool& pool,
                                   const std::filesystem::path& out_dir, const StylizeOptions& options = {},
                                   std::size_t* files_written = nullptr);

/// Imports externally produced stylizations named `<scene>/<stem>__<category>_<exemplar>.<ext>`
/// found under `dir` (any depth) for the images of `manifest`.
StylizedIndex import_stylized_dir(const DatasetManifest& manifest, const std::filesystem::path& dir);

}  // namespace rft
