#pragma once

#include <cmath>
#include <filesystem>
#include <utility>
#include <vector>

#include "rft/image.hpp"
#include "rft/model.hpp"

namespace rft {

struct ExtractConfig {
  int max_dim = 1024;
  int min_dim = 256;
  double scale_factor = std::pow(2.0, 0.25);
  double score_threshold = 0.7;
  int nms_radius_px = 3;
  int top_k = 5000;

  void validate() const;
};

struct Keypoint {
  float x = 0;
  float y = 0;
  float scale = 1;
  float repeatability = 0;
  float reliability = 0;

  float detection() const { return repeatability * reliability; }
  bool operator==(const Keypoint&) const = default;
};

/// Sparse features: keypoints in original-image pixels, sorted by detection score, and
/// their unit descriptors stored row-major (K × dim).
struct FeatureSet {
  std::vector<Keypoint> keypoints;
  int dim = 0;
  std::vector<float> descriptors;

  std::size_t size() const { return keypoints.size(); }
  const float* descriptor(std::size_t i) const { return descriptors.data() + i * dim; }
  bool operator==(const FeatureSet&) const = default;
};

struct PyramidLevel {
  int height = 0;
  int width = 0;
  int step = 0;  // number of 2^(1/4) downsamplings from the input
  bool operator==(const PyramidLevel&) const = default;
};

/// Level sizes processed at test time: the input is first shrunk by scale_factor until its
/// longest side is <= max_dim, then levels are emitted while the longest side is >= min_dim
/// (always at least one level). Level k has size round(dim · scale_factor^-k).
std::vector<PyramidLevel> build_pyramid(int height, int width, const ExtractConfig& cfg);

struct PixelLocation {
  int x = 0;
  int y = 0;
  bool operator==(const PixelLocation&) const = default;
};

/// Pixels that beat every other pixel of their (2r+1)² window (truncated at borders); equal
/// scores are resolved in favor of the smaller (y, x).
std::vector<PixelLocation> nms(const std::vector<float>& scores, int width, int height, int radius);

FeatureSet extract_multiscale(const Image& image, const FeatureNetwork& network, const ExtractConfig& cfg);

/// "RFT1" binary format: little-endian magic, uint32 K, uint32 D, K × 5 float32
/// (x, y, scale, repeatability, reliability), then K × D float32 descriptors.
void save_features(const FeatureSet& features, const std::filesystem::path& path);
FeatureSet load_features(const std::filesystem::path& path);

}  // namespace rft
