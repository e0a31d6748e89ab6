#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rft/image.hpp"
#include "rft/model.hpp"

namespace rft::testing {

/// Fresh, empty directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Uniform random RGB image.
Image random_image(int width, int height, std::uint64_t seed);

/// Smooth random texture with blobs and edges (enough structure for descriptors to differ).
Image structured_image(int width, int height, std::uint64_t seed);

struct GradientCheckResult {
  std::size_t sampled = 0;
  std::size_t passed = 0;
  double worst_relative_error = 0;
  double loss = 0;
  double pass_fraction() const { return sampled ? static_cast<double>(passed) / sampled : 0.0; }
};

/// Compares analytic total-loss gradients of a double-precision model against central finite
/// differences on `samples` parameters drawn uniformly, with κ held at the base-point value.
GradientCheckResult check_total_loss_gradient(const ModelConfig& cfg, int crop_size, std::size_t samples,
                                              std::uint64_t seed, double rel_tol);

/// A query's candidate distances in [0, 2] with positive flags (at least one positive).
struct RankingInstance {
  std::vector<double> distances;
  std::vector<bool> positive;
};

/// Random ranking whose distances are pairwise at least `min_gap` apart. Histogram AP cannot
/// order two items that share a bin, so comparisons against exact AP use a gap of one bin width.
RankingInstance separated_ranking_instance(int max_candidates, double min_gap, std::uint64_t seed);

/// Unit descriptors realizing the instance: query e0, candidate i at the prescribed distance.
void descriptors_for(const RankingInstance& inst, std::vector<double>& query,
                     std::vector<std::vector<double>>& candidates);

/// Brute-force AP: rank by distance, average precision@rank over the positives.
double oracle_ap(const std::vector<double>& distances, const std::vector<bool>& positive);

}  // namespace rft::testing
