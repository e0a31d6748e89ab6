#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "rft/data_ingest.hpp"
#include "rft/evalkit.hpp"
#include "rft/extract.hpp"
#include "rft/model.hpp"

namespace rft {

/// Writes the database views as a one-scene training set (`<root>/synth/<name>.png`).
DatasetManifest write_training_set(const SynthBenchmark& bench, const std::filesystem::path& root);

/// Query views with an appearance shift applied (deterministic in seed).
std::vector<RenderedView> shifted_queries(const SynthBenchmark& bench, AppearanceShift shift, std::uint64_t seed);

/// Parses a comma-separated list such as "night,mist".
std::vector<AppearanceShift> parse_shifts(const std::string& list);

struct LocalizationEval {
  SuccessRates rates;
  std::vector<PoseRecord> poses;  // failed queries are omitted
  std::vector<PoseError> errors;
  /// Averages over queries against their top retrieved database image, using the ground-truth
  /// plane homography. Only keypoints that project inside the other view are counted.
  double mean_repeatability = 0;
  double mean_mma = 0;
};

/// Extracts features with `network`, localizes every query, and scores against ground truth.
LocalizationEval evaluate_localization(const FeatureNetwork& network, const SynthBenchmark& bench,
                                       const std::vector<RenderedView>& queries, const ExtractConfig& extract,
                                       const LocalizeOptions& localize, double eps_px = 3.0);

/// Repeatability and mean matching accuracy per pixel threshold, averaged over image pairs.
struct WarpEval {
  std::array<double, 3> repeatability = {0, 0, 0};
  std::array<double, 3> mma = {0, 0, 0};
  int pairs = 0;
};

/// Same-scene pairs: each query against its top retrieved database view.
WarpEval evaluate_warp_pairs(const FeatureNetwork& network, const SynthBenchmark& bench,
                             const std::vector<RenderedView>& queries, const ExtractConfig& extract,
                             const std::array<double, 3>& thresholds_px, int max_pairs);

/// Keeps keypoints of `a` whose projection by `h_ab` falls inside a width × height image.
FeatureSet keypoints_visible_in(const FeatureSet& a, const Homography& h_ab, int width, int height);

}  // namespace rft
