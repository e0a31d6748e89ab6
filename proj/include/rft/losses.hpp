#pragma once

#include <optional>
#include <span>
#include <vector>

#include "rft/homography.hpp"
#include "rft/model.hpp"

namespace rft {

struct LossConfig {
  int window = 16;  // N: cosim patch size and peakiness window
  double lambda = 0.5;
  double kappa_cap = 0.5;
  int ap_bins = 20;
  int query_grid_stride = 8;
  double positive_radius_px = 3.0;
  double negative_min_dist_px = 7.0;
  double rep_weight = 1.0;
  double ap_weight = 1.0;

  void validate() const;
};

/// Per-batch loss breakdown; CSV column order follows field order.
struct BatchLossReport {
  double l_cosim = 0;
  double l_peaky_a = 0;
  double l_peaky_b = 0;
  double l_rep = 0;
  double l_ap = 0;
  double kappa_used = 0;
  double mean_ap = 0;
  double total = 0;
  std::vector<double> query_aps;
};

/// A dense score map (repeatability) viewed as H×W, row-major.
template <typename T>
struct ScoreMapView {
  int width = 0;
  int height = 0;
  std::span<const T> values;
  T at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// 1 - mean cosine similarity between N×N patches of rep_b and rep_a resampled through the warp,
/// over patches whose pixels are all valid. Gradients are accumulated when outputs are given.
/// Throws Error("no overlap for cosim") when no patch is fully valid.
template <typename T>
T cosim_loss(ScoreMapView<T> rep_a, ScoreMapView<T> rep_b, const WarpField& warp, int window,
             std::span<T> grad_a = {}, std::span<T> grad_b = {}, T grad_scale = T(1));

/// 1 - mean over stride-N windows of (max - mean).
template <typename T>
T peaky_loss(ScoreMapView<T> rep, int window, std::span<T> grad = {}, T grad_scale = T(1));

/// Histogram-binned average precision of the candidates ranked by distance, from precomputed
/// distances in [0, 2]. Each item is linearly split between its two nearest bin centers; a
/// positive's precision counts every other item's mass accumulated up to that bin plus itself,
/// which converges to the exact AP as the bin count grows. `grad_distances` (optional)
/// receives d(AP)/d(distance).
template <typename T>
T soft_ap_from_distances(std::span<const T> distances, std::span<const std::uint8_t> positive, int bins,
                         std::span<T> grad_distances = {});

/// Soft AP of a query descriptor against candidates using Euclidean distances.
/// Throws Error when no candidate is positive.
double soft_ap(std::span<const double> query, const std::vector<std::vector<double>>& candidates,
               const std::vector<bool>& positive, int bins);

/// Exact average precision of a ranking by ascending distance (ties keep input order).
double exact_ap(std::span<const double> distances, const std::vector<bool>& positive);

/// min(cap, mean AP). Throws Error on an empty list.
double batch_kappa(std::span<const double> ap_values, double cap = 0.5);

/// 1 - [ap·R + κ(1 - R)].
double ap_kappa_loss(double ap, double reliability, double kappa);

/// One crop pair's network outputs; the warp maps maps_b pixels into maps_a.
template <typename T>
struct PairOutputs {
  const FeatureMaps<T>* maps_a = nullptr;
  const FeatureMaps<T>* maps_b = nullptr;
  const WarpField* warp = nullptr;
};

template <typename T>
struct PairGrads {
  FeatureMaps<T> grad_a;
  FeatureMaps<T> grad_b;
};

/// Combined objective over a batch of pairs: mean per-pair repeatability loss plus the
/// reliability-weighted AP loss over all queries of the batch. κ is computed from this batch's
/// soft-AP values (or taken from `kappa_override`) and receives no gradient.
template <typename T>
double batch_total_loss(std::span<const PairOutputs<T>> pairs, const LossConfig& cfg, BatchLossReport& report,
                        std::vector<PairGrads<T>>* grads = nullptr,
                        std::optional<double> kappa_override = std::nullopt);

template <typename T>
double total_loss(const FeatureMaps<T>& maps_a, const FeatureMaps<T>& maps_b, const WarpField& warp,
                  const LossConfig& cfg, BatchLossReport& report, PairGrads<T>* grads = nullptr,
                  std::optional<double> kappa_override = std::nullopt);

}  // namespace rft
