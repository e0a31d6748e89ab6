#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rft/data_ingest.hpp"
#include "rft/homography.hpp"
#include "rft/losses.hpp"
#include "rft/model.hpp"

namespace rft {

enum class PairMode { plain, color_aug, orig2style };

const char* pair_mode_name(PairMode mode);
/// Throws ConfigError for unknown names.
PairMode parse_pair_mode(const std::string& name);

struct TrainConfig {
  PairMode pair_mode = PairMode::plain;
  int epochs = 70;
  int warmup_epochs = 5;
  double base_lr = 1e-4;
  double decay_gamma = 0.95;
  double weight_decay = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 4;
  int crop_size = 192;
  /// Training images are downscaled so that their longest side is at most this.
  int max_image_dim = 1024;
  std::uint64_t seed = 0;
  LossConfig loss;
  HomographyConfig homography;
  ColorAugConfig color_aug;
  ModelConfig model = ModelConfig::toy();

  void validate() const;
};

/// Linear warmup to base_lr, then exponential decay by decay_gamma per epoch.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

inline constexpr const char* kTrainLogHeader = "epoch,step,lr,l_cosim,l_peaky_a,l_peaky_b,l_rep,l_ap,kappa,mean_ap,total";

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<double> epoch_mean_loss;
  Params<float> params;
};

/// Called after every epoch with (epoch, mean total loss).
using EpochCallback = std::function<void(int, double)>;

/// Runs the full schedule. Image paths in the manifest and index are resolved against
/// manifest.root unless absolute. Writes `<out_dir>/model.ckpt` after every epoch and one CSV row
/// per step to `<out_dir>/train_log.csv`. A non-finite loss dumps the offending batch under
/// `<out_dir>/nonfinite_dump/` and throws Error.
TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const StylizedIndex& index,
                  const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

}  // namespace rft
