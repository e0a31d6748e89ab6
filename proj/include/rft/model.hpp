#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rft/image.hpp"

namespace rft {

/// Fully convolutional backbone: 3×3 dilated conv+ReLU layers (no stride, so the output keeps
/// the input resolution), a 3×3 descriptor layer, and two 1×1 score heads on the squared
/// descriptor features.
struct ModelConfig {
  int descriptor_dim = 128;
  std::vector<int> channel_widths = {32, 32, 64, 64, 128, 128};
  /// One entry per hidden layer plus one for the descriptor layer.
  std::vector<int> dilations = {1, 1, 2, 2, 4, 4, 8};
  std::uint64_t seed = 0;

  static ModelConfig standard() { return {}; }
  /// Small network (< 50k parameters) for tests and desk-scale experiments.
  static ModelConfig toy();

  void validate() const;
  /// Closed-form parameter count from the layer shapes.
  std::size_t parameter_count() const;
  /// Minimum accepted input size.
  static constexpr int kMinInputSize = 32;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> values;
};

template <typename T>
struct Params {
  ModelConfig config;
  std::vector<ParamTensor<T>> tensors;

  std::size_t count() const;
  Params zeros_like() const;
  template <typename U>
  Params<U> cast() const {
    Params<U> out;
    out.config = config;
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.shape, std::vector<U>(t.values.begin(), t.values.end())});
    return out;
  }
  /// Flat view helpers used by optimizers and gradient checks.
  T& flat(std::size_t i);
  T flat(std::size_t i) const;
};

/// Dense network outputs at input resolution. Descriptors are stored planar (D × H × W).
template <typename T>
struct FeatureMaps {
  int width = 0;
  int height = 0;
  int dim = 0;
  std::vector<T> descriptors;
  std::vector<T> repeatability;
  std::vector<T> reliability;

  FeatureMaps() = default;
  FeatureMaps(int w, int h, int d)
      : width(w), height(h), dim(d),
        descriptors(static_cast<std::size_t>(w) * h * d, T(0)),
        repeatability(static_cast<std::size_t>(w) * h, T(0)),
        reliability(static_cast<std::size_t>(w) * h, T(0)) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  T& desc(int d, std::size_t pixel) { return descriptors[d * pixels() + pixel]; }
  T desc(int d, std::size_t pixel) const { return descriptors[d * pixels() + pixel]; }

  bool operator==(const FeatureMaps&) const = default;
};

/// Activations retained by `forward` for `backward`.
template <typename T>
struct ForwardCache {
  int width = 0;
  int height = 0;
  std::vector<T> input;                    // normalized input, 3 × H × W
  std::vector<std::vector<T>> activations;  // output of each conv layer (post-ReLU for hidden layers)
  std::vector<T> norms;                    // per-pixel descriptor norm
  std::vector<T> rep_logit_diff;
  std::vector<T> rel_logit_diff;
};

template <typename T>
Params<T> init_params(const ModelConfig& cfg);

/// Throws Error("input too small") when either side is below 32 px.
template <typename T>
FeatureMaps<T> forward(const Image& image, const Params<T>& params, ForwardCache<T>* cache = nullptr);

/// Accumulates d(loss)/d(params) into `param_grads` given d(loss)/d(outputs) in `output_grads`.
template <typename T>
void backward(const Params<T>& params, const ForwardCache<T>& cache, const FeatureMaps<T>& output_grads,
              Params<T>& param_grads);

/// Any dense feature network; lets extraction run on stub models.
using FeatureNetwork = std::function<FeatureMaps<float>(const Image&)>;

FeatureNetwork make_network(const Params<float>& params);

inline constexpr const char* kCheckpointVersion = "rft-ckpt-1";

/// Self-describing JSON checkpoint: version, ModelConfig, named tensors with shapes.
void save_checkpoint(const Params<float>& params, const std::filesystem::path& path);
Params<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace rft
