#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rft/image.hpp"

namespace rft {

/// Training images grouped by scene (scene = immediate subdirectory of the dataset root).
struct DatasetManifest {
  struct Entry {
    std::string scene_id;
    std::string image_path;  // relative to the dataset root
    bool operator==(const Entry&) const = default;
  };
  std::filesystem::path root;
  std::vector<Entry> entries;
  int per_scene_cap = 300;
};

/// Fixed set of appearance categories used by the style pool.
inline constexpr std::array<const char*, 6> kStyleCategories = {"cloud", "dusk", "mist",
                                                                 "night", "rain", "snow"};
bool is_style_category(const std::string& name);

struct StylePool {
  std::vector<std::string> categories;
  std::map<std::string, std::vector<std::filesystem::path>> exemplars;

  std::size_t size() const;
  void validate() const;
};

/// original image path -> its stylized variants, in (category, exemplar) order.
struct StylizedIndex {
  struct Variant {
    std::string category;
    int exemplar_id = 0;
    std::string path;
    bool operator==(const Variant&) const = default;
  };
  std::map<std::string, std::vector<Variant>> variants;

  bool empty() const { return variants.empty(); }
  std::size_t total() const;
};

struct ColorAugConfig {
  double brightness_min = -0.2, brightness_max = 0.2;  // additive delta
  double contrast_min = 0.7, contrast_max = 1.3;
  double hue_min_deg = -18.0, hue_max_deg = 18.0;
  double saturation_min = 0.7, saturation_max = 1.3;
  double noise_sigma_min = 0.0, noise_sigma_max = 0.02;
  int jpeg_quality_min = 60, jpeg_quality_max = 100;
  double p_brightness = 0.5, p_contrast = 0.5, p_hue = 0.5, p_saturation = 0.5, p_noise = 0.5,
         p_jpeg = 0.5;
  std::uint64_t seed = 0;

  /// Throws ConfigError on ill-ordered ranges or probabilities outside [0, 1].
  void validate() const;
  /// All transforms disabled.
  static ColorAugConfig identity();
};

enum class PartnerKind { self, stylized };

struct EpochPair {
  std::string original;
  std::string partner;
  PartnerKind kind = PartnerKind::self;
  bool operator==(const EpochPair&) const = default;
};

/// Picks min(cap, available) images per scene uniformly without replacement.
/// Throws Error("no scenes found") when root has no scene subdirectory with images.
DatasetManifest build_manifest(const std::filesystem::path& root, int per_scene_cap,
                               std::uint64_t seed);

/// One partner per manifest entry; a uniformly drawn stylization when the index is non-empty.
std::vector<EpochPair> sample_epoch_pairs(const DatasetManifest& manifest, const StylizedIndex& index,
                                          int epoch, std::uint64_t seed);

Image color_augment(const Image& image, const ColorAugConfig& cfg, std::uint64_t draw_seed);

// Text persistence: `scene_id<TAB>relative_path` and
// `original<TAB>category<TAB>exemplar_id<TAB>stylized_path`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file, const std::filesystem::path& root);
void save_stylized_index(const StylizedIndex& index, const std::filesystem::path& file);
StylizedIndex load_stylized_index(const std::filesystem::path& file);

/// Writes a procedurally generated pool of `per_category` exemplars for each of the six
/// categories into `dir` and returns it. Deterministic given seed.
StylePool make_default_style_pool(const std::filesystem::path& dir, int per_category = 10,
                                  std::uint64_t seed = 0);

/// Loads a pool laid out as `<dir>/<category>/<image>`.
StylePool load_style_pool(const std::filesystem::path& dir);

bool is_image_file(const std::filesystem::path& path);

}  // namespace rft
