#include "rft/data_ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <opencv2/imgcodecs.hpp>
#include <set>
#include <sstream>

#include "rft/error.hpp"
#include "rft/log.hpp"
#include "rft/random.hpp"

namespace fs = std::filesystem;

namespace rft {
namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  return out;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0f;
  if (d <= 0) {
    h = 0;
  } else if (mx == r) {
    h = 60.0f * std::fmod((g - b) / d, 6.0f);
  } else if (mx == g) {
    h = 60.0f * ((b - r) / d + 2.0f);
  } else {
    h = 60.0f * ((r - g) / d + 4.0f);
  }
  if (h < 0) h += 360.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float c = v * s;
  const float hp = h / 60.0f;
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  const float m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

float luminance(const Image& img, int x, int y) {
  return 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) + 0.114f * img.at(x, y, 2);
}

}  // namespace

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm" ||
         ext == ".tif" || ext == ".tiff";
}

bool is_style_category(const std::string& name) {
  return std::any_of(kStyleCategories.begin(), kStyleCategories.end(),
                     [&](const char* c) { return name == c; });
}

std::size_t StylePool::size() const {
  std::size_t n = 0;
  for (const auto& c : categories) {
    auto it = exemplars.find(c);
    if (it != exemplars.end()) n += it->second.size();
  }
  return n;
}

void StylePool::validate() const {
  if (categories.empty()) throw ConfigError("style pool is empty");
  for (const auto& c : categories) {
    if (!is_style_category(c)) throw ConfigError("unknown style category: " + c);
    auto it = exemplars.find(c);
    if (it == exemplars.end() || it->second.empty())
      throw ConfigError("style category has no exemplars: " + c);
  }
}

std::size_t StylizedIndex::total() const {
  std::size_t n = 0;
  for (const auto& [_, v] : variants) n += v.size();
  return n;
}

void ColorAugConfig::validate() const {
  auto ordered = [](double lo, double hi, const char* what) {
    if (!(lo <= hi)) throw ConfigError(std::string("color_aug: ill-ordered range ") + what);
  };
  ordered(brightness_min, brightness_max, "brightness");
  ordered(hue_min_deg, hue_max_deg, "hue");
  ordered(contrast_min, contrast_max, "contrast");
  ordered(saturation_min, saturation_max, "saturation");
  ordered(noise_sigma_min, noise_sigma_max, "noise_sigma");
  ordered(jpeg_quality_min, jpeg_quality_max, "jpeg_quality");
  if (contrast_min < 0 || saturation_min < 0 || noise_sigma_min < 0)
    throw ConfigError("color_aug: negative factor");
  if (jpeg_quality_min < 1 || jpeg_quality_max > 100) throw ConfigError("color_aug: jpeg quality outside [1,100]");
  for (double p : {p_brightness, p_contrast, p_hue, p_saturation, p_noise, p_jpeg}) {
    if (!(p >= 0 && p <= 1)) throw ConfigError("color_aug: probability outside [0,1]");
  }
}

ColorAugConfig ColorAugConfig::identity() {
  ColorAugConfig cfg;
  cfg.brightness_min = cfg.brightness_max = 0;
  cfg.contrast_min = cfg.contrast_max = 1;
  cfg.hue_min_deg = cfg.hue_max_deg = 0;
  cfg.saturation_min = cfg.saturation_max = 1;
  cfg.noise_sigma_min = cfg.noise_sigma_max = 0;
  cfg.jpeg_quality_min = cfg.jpeg_quality_max = 100;
  cfg.p_brightness = cfg.p_contrast = cfg.p_hue = cfg.p_saturation = cfg.p_noise = cfg.p_jpeg = 0;
  return cfg;
}

DatasetManifest build_manifest(const fs::path& root, int per_scene_cap, std::uint64_t seed) {
  if (per_scene_cap <= 0) throw ConfigError("per_scene_cap must be positive");
  if (!fs::is_directory(root)) throw Error("no scenes found");
  std::vector<fs::path> scenes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) scenes.push_back(e.path());
  }
  std::sort(scenes.begin(), scenes.end());

  DatasetManifest manifest;
  manifest.root = root;
  manifest.per_scene_cap = per_scene_cap;
  for (const auto& scene : scenes) {
    const std::string scene_id = scene.filename().string();
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(scene)) {
      if (!e.is_regular_file() || !is_image_file(e.path())) continue;
      if (!cv::haveImageReader(e.path().string())) {
        log_warning("skipping unreadable image " + e.path().string());
        continue;
      }
      files.push_back(scene_id + "/" + e.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    Rng rng(mix_seed(seed, fnv1a(scene_id)));
    const std::size_t take = std::min<std::size_t>(per_scene_cap, files.size());
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.below(files.size() - i);
      std::swap(files[i], files[j]);
    }
    files.resize(take);
    std::sort(files.begin(), files.end());
    for (auto& f : files) manifest.entries.push_back({scene_id, std::move(f)});
  }
  if (manifest.entries.empty()) throw Error("no scenes found");
  return manifest;
}

std::vector<EpochPair> sample_epoch_pairs(const DatasetManifest& manifest, const StylizedIndex& index,
                                          int epoch, std::uint64_t seed) {
  std::vector<EpochPair> pairs;
  pairs.reserve(manifest.entries.size());
  Rng rng(mix_seed(seed, 0x5eed'e90cULL, static_cast<std::uint64_t>(epoch)));
  for (const auto& entry : manifest.entries) {
    if (index.empty()) {
      pairs.push_back({entry.image_path, entry.image_path, PartnerKind::self});
      continue;
    }
    auto it = index.variants.find(entry.image_path);
    if (it == index.variants.end() || it->second.empty())
      throw Error("image missing from stylized index: " + entry.image_path);
    const auto& v = it->second[rng.below(it->second.size())];
    pairs.push_back({entry.image_path, v.path, PartnerKind::stylized});
  }
  return pairs;
}

Image color_augment(const Image& image, const ColorAugConfig& cfg, std::uint64_t draw_seed) {
  if (image.empty()) throw Error("color_augment: empty image");
  Rng rng(mix_seed(cfg.seed, draw_seed));
  Image out = image;
  const int w = out.width, h = out.height;

  // Every draw happens regardless of whether the transform fires, so enabling one
  // transform does not shift the random stream of the others.
  const bool do_brightness = rng.bernoulli(cfg.p_brightness);
  const double brightness = rng.uniform(cfg.brightness_min, cfg.brightness_max);
  const bool do_contrast = rng.bernoulli(cfg.p_contrast);
  const double contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max);
  const bool do_hue = rng.bernoulli(cfg.p_hue);
  const double hue = rng.uniform(cfg.hue_min_deg, cfg.hue_max_deg);
  const bool do_saturation = rng.bernoulli(cfg.p_saturation);
  const double saturation = rng.uniform(cfg.saturation_min, cfg.saturation_max);
  const bool do_noise = rng.bernoulli(cfg.p_noise);
  const double sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
  const bool do_jpeg = rng.bernoulli(cfg.p_jpeg);
  const int quality = cfg.jpeg_quality_min +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.jpeg_quality_max - cfg.jpeg_quality_min) + 1));
  const std::uint64_t noise_seed = rng.next();

  if (do_brightness && brightness != 0.0) {
    for (auto& v : out.data) v = static_cast<float>(v + brightness);
  }
  if (do_contrast && contrast != 1.0) {
    double mean = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) mean += luminance(out, x, y);
    mean /= static_cast<double>(out.pixel_count());
    const auto c = static_cast<float>(contrast);
    const auto offset = static_cast<float>(mean * (1.0 - contrast));
    for (auto& v : out.data) v = v * c + offset;
  }
  if (do_hue && hue != 0.0) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float hh, ss, vv;
        rgb_to_hsv(out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2), hh, ss, vv);
        hh = std::fmod(hh + static_cast<float>(hue) + 360.0f, 360.0f);
        hsv_to_rgb(hh, ss, vv, out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2));
      }
    }
  }
  if (do_saturation && saturation != 1.0) {
    const auto s = static_cast<float>(saturation);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float l = luminance(out, x, y);
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = out.at(x, y, c) * s + l * (1.0f - s);
      }
    }
  }
  if (do_noise && sigma > 0.0) {
    Rng noise(noise_seed);
    for (auto& v : out.data) v = static_cast<float>(v + noise.normal(0.0, sigma));
  }
  out = clamp01(std::move(out));
  // Quality 100 is treated as "no recompression" so that an identity config is exact.
  if (do_jpeg && quality < 100) out = jpeg_recompress(out, quality);
  return out;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write manifest: " + file.string());
  for (const auto& e : manifest.entries) out << e.scene_id << '\t' << e.image_path << '\n';
}

DatasetManifest load_manifest(const fs::path& file, const fs::path& root) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read manifest: " + file.string());
  DatasetManifest manifest;
  manifest.root = root;
  std::map<std::string, int> per_scene;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2) throw IoError("manifest line " + std::to_string(line_no) + ": expected 2 fields");
    if (!seen.insert(fields[1]).second) throw IoError("manifest: duplicate image path " + fields[1]);
    ++per_scene[fields[0]];
    manifest.entries.push_back({fields[0], fields[1]});
  }
  int cap = 1;
  for (const auto& [_, n] : per_scene) cap = std::max(cap, n);
  manifest.per_scene_cap = cap;
  return manifest;
}

void save_stylized_index(const StylizedIndex& index, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write stylized index: " + file.string());
  for (const auto& [original, variants] : index.variants) {
    for (const auto& v : variants)
      out << original << '\t' << v.category << '\t' << v.exemplar_id << '\t' << v.path << '\n';
  }
}

StylizedIndex load_stylized_index(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read stylized index: " + file.string());
  StylizedIndex index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 4) throw IoError("stylized index line " + std::to_string(line_no) + ": expected 4 fields");
    index.variants[fields[0]].push_back({fields[1], std::stoi(fields[2]), fields[3]});
  }
  return index;
}

StylePool make_default_style_pool(const fs::path& dir, int per_category, std::uint64_t seed) {
  struct Palette {
    float base[3];
    float accent[3];
    float contrast;
    float sparkle;  // fraction of bright point lights
  };
  // Rough global color statistics for each appearance category.
  const std::map<std::string, Palette> palettes = {
      {"cloud", {{0.62f, 0.64f, 0.68f}, {0.45f, 0.48f, 0.55f}, 0.10f, 0.0f}},
      {"dusk", {{0.55f, 0.32f, 0.30f}, {0.25f, 0.18f, 0.40f}, 0.18f, 0.0f}},
      {"mist", {{0.80f, 0.81f, 0.82f}, {0.70f, 0.72f, 0.74f}, 0.05f, 0.0f}},
      {"night", {{0.05f, 0.07f, 0.15f}, {0.12f, 0.12f, 0.22f}, 0.06f, 0.01f}},
      {"rain", {{0.32f, 0.35f, 0.40f}, {0.22f, 0.25f, 0.30f}, 0.10f, 0.0f}},
      {"snow", {{0.88f, 0.90f, 0.95f}, {0.60f, 0.65f, 0.75f}, 0.12f, 0.0f}},
  };
  fs::create_directories(dir);
  StylePool pool;
  const int size = 64;
  for (const char* name : kStyleCategories) {
    const std::string category = name;
    const Palette& pal = palettes.at(category);
    fs::create_directories(dir / category);
    pool.categories.push_back(category);
    for (int e = 0; e < per_category; ++e) {
      Rng rng(mix_seed(seed, fnv1a(category), static_cast<std::uint64_t>(e)));
      float base[3], accent[3];
      for (int c = 0; c < 3; ++c) {
        base[c] = std::clamp(pal.base[c] + static_cast<float>(rng.uniform(-0.06, 0.06)), 0.0f, 1.0f);
        accent[c] = std::clamp(pal.accent[c] + static_cast<float>(rng.uniform(-0.06, 0.06)), 0.0f, 1.0f);
      }
      const double angle = rng.uniform(0, 2 * std::numbers::pi);
      const double freq = rng.uniform(1.0, 3.0);
      Image img(size, size, 3);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double t = 0.5 + 0.5 * std::sin(freq * ((x * std::cos(angle) + y * std::sin(angle)) / size) * 2 * std::numbers::pi);
          for (int c = 0; c < 3; ++c) {
            const double mix = (1 - t) * base[c] + t * accent[c];
            img.at(x, y, c) = static_cast<float>(mix + rng.normal(0.0, pal.contrast * 0.5));
          }
          if (pal.sparkle > 0 && rng.bernoulli(pal.sparkle)) {
            img.at(x, y, 0) = 0.95f;
            img.at(x, y, 1) = 0.85f;
            img.at(x, y, 2) = 0.50f;
          }
        }
      }
      const fs::path path = dir / category / (category + "_" + std::to_string(e) + ".png");
      save_image(clamp01(std::move(img)), path);
      pool.exemplars[category].push_back(path);
    }
  }
  return pool;
}

StylePool load_style_pool(const fs::path& dir) {
  StylePool pool;
  for (const char* name : kStyleCategories) {
    const fs::path sub = dir / name;
    if (!fs::is_directory(sub)) continue;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(sub)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());
    pool.categories.emplace_back(name);
    pool.exemplars[name] = std::move(files);
  }
  pool.validate();
  return pool;
}

}  // namespace rft
