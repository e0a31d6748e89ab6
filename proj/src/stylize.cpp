#include "rft/stylize.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <fstream>
#include <map>
#include <regex>

#include "rft/error.hpp"
#include "rft/log.hpp"

namespace fs = std::filesystem;

namespace rft {
namespace {

// Symmetric PSD matrix power via eigendecomposition; eigenvalues are floored at zero.
Eigen::Matrix3d sym_power(const Eigen::Matrix3d& m, double p) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(0.5 * (m + m.transpose()));
  Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
  for (int i = 0; i < 3; ++i) ev[i] = ev[i] > 0 ? std::pow(ev[i], p) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

ColorStats fit_color_stats(const Image& image) {
  if (image.channels != 3 || image.pixel_count() < 2) throw Error("fit_color_stats: need >= 2 RGB pixels");
  const auto n = static_cast<double>(image.pixel_count());
  ColorStats stats;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) stats.mean[c] += image.data[i * 3 + c];
  }
  stats.mean /= n;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    Eigen::Vector3d d(image.data[i * 3] - stats.mean[0], image.data[i * 3 + 1] - stats.mean[1],
                      image.data[i * 3 + 2] - stats.mean[2]);
    stats.covariance.noalias() += d * d.transpose();
  }
  stats.covariance /= n;
  stats.covariance = 0.5 * (stats.covariance + stats.covariance.transpose());
  return stats;
}

ColorTransferMap monge_kantorovich_map(const ColorStats& content, const ColorStats& style, double eps) {
  if (!(eps > 0)) throw ConfigError("color transfer eps must be > 0");
  const Eigen::Matrix3d id = Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d c = content.covariance + eps * id;
  const Eigen::Matrix3d s = style.covariance + eps * id;
  const Eigen::Matrix3d c_half = sym_power(c, 0.5);
  const Eigen::Matrix3d c_inv_half = sym_power(c, -0.5);
  const Eigen::Matrix3d middle = sym_power(c_half * s * c_half, 0.5);
  ColorTransferMap map;
  map.linear = c_inv_half * middle * c_inv_half;
  map.source_mean = content.mean;
  map.target_mean = style.mean;
  return map;
}

Image apply_color_map(const Image& image, const ColorTransferMap& map) {
  Image out = image;
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const Eigen::Vector3d x(image.data[i * 3], image.data[i * 3 + 1], image.data[i * 3 + 2]);
    const Eigen::Vector3d y = map(x);
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = static_cast<float>(y[c]);
  }
  return out;
}

Image apply_transfer(const Image& content, const ColorStats& style_stats, double strength, double eps) {
  if (strength == 0.0) return content;
  const ColorTransferMap map = monge_kantorovich_map(fit_color_stats(content), style_stats, eps);
  Image mapped = apply_color_map(content, map);
  for (std::size_t i = 0; i < mapped.data.size(); ++i) {
    mapped.data[i] = static_cast<float>((1.0 - strength) * content.data[i] + strength * mapped.data[i]);
  }
  return clamp01(std::move(mapped));
}

StylizedIndex build_stylized_index(const DatasetManifest& manifest, const StylePool& pool, const fs::path& out_dir,
                                   const StylizeOptions& options, std::size_t* files_written) {
  pool.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  {
    const fs::path probe = out_dir / ".write_probe";
    std::ofstream test(probe);
    if (ec || !test) throw IoError("output directory is not writable: " + out_dir.string());
    test.close();
    fs::remove(probe, ec);
  }

  struct Exemplar {
    std::string category;
    int id;
    ColorStats stats;
  };
  std::vector<Exemplar> exemplars;
  for (const auto& category : pool.categories) {
    const auto& paths = pool.exemplars.at(category);
    for (std::size_t e = 0; e < paths.size(); ++e) {
      exemplars.push_back({category, static_cast<int>(e), fit_color_stats(load_image(paths[e]))});
    }
  }

  StylizedIndex index;
  std::size_t written = 0;
  for (const auto& entry : manifest.entries) {
    const fs::path source = manifest.root / entry.image_path;
    const std::string stem = fs::path(entry.image_path).stem().string();
    const fs::path scene_dir = out_dir / entry.scene_id;
    std::vector<StylizedIndex::Variant> variants;
    try {
      fs::create_directories(scene_dir);
      Image content;  // decoded lazily: a fully cached image never touches the source
      for (const auto& ex : exemplars) {
        const fs::path target = scene_dir / (stem + "__" + ex.category + "_" + std::to_string(ex.id) + ".png");
        if (!fs::exists(target)) {
          if (content.empty()) content = limit_max_dim(load_image(source), options.max_dim);
          save_image(apply_transfer(content, ex.stats, options.strength, options.eps), target);
          ++written;
        }
        variants.push_back({ex.category, ex.id, target.string()});
      }
    } catch (const std::exception& e) {
      log_warning("stylization failed for " + entry.image_path + ": " + e.what());
      continue;
    }
    index.variants[entry.image_path] = std::move(variants);
  }
  if (files_written) *files_written = written;
  return index;
}

StylizedIndex import_stylized_dir(const DatasetManifest& manifest, const fs::path& dir) {
  std::map<std::string, std::string> by_stem;
  for (const auto& entry : manifest.entries) {
    by_stem[entry.scene_id + "/" + fs::path(entry.image_path).stem().string()] = entry.image_path;
  }
  const std::regex pattern(R"((.+)__([a-z]+)_([0-9]+))");
  StylizedIndex index;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::smatch m;
    const std::string stem = path.stem().string();
    if (!std::regex_match(stem, m, pattern) || !is_style_category(m[2])) continue;
    const std::string scene = path.parent_path().filename().string();
    auto it = by_stem.find(scene + "/" + m[1].str());
    if (it == by_stem.end()) continue;
    index.variants[it->second].push_back({m[2], std::stoi(m[3]), path.string()});
  }
  return index;
}

}  // namespace rft
