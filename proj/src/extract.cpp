#include "rft/extract.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "rft/error.hpp"

namespace rft {
namespace {

static_assert(std::endian::native == std::endian::little, "RFT1 I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

constexpr char kMagic[4] = {'R', 'F', 'T', '1'};

int scaled(int dim, double factor, int step) {
  return std::max(1, static_cast<int>(std::lround(dim * std::pow(factor, -step))));
}

}  // namespace

void ExtractConfig::validate() const {
  if (!(max_dim > min_dim)) throw ConfigError("extract: max_dim must exceed min_dim");
  if (!(scale_factor > 1)) throw ConfigError("extract: scale_factor must be > 1");
  if (!(score_threshold > 0 && score_threshold < 1)) throw ConfigError("extract: threshold must be in (0,1)");
  if (nms_radius_px < 1) throw ConfigError("extract: nms radius must be >= 1");
  if (top_k < 0) throw ConfigError("extract: top_k must be >= 0");
}

std::vector<PyramidLevel> build_pyramid(int height, int width, const ExtractConfig& cfg) {
  cfg.validate();
  int step = 0;
  while (std::max(scaled(height, cfg.scale_factor, step), scaled(width, cfg.scale_factor, step)) > cfg.max_dim) ++step;
  std::vector<PyramidLevel> levels;
  for (;; ++step) {
    const int h = scaled(height, cfg.scale_factor, step);
    const int w = scaled(width, cfg.scale_factor, step);
    if (std::max(h, w) < cfg.min_dim && !levels.empty()) break;
    levels.push_back({h, w, step});
    if (std::max(h, w) < cfg.min_dim) break;
  }
  return levels;
}

std::vector<PixelLocation> nms(const std::vector<float>& scores, int width, int height, int radius) {
  if (radius < 1) throw Error("nms: radius must be >= 1");
  std::vector<PixelLocation> out;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const float s = scores[static_cast<std::size_t>(y) * width + x];
      bool keep = true;
      const int y0 = std::max(0, y - radius), y1 = std::min(height - 1, y + radius);
      const int x0 = std::max(0, x - radius), x1 = std::min(width - 1, x + radius);
      for (int yy = y0; yy <= y1 && keep; ++yy) {
        for (int xx = x0; xx <= x1; ++xx) {
          if (xx == x && yy == y) continue;
          const float o = scores[static_cast<std::size_t>(yy) * width + xx];
          // A neighbor earlier in (y, x) order wins ties.
          const bool earlier = yy < y || (yy == y && xx < x);
          if (o > s || (o == s && earlier)) {
            keep = false;
            break;
          }
        }
      }
      if (keep) out.push_back({x, y});
    }
  }
  return out;
}

FeatureSet extract_multiscale(const Image& image, const FeatureNetwork& network, const ExtractConfig& cfg) {
  const auto levels = build_pyramid(image.height, image.width, cfg);
  struct Candidate {
    Keypoint kp;
    std::vector<float> desc;
  };
  std::vector<Candidate> pool;
  int dim = 0;
  for (const auto& level : levels) {
    const Image scaled_img = resize_bilinear(image, level.width, level.height);
    const FeatureMaps<float> maps = network(scaled_img);
    if (maps.width != level.width || maps.height != level.height)
      throw Error("extract: network changed the spatial resolution");
    dim = maps.dim;
    const double sx = static_cast<double>(image.width) / level.width;
    const double sy = static_cast<double>(image.height) / level.height;
    const auto scale = static_cast<float>(std::pow(cfg.scale_factor, level.step));
    for (const auto& loc : nms(maps.repeatability, maps.width, maps.height, cfg.nms_radius_px)) {
      const std::size_t p = maps.index(loc.x, loc.y);
      const float rep = maps.repeatability[p];
      const float rel = maps.reliability[p];
      if (rep < cfg.score_threshold || rel < cfg.score_threshold) continue;
      Candidate c;
      // Pixel centers, matching the half-pixel convention of resize_bilinear.
      c.kp = {static_cast<float>((loc.x + 0.5) * sx - 0.5), static_cast<float>((loc.y + 0.5) * sy - 0.5), scale, rep,
              rel};
      // Integer keypoints: bilinear sampling reduces to the pixel's own descriptor.
      c.desc.resize(dim);
      double norm = 0;
      for (int d = 0; d < dim; ++d) {
        c.desc[d] = maps.desc(d, p);
        norm += static_cast<double>(c.desc[d]) * c.desc[d];
      }
      norm = std::sqrt(norm);
      if (norm > 0)
        for (auto& v : c.desc) v = static_cast<float>(v / norm);
      pool.push_back(std::move(c));
    }
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Candidate& a, const Candidate& b) { return a.kp.detection() > b.kp.detection(); });
  if (pool.size() > static_cast<std::size_t>(cfg.top_k)) pool.resize(cfg.top_k);

  FeatureSet out;
  out.dim = dim;
  out.keypoints.reserve(pool.size());
  out.descriptors.reserve(pool.size() * dim);
  for (const auto& c : pool) {
    out.keypoints.push_back(c.kp);
    out.descriptors.insert(out.descriptors.end(), c.desc.begin(), c.desc.end());
  }
  return out;
}

void save_features(const FeatureSet& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file: " + path.string());
  const auto k = static_cast<std::uint32_t>(features.size());
  const auto d = static_cast<std::uint32_t>(features.dim);
  if (features.descriptors.size() != static_cast<std::size_t>(k) * d) throw Error("feature set is inconsistent");
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&k), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  for (const auto& kp : features.keypoints) {
    const float rec[5] = {kp.x, kp.y, kp.scale, kp.repeatability, kp.reliability};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  out.write(reinterpret_cast<const char*>(features.descriptors.data()),
            static_cast<std::streamsize>(features.descriptors.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

FeatureSet load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read feature file: " + path.string());
  char magic[4];
  std::uint32_t k = 0, d = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&k), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not an RFT1 file: " + path.string());
  FeatureSet fs;
  fs.dim = static_cast<int>(d);
  fs.keypoints.resize(k);
  for (auto& kp : fs.keypoints) {
    float rec[5];
    in.read(reinterpret_cast<char*>(rec), sizeof(rec));
    kp = {rec[0], rec[1], rec[2], rec[3], rec[4]};
  }
  fs.descriptors.resize(static_cast<std::size_t>(k) * d);
  in.read(reinterpret_cast<char*>(fs.descriptors.data()), static_cast<std::streamsize>(fs.descriptors.size() * 4));
  if (!in) throw IoError("truncated RFT1 file: " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in RFT1 file: " + path.string());
  return fs;
}

}  // namespace rft
