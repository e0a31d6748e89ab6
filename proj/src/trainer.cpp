#include "rft/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "rft/error.hpp"
#include "rft/image.hpp"
#include "rft/log.hpp"
#include "rft/random.hpp"

namespace rft {
namespace {

namespace fs = std::filesystem;

fs::path resolve(const fs::path& root, const std::string& path) {
  const fs::path p(path);
  if (p.is_absolute() || root.empty()) return p;
  const fs::path under_root = root / p;
  if (fs::exists(under_root) || !fs::exists(p)) return under_root;
  return p;
}

class ImageCache {
 public:
  ImageCache(fs::path root, int max_dim, int min_dim) : root_(std::move(root)), max_dim_(max_dim), min_dim_(min_dim) {}

  const Image& get(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    Image img = limit_max_dim(load_image(resolve(root_, path)), max_dim_);
    const int short_side = std::min(img.width, img.height);
    if (short_side < min_dim_) {
      const double s = static_cast<double>(min_dim_) / short_side;
      img = resize_bilinear(img, std::max(min_dim_, static_cast<int>(std::ceil(img.width * s))),
                            std::max(min_dim_, static_cast<int>(std::ceil(img.height * s))));
    }
    return cache_.emplace(path, std::move(img)).first->second;
  }

 private:
  fs::path root_;
  int max_dim_;
  int min_dim_;
  std::map<std::string, Image> cache_;
};

struct Adam {
  std::vector<double> m, v;
  long step = 0;

  void update(Params<float>& params, const Params<float>& grads, const TrainConfig& cfg, double lr) {
    const std::size_t n = params.count();
    if (m.empty()) m.assign(n, 0.0), v.assign(n, 0.0);
    ++step;
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < n; ++i) {
      const double w = params.flat(i);
      const double g = grads.flat(i) + cfg.weight_decay * w;
      m[i] = cfg.adam_beta1 * m[i] + (1 - cfg.adam_beta1) * g;
      v[i] = cfg.adam_beta2 * v[i] + (1 - cfg.adam_beta2) * g * g;
      params.flat(i) = static_cast<float>(w - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps));
    }
  }
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

void dump_batch(const fs::path& dir, const std::vector<CropPair>& crops, const std::vector<EpochPair>& sources,
                const BatchLossReport& report, int epoch, int step) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream info(dir / "batch.txt");
  info << "epoch " << epoch << " step " << step << "\n";
  info << "l_cosim " << report.l_cosim << "\nl_peaky_a " << report.l_peaky_a << "\nl_peaky_b " << report.l_peaky_b
       << "\nl_ap " << report.l_ap << "\nkappa " << report.kappa_used << "\nmean_ap " << report.mean_ap << "\ntotal "
       << report.total << "\n";
  for (std::size_t i = 0; i < crops.size(); ++i) {
    info << "pair " << i << ": " << sources[i].original << " -> " << sources[i].partner << " offsets ("
         << crops[i].offset_a.transpose() << ") (" << crops[i].offset_b.transpose() << ") valid "
         << crops[i].warp.valid_fraction() << "\n";
    try {
      save_image(crops[i].crop_a, dir / ("pair" + std::to_string(i) + "_a.png"));
      save_image(crops[i].crop_b, dir / ("pair" + std::to_string(i) + "_b.png"));
    } catch (const std::exception& e) {
      info << "could not save crops: " << e.what() << "\n";
    }
  }
}

}  // namespace

const char* pair_mode_name(PairMode mode) {
  switch (mode) {
    case PairMode::color_aug: return "color_aug";
    case PairMode::orig2style: return "orig2style";
    default: return "plain";
  }
}

PairMode parse_pair_mode(const std::string& name) {
  if (name == "plain") return PairMode::plain;
  if (name == "color_aug") return PairMode::color_aug;
  if (name == "orig2style") return PairMode::orig2style;
  throw ConfigError("unknown pair mode: " + name + " (expected plain, color_aug or orig2style)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ConfigError("train.warmup_epochs must be in [0, epochs)");
  if (!(base_lr > 0)) throw ConfigError("train.base_lr must be > 0");
  if (!(decay_gamma > 0 && decay_gamma <= 1)) throw ConfigError("train.decay_gamma must be in (0, 1]");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
    throw ConfigError("train: invalid Adam constants");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (crop_size < ModelConfig::kMinInputSize) throw ConfigError("train.crop_size is below the network minimum input");
  if (max_image_dim < crop_size) throw ConfigError("train.max_image_dim must be >= crop_size");
  loss.validate();
  homography.validate();
  color_aug.validate();
  model.validate();
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) throw Error("lr_at_epoch: epoch " + std::to_string(epoch) + " out of range");
  if (epoch < cfg.warmup_epochs) return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs;
  return cfg.base_lr * std::pow(cfg.decay_gamma, epoch - cfg.warmup_epochs + 1);
}

TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const StylizedIndex& index,
                  const fs::path& out_dir, const EpochCallback& on_epoch) {
  cfg.validate();
  if (manifest.entries.empty()) throw ConfigError("train: manifest is empty");
  if (cfg.pair_mode == PairMode::orig2style && index.empty())
    throw ConfigError("train: pair_mode orig2style requires a non-empty stylized index");
  fs::create_directories(out_dir);

  TrainResult result;
  result.checkpoint = out_dir / "model.ckpt";
  result.log = out_dir / "train_log.csv";
  std::ofstream log(result.log);
  if (!log) throw IoError("cannot write training log: " + result.log.string());
  log << kTrainLogHeader << "\n";

  ModelConfig model_cfg = cfg.model;
  model_cfg.seed = mix_seed(cfg.seed, cfg.model.seed);
  Params<float> params = init_params<float>(model_cfg);
  Adam adam;
  ImageCache cache(manifest.root, cfg.max_image_dim, cfg.crop_size);
  const StylizedIndex empty_index;
  const StylizedIndex& pair_index = cfg.pair_mode == PairMode::orig2style ? index : empty_index;
  CropOptions crop_opts;
  crop_opts.crop_size = cfg.crop_size;

  int global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::vector<EpochPair> pairs = sample_epoch_pairs(manifest, pair_index, epoch, cfg.seed);
    Rng order_rng(mix_seed(cfg.seed, 0x0bde7ULL, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[order_rng.below(i)]);

    double epoch_loss = 0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
      std::vector<CropPair> crops;
      std::vector<EpochPair> sources;
      for (std::size_t p = start; p < end; ++p) {
        const std::uint64_t draw = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), p);
        const Image& image_a = cache.get(pairs[p].original);
        Image partner = pairs[p].kind == PartnerKind::stylized ? cache.get(pairs[p].partner) : image_a;
        if (partner.width != image_a.width || partner.height != image_a.height)
          partner = resize_bilinear(partner, image_a.width, image_a.height);
        if (cfg.pair_mode != PairMode::plain) partner = color_augment(partner, cfg.color_aug, mix_seed(draw, 1));
        const Eigen::Vector2d center((image_a.width - 1) / 2.0, (image_a.height - 1) / 2.0);
        bool made = false;
        for (int attempt = 0; attempt < 5 && !made; ++attempt) {
          const Homography h = to_pixel_frame(
              sample_homography(cfg.homography, mix_seed(draw, 2, static_cast<std::uint64_t>(attempt))), center,
              cfg.crop_size);
          try {
            crops.push_back(make_crop_pair(image_a, partner, h, crop_opts, mix_seed(draw, 3, attempt)));
            sources.push_back(pairs[p]);
            made = true;
          } catch (const Error&) {
          }
        }
        if (!made) log_warning("train: skipping " + pairs[p].original + " (no crop pair with enough overlap)");
      }
      if (crops.empty()) continue;

      std::vector<FeatureMaps<float>> maps(2 * crops.size());
      std::vector<ForwardCache<float>> caches(2 * crops.size());
      std::vector<PairOutputs<float>> outputs(crops.size());
      for (std::size_t i = 0; i < crops.size(); ++i) {
        maps[2 * i] = forward(crops[i].crop_a, params, &caches[2 * i]);
        maps[2 * i + 1] = forward(crops[i].crop_b, params, &caches[2 * i + 1]);
        outputs[i] = {&maps[2 * i], &maps[2 * i + 1], &crops[i].warp};
      }
      BatchLossReport report;
      std::vector<PairGrads<float>> grads;
      const double total = batch_total_loss<float>(outputs, cfg.loss, report, &grads);
      if (!std::isfinite(total)) {
        const fs::path dump = out_dir / "nonfinite_dump";
        dump_batch(dump, crops, sources, report, epoch, global_step);
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(global_step) + "; batch dumped to " + dump.string());
      }
      Params<float> param_grads = params.zeros_like();
      for (std::size_t i = 0; i < crops.size(); ++i) {
        backward(params, caches[2 * i], grads[i].grad_a, param_grads);
        backward(params, caches[2 * i + 1], grads[i].grad_b, param_grads);
      }
      adam.update(params, param_grads, cfg, lr);

      log << epoch << ',' << global_step << ',' << fmt(lr) << ',' << fmt(report.l_cosim) << ','
          << fmt(report.l_peaky_a) << ',' << fmt(report.l_peaky_b) << ',' << fmt(report.l_rep) << ','
          << fmt(report.l_ap) << ',' << fmt(report.kappa_used) << ',' << fmt(report.mean_ap) << ','
          << fmt(report.total) << '\n';
      epoch_loss += total;
      ++epoch_steps;
      ++global_step;
    }
    log.flush();
    const double mean = epoch_steps ? epoch_loss / epoch_steps : 0.0;
    result.epoch_mean_loss.push_back(mean);
    save_checkpoint(params, result.checkpoint);
    log_info("epoch " + std::to_string(epoch) + " lr " + fmt(lr) + " mean loss " + fmt(mean));
    if (on_epoch) on_epoch(epoch, mean);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace rft
