#include "rft/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "rft/error.hpp"

namespace rft {
namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("invalid value for " + key + ": '" + text + "'");
  return value;
}

template <typename T>
std::string format_number(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  } else {
    return std::to_string(v);
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v[i]);
  return s;
}

template <typename T, typename Access>
Field number(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return format_number<T>(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_number<T>(key, v); }};
}

template <typename T, typename Access>
Field list(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return format_list<T>(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_list<T>(key, v); }};
}

template <typename Access>
Field text(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
          [access](RunConfig& c, const std::string& v) { access(c) = trim(v); }};
}

#define RFT_FIELD(T, key, member) number<T>(key, [](RunConfig& c) -> auto& { return c.member; })
#define RFT_LIST(T, key, member) list<T>(key, [](RunConfig& c) -> auto& { return c.member; })
#define RFT_TEXT(key, member) text(key, [](RunConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      RFT_FIELD(int, "data.per_scene_cap", per_scene_cap),

      Field{"train.pair_mode", [](const RunConfig& c) { return std::string(pair_mode_name(c.train.pair_mode)); },
            [](RunConfig& c, const std::string& v) { c.train.pair_mode = parse_pair_mode(trim(v)); }},
      RFT_FIELD(int, "train.epochs", train.epochs),
      RFT_FIELD(int, "train.warmup_epochs", train.warmup_epochs),
      RFT_FIELD(double, "train.base_lr", train.base_lr),
      RFT_FIELD(double, "train.decay_gamma", train.decay_gamma),
      RFT_FIELD(double, "train.weight_decay", train.weight_decay),
      RFT_FIELD(double, "train.adam_beta1", train.adam_beta1),
      RFT_FIELD(double, "train.adam_beta2", train.adam_beta2),
      RFT_FIELD(double, "train.adam_eps", train.adam_eps),
      RFT_FIELD(int, "train.batch_size", train.batch_size),
      RFT_FIELD(int, "train.crop_size", train.crop_size),
      RFT_FIELD(int, "train.max_image_dim", train.max_image_dim),
      RFT_FIELD(std::uint64_t, "train.seed", train.seed),

      RFT_FIELD(int, "loss.window", train.loss.window),
      RFT_FIELD(double, "loss.lambda", train.loss.lambda),
      RFT_FIELD(double, "loss.kappa_cap", train.loss.kappa_cap),
      RFT_FIELD(int, "loss.ap_bins", train.loss.ap_bins),
      RFT_FIELD(int, "loss.query_grid_stride", train.loss.query_grid_stride),
      RFT_FIELD(double, "loss.positive_radius_px", train.loss.positive_radius_px),
      RFT_FIELD(double, "loss.negative_min_dist_px", train.loss.negative_min_dist_px),
      RFT_FIELD(double, "loss.rep_weight", train.loss.rep_weight),
      RFT_FIELD(double, "loss.ap_weight", train.loss.ap_weight),

      RFT_FIELD(double, "homography.max_rotation_deg", train.homography.max_rotation_deg),
      RFT_FIELD(double, "homography.scale_min", train.homography.scale_min),
      RFT_FIELD(double, "homography.scale_max", train.homography.scale_max),
      RFT_FIELD(double, "homography.max_perspective", train.homography.max_perspective),
      RFT_FIELD(double, "homography.max_translation_frac", train.homography.max_translation_frac),
      RFT_FIELD(std::uint64_t, "homography.seed", train.homography.seed),

      RFT_FIELD(double, "color_aug.brightness_min", train.color_aug.brightness_min),
      RFT_FIELD(double, "color_aug.brightness_max", train.color_aug.brightness_max),
      RFT_FIELD(double, "color_aug.contrast_min", train.color_aug.contrast_min),
      RFT_FIELD(double, "color_aug.contrast_max", train.color_aug.contrast_max),
      RFT_FIELD(double, "color_aug.hue_min_deg", train.color_aug.hue_min_deg),
      RFT_FIELD(double, "color_aug.hue_max_deg", train.color_aug.hue_max_deg),
      RFT_FIELD(double, "color_aug.saturation_min", train.color_aug.saturation_min),
      RFT_FIELD(double, "color_aug.saturation_max", train.color_aug.saturation_max),
      RFT_FIELD(double, "color_aug.noise_sigma_min", train.color_aug.noise_sigma_min),
      RFT_FIELD(double, "color_aug.noise_sigma_max", train.color_aug.noise_sigma_max),
      RFT_FIELD(int, "color_aug.jpeg_quality_min", train.color_aug.jpeg_quality_min),
      RFT_FIELD(int, "color_aug.jpeg_quality_max", train.color_aug.jpeg_quality_max),
      RFT_FIELD(double, "color_aug.p_brightness", train.color_aug.p_brightness),
      RFT_FIELD(double, "color_aug.p_contrast", train.color_aug.p_contrast),
      RFT_FIELD(double, "color_aug.p_hue", train.color_aug.p_hue),
      RFT_FIELD(double, "color_aug.p_saturation", train.color_aug.p_saturation),
      RFT_FIELD(double, "color_aug.p_noise", train.color_aug.p_noise),
      RFT_FIELD(double, "color_aug.p_jpeg", train.color_aug.p_jpeg),
      RFT_FIELD(std::uint64_t, "color_aug.seed", train.color_aug.seed),

      RFT_TEXT("model.checkpoint", checkpoint),
      RFT_FIELD(int, "model.descriptor_dim", train.model.descriptor_dim),
      RFT_LIST(int, "model.channel_widths", train.model.channel_widths),
      RFT_LIST(int, "model.dilations", train.model.dilations),
      RFT_FIELD(std::uint64_t, "model.seed", train.model.seed),

      RFT_FIELD(double, "stylize.strength", stylize.strength),
      RFT_FIELD(double, "stylize.eps", stylize.eps),
      RFT_FIELD(int, "stylize.max_dim", stylize.max_dim),

      RFT_FIELD(int, "extract.max_dim", extract.max_dim),
      RFT_FIELD(int, "extract.min_dim", extract.min_dim),
      RFT_FIELD(double, "extract.scale_factor", extract.scale_factor),
      RFT_FIELD(double, "extract.score_threshold", extract.score_threshold),
      RFT_FIELD(int, "extract.nms_radius_px", extract.nms_radius_px),
      RFT_FIELD(int, "extract.top_k", extract.top_k),

      RFT_FIELD(int, "localize.retrieval_k", localize.retrieval_k),
      RFT_FIELD(double, "localize.inlier_threshold_px", localize.inlier_threshold_px),
      RFT_FIELD(int, "localize.ransac_iterations", localize.ransac_iterations),
      RFT_FIELD(int, "localize.min_inliers", localize.min_inliers),
      RFT_FIELD(std::uint64_t, "localize.seed", localize.seed),

      RFT_FIELD(int, "synth.n_db", synth.n_db),
      RFT_FIELD(int, "synth.n_query", synth.n_query),
      RFT_FIELD(int, "synth.texture_width", synth.texture_width),
      RFT_FIELD(int, "synth.texture_height", synth.texture_height),
      RFT_TEXT("synth.shifts", synth.shifts),
      RFT_FIELD(std::uint64_t, "synth.seed", synth.seed),
      RFT_FIELD(int, "synth.image_width", synth.options.image_width),
      RFT_FIELD(int, "synth.image_height", synth.options.image_height),
      RFT_FIELD(double, "synth.focal", synth.options.focal),
      RFT_FIELD(double, "synth.texture_meters_per_pixel", synth.options.texture_meters_per_pixel),
      RFT_FIELD(double, "synth.min_height", synth.options.min_height),
      RFT_FIELD(double, "synth.max_height", synth.options.max_height),
      RFT_FIELD(double, "synth.max_tilt_deg", synth.options.max_tilt_deg),
      RFT_FIELD(double, "synth.max_yaw_deg", synth.options.max_yaw_deg),
      RFT_FIELD(int, "synth.retrieval_k", synth.options.retrieval_k),

      RFT_LIST(double, "eval.warp_thresholds_px", eval.warp_thresholds_px),
      RFT_FIELD(int, "eval.warp_pairs", eval.warp_pairs),
  };
  return table;
}

#undef RFT_FIELD
#undef RFT_LIST
#undef RFT_TEXT

void validate(const RunConfig& cfg) {
  if (cfg.per_scene_cap < 1) throw ConfigError("data.per_scene_cap must be >= 1");
  cfg.train.validate();
  cfg.extract.validate();
  if (cfg.stylize.max_dim < 1 || cfg.stylize.strength < 0 || cfg.stylize.strength > 1)
    throw ConfigError("stylize: strength must be in [0, 1] and max_dim >= 1");
  if (cfg.localize.retrieval_k < 1 || cfg.localize.ransac_iterations < 1 || cfg.localize.min_inliers < 4 ||
      !(cfg.localize.inlier_threshold_px > 0))
    throw ConfigError("localize: invalid settings");
  if (cfg.synth.n_db < 1 || cfg.synth.n_query < 0) throw ConfigError("synth: need n_db >= 1 and n_query >= 0");
  if (cfg.eval.warp_thresholds_px.size() != 3) throw ConfigError("eval.warp_thresholds_px needs three values");
  if (cfg.eval.warp_pairs < 1) throw ConfigError("eval.warp_pairs must be >= 1");
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!file.empty()) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
      pt::read_ini(file.string(), tree);
    } catch (const pt::ini_parser_error& e) {
      throw ConfigError("cannot parse config " + file.string() + ": " + e.message());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw ConfigError("config key outside a section: " + section);
      for (const auto& [key, value] : body) apply_setting(cfg, section + "." + key, value.data());
    }
  }
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like section.key=value: " + item);
    apply_setting(cfg, trim(item.substr(0, eq)), item.substr(eq + 1));
  }
  if (const char* env = std::getenv("RFT_SEED"); env && *env) apply_setting(cfg, "train.seed", env);
  validate(cfg);
  return cfg;
}

std::string to_ini(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

void write_snapshot(const RunConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config snapshot: " + path.string());
  out << to_ini(cfg);
}

}  // namespace rft
