#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rft/evalkit.hpp"
#include "rft/extract.hpp"
#include "rft/stylize.hpp"
#include "rft/trainer.hpp"

namespace rft {

/// Synthetic planar benchmark used by `eval-loc --synthetic` and `eval-warp`.
struct SynthConfig {
  int n_db = 20;
  int n_query = 10;
  int texture_width = 640;
  int texture_height = 480;
  std::string shifts = "night,mist";  // comma-separated appearance shifts applied to queries
  std::uint64_t seed = 0;
  SynthBenchmarkOptions options;
};

struct EvalConfig {
  std::vector<double> warp_thresholds_px = {1.0, 3.0, 5.0};
  int warp_pairs = 8;
};

/// Everything a CLI run can be configured with. The INI sections are named after the members.
struct RunConfig {
  int per_scene_cap = 300;  // [data]
  std::string checkpoint;   // [model] checkpoint; empty = freshly initialized weights
  TrainConfig train;
  StylizeOptions stylize;
  ExtractConfig extract;
  LocalizeOptions localize;
  SynthConfig synth;
  EvalConfig eval;
};

/// Sets `section.key` from text. Throws ConfigError for unknown keys or unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Defaults, then the INI file (if any), then `key=value` overrides, then RFT_SEED.
/// Validates the result.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

/// Every key with its resolved value, in INI syntax; loading it back yields the same config.
std::string to_ini(const RunConfig& cfg);
void write_snapshot(const RunConfig& cfg, const std::filesystem::path& path);

/// All known keys in `section.key` form.
std::vector<std::string> known_keys();

}  // namespace rft
