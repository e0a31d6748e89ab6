#include "rft/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "rft/config.hpp"
#include "rft/error.hpp"
#include "rft/experiment.hpp"
#include "rft/log.hpp"
#include "rft/plot.hpp"

namespace rft::cli {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  int verbose = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", common.overrides, "Override a config value, e.g. --set train.epochs=10");
  cmd->add_flag("-v,--verbose", common.verbose, "More logging (repeatable)");
  cmd->add_flag("-q,--quiet", common.quiet, "Errors only");
}

RunConfig resolve(const Common& common, std::vector<std::string> extra = {}) {
  log_level() = common.quiet ? LogLevel::quiet : common.verbose >= 2 ? LogLevel::debug
                                               : common.verbose == 1 ? LogLevel::info
                                                                     : LogLevel::warning;
  std::vector<std::string> overrides = common.overrides;
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  return load_run_config(common.config, overrides);
}

fs::path snapshot_for_file(const fs::path& out) { return fs::path(out.string() + ".config.ini"); }

Params<float> model_params(const RunConfig& cfg) {
  if (!cfg.checkpoint.empty()) return load_checkpoint(cfg.checkpoint);
  log_warning("no model.checkpoint configured; using freshly initialized weights");
  return init_params<float>(cfg.train.model);
}

/// `name=path` pairs; a bare path is named after its parent directory.
std::vector<std::pair<std::string, std::string>> parse_models(const std::vector<std::string>& specs,
                                                              const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq != std::string::npos) out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    else out.emplace_back(fs::path(s).parent_path().filename().string(), s);
  }
  if (out.empty()) out.emplace_back("model", cfg.checkpoint);
  return out;
}

SynthBenchmark make_benchmark(const RunConfig& cfg) {
  const Image texture = make_texture(cfg.synth.texture_width, cfg.synth.texture_height, cfg.synth.seed);
  return synth_benchmark(cfg.synth.n_db, cfg.synth.n_query, texture, cfg.synth.seed, cfg.synth.options);
}

FeatureNetwork network_for(const std::string& checkpoint, const RunConfig& cfg) {
  RunConfig c = cfg;
  c.checkpoint = checkpoint;
  return make_network(model_params(c));
}

void emit(const ResultTable& table, const fs::path& csv, std::ostream& out) {
  save_results_csv(table, csv);
  out << format_table(table);
}

std::string threshold_label(double px) {
  std::ostringstream s;
  s << px << "px";
  return s.str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train and evaluate appearance-robust local features", "rft"};
  app.require_subcommand(1);
  Common common;

  auto* stylize = app.add_subcommand("stylize", "Build a manifest and stylize every image with a style pool");
  std::string data_dir, out_dir, styles_dir, import_dir;
  int per_category = 10;
  stylize->add_option("--data", data_dir, "Dataset root with one subdirectory per scene")->required();
  stylize->add_option("--out", out_dir, "Output directory")->required();
  stylize->add_option("--styles", styles_dir, "Style pool laid out as <dir>/<category>/<image>");
  stylize->add_option("--per-category", per_category, "Exemplars per category for the generated pool");
  stylize->add_option("--import", import_dir, "Index pre-stylized images from this directory instead");
  add_common(stylize, common);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string manifest_file, index_file;
  train_cmd->add_option("--data", data_dir, "Dataset root")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--manifest", manifest_file, "Manifest written by `stylize`");
  train_cmd->add_option("--stylized-index", index_file, "Stylized index written by `stylize`");
  add_common(train_cmd, common);

  auto* extract = app.add_subcommand("extract", "Extract multi-scale keypoints and descriptors to an RFT1 file");
  std::string image_file, out_file, checkpoint;
  std::optional<int> top_k;
  extract->add_option("--image", image_file, "Input image")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", out_file, "Output RFT1 file")->required();
  extract->add_option("--top-k", top_k, "Keypoint budget");
  extract->add_option("--checkpoint", checkpoint, "Model checkpoint (overrides model.checkpoint)");
  add_common(extract, common);

  auto* match = app.add_subcommand("match", "Mutual nearest-neighbor matching of two RFT1 files");
  std::string file_a, file_b;
  match->add_option("--a", file_a, "First RFT1 file")->required()->check(CLI::ExistingFile);
  match->add_option("--b", file_b, "Second RFT1 file")->required()->check(CLI::ExistingFile);
  match->add_option("--out", out_file, "Match file: `idx_a idx_b distance` per line")->required();
  add_common(match, common);

  auto* eval_warp = app.add_subcommand("eval-warp", "Repeatability and matching accuracy on the synthetic benchmark");
  std::vector<std::string> models;
  eval_warp->add_option("--out", out_dir, "Output directory")->required();
  eval_warp->add_option("--model", models, "name=checkpoint (repeatable)");
  add_common(eval_warp, common);

  auto* eval_loc = app.add_subcommand("eval-loc", "Localization success rates");
  std::string poses_file, gt_file, run_name = "estimate";
  bool synthetic = false;
  eval_loc->add_option("--out", out_dir, "Output directory")->required();
  eval_loc->add_flag("--synthetic", synthetic, "Run the full pipeline on the synthetic planar benchmark");
  eval_loc->add_option("--model", models, "name=checkpoint (repeatable, with --synthetic)");
  eval_loc->add_option("--poses", poses_file, "Estimated poses to score")->check(CLI::ExistingFile);
  eval_loc->add_option("--gt", gt_file, "Ground-truth poses")->check(CLI::ExistingFile);
  eval_loc->add_option("--name", run_name, "Row label when scoring a pose file");
  add_common(eval_loc, common);

  auto* plot = app.add_subcommand("plot", "Render result CSVs or training logs as SVG charts");
  std::string results_file, title;
  std::vector<std::string> logs;
  plot->add_option("--results", results_file, "Results CSV from eval-*")->check(CLI::ExistingFile);
  plot->add_option("--log", logs, "Training log CSV, optionally name=path (repeatable)");
  plot->add_option("--out", out_file, "Output SVG")->required();
  plot->add_option("--title", title, "Chart title");
  add_common(plot, common);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (stylize->parsed()) {
      const RunConfig cfg = resolve(common);
      write_snapshot(cfg, fs::path(out_dir) / "resolved_config.ini");
      const DatasetManifest manifest = build_manifest(data_dir, cfg.per_scene_cap, cfg.train.seed);
      save_manifest(manifest, fs::path(out_dir) / "manifest.tsv");
      StylizedIndex index;
      if (!import_dir.empty()) {
        index = import_stylized_dir(manifest, import_dir);
      } else {
        const StylePool pool = styles_dir.empty()
                                   ? make_default_style_pool(fs::path(out_dir) / "styles", per_category, cfg.train.seed)
                                   : load_style_pool(styles_dir);
        std::size_t written = 0;
        index = build_stylized_index(manifest, pool, fs::path(out_dir) / "stylized", cfg.stylize, &written);
        log_info("wrote " + std::to_string(written) + " stylized images");
      }
      save_stylized_index(index, fs::path(out_dir) / "stylized_index.tsv");
      out << manifest.entries.size() << " images, " << index.total() << " stylizations\n";
    } else if (train_cmd->parsed()) {
      const RunConfig cfg = resolve(common);
      write_snapshot(cfg, fs::path(out_dir) / "resolved_config.ini");
      const DatasetManifest manifest = manifest_file.empty() ? build_manifest(data_dir, cfg.per_scene_cap, cfg.train.seed)
                                                             : load_manifest(manifest_file, data_dir);
      const StylizedIndex index = index_file.empty() ? StylizedIndex{} : load_stylized_index(index_file);
      const TrainResult r = train(cfg.train, manifest, index, out_dir);
      out << "checkpoint " << r.checkpoint.string() << "\nlog " << r.log.string() << "\n";
    } else if (extract->parsed()) {
      std::vector<std::string> extra;
      if (top_k) extra.push_back("extract.top_k=" + std::to_string(*top_k));
      if (!checkpoint.empty()) extra.push_back("model.checkpoint=" + checkpoint);
      const RunConfig cfg = resolve(common, extra);
      write_snapshot(cfg, snapshot_for_file(out_file));
      const FeatureSet fs = extract_multiscale(load_image(image_file), make_network(model_params(cfg)), cfg.extract);
      save_features(fs, out_file);
      out << fs.size() << " keypoints\n";
    } else if (match->parsed()) {
      const RunConfig cfg = resolve(common);
      write_snapshot(cfg, snapshot_for_file(out_file));
      const MatchSet m = mutual_nn(load_features(file_a), load_features(file_b));
      std::ofstream f(out_file);
      if (!f) throw IoError("cannot write " + out_file);
      f << std::setprecision(9);
      for (const auto& p : m.pairs) f << p.index_a << ' ' << p.index_b << ' ' << p.distance << '\n';
      out << m.size() << " matches\n";
    } else if (eval_warp->parsed()) {
      const RunConfig cfg = resolve(common);
      write_snapshot(cfg, fs::path(out_dir) / "resolved_config.ini");
      const SynthBenchmark bench = make_benchmark(cfg);
      const std::array<double, 3> th = {cfg.eval.warp_thresholds_px[0], cfg.eval.warp_thresholds_px[1],
                                         cfg.eval.warp_thresholds_px[2]};
      ResultTable table;
      for (int t = 0; t < 3; ++t) table.headers[t] = threshold_label(th[t]);
      for (const auto& [name, ckpt] : parse_models(models, cfg)) {
        const FeatureNetwork net = network_for(ckpt, cfg);
        for (AppearanceShift shift : parse_shifts(cfg.synth.shifts)) {
          const WarpEval e = evaluate_warp_pairs(net, bench, shifted_queries(bench, shift, cfg.synth.seed), cfg.extract,
                                                 th, cfg.eval.warp_pairs);
          const std::string label = name + "/" + appearance_name(shift);
          ResultRow rep{label + "/repeatability", {}}, mma{label + "/mma", {}};
          for (int t = 0; t < 3; ++t) rep.values[t] = 100 * e.repeatability[t], mma.values[t] = 100 * e.mma[t];
          table.rows.push_back(rep);
          table.rows.push_back(mma);
        }
      }
      emit(table, fs::path(out_dir) / "warp_results.csv", out);
    } else if (eval_loc->parsed()) {
      const RunConfig cfg = resolve(common);
      write_snapshot(cfg, fs::path(out_dir) / "resolved_config.ini");
      ResultTable table;
      table.headers = {"0.25m_2deg", "0.5m_5deg", "5m_10deg"};
      if (synthetic) {
        const SynthBenchmark bench = make_benchmark(cfg);
        save_retrieval(bench.retrieval, fs::path(out_dir) / "retrieval.txt");
        std::vector<PoseRecord> gt;
        for (const auto& q : bench.queries) gt.push_back(q.pose);
        save_poses(gt, fs::path(out_dir) / "queries_gt.txt");
        for (const auto& [name, ckpt] : parse_models(models, cfg)) {
          const FeatureNetwork net = network_for(ckpt, cfg);
          for (AppearanceShift shift : parse_shifts(cfg.synth.shifts)) {
            const LocalizationEval e = evaluate_localization(net, bench, shifted_queries(bench, shift, cfg.synth.seed),
                                                             cfg.extract, cfg.localize);
            const std::string label = name + "/" + appearance_name(shift);
            save_poses(e.poses, fs::path(out_dir) / (name + "_" + appearance_name(shift) + "_poses.txt"));
            table.rows.push_back({label, e.rates.percent});
          }
        }
      } else {
        if (poses_file.empty() || gt_file.empty()) throw ConfigError("eval-loc needs --synthetic or --poses with --gt");
        const auto estimates = load_poses(poses_file);
        std::vector<PoseError> errors;
        for (const auto& truth : load_poses(gt_file)) {
          auto it = std::find_if(estimates.begin(), estimates.end(), [&](const auto& p) { return p.name == truth.name; });
          errors.push_back(it == estimates.end() ? PoseError::failure() : pose_error(*it, truth));
        }
        table.rows.push_back({run_name, success_rates(errors).percent});
      }
      emit(table, fs::path(out_dir) / "loc_results.csv", out);
    } else if (plot->parsed()) {
      const RunConfig cfg = resolve(common);
      write_snapshot(cfg, snapshot_for_file(out_file));
      if (!results_file.empty() == !logs.empty()) throw ConfigError("plot needs exactly one of --results or --log");
      if (!results_file.empty()) {
        plot_success_rates(load_results_csv(results_file), title.empty() ? "Success rate" : title, out_file);
      } else {
        std::vector<Curve> curves;
        for (const auto& spec : logs) {
          const auto eq = spec.find('=');
          const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
          const std::string label = eq == std::string::npos ? fs::path(spec).parent_path().filename().string()
                                                            : spec.substr(0, eq);
          curves.push_back({label, epoch_means_from_log(path)});
        }
        plot_curves(curves, title.empty() ? "Training loss" : title, out_file);
      }
      out << "wrote " << out_file << "\n";
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

}  // namespace rft::cli
