#include "rft/experiment.hpp"

#include <map>
#include <sstream>

#include "rft/error.hpp"
#include "rft/random.hpp"

namespace rft {

DatasetManifest write_training_set(const SynthBenchmark& bench, const std::filesystem::path& root) {
  DatasetManifest manifest;
  manifest.root = root;
  manifest.per_scene_cap = static_cast<int>(bench.database.size());
  std::filesystem::create_directories(root / "synth");
  for (const auto& view : bench.database) {
    const std::string rel = "synth/" + view.pose.name + ".png";
    save_image(view.image, root / rel);
    manifest.entries.push_back({"synth", rel});
  }
  return manifest;
}

std::vector<RenderedView> shifted_queries(const SynthBenchmark& bench, AppearanceShift shift, std::uint64_t seed) {
  std::vector<RenderedView> out = bench.queries;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].image = apply_appearance_shift(out[i].image, shift, mix_seed(seed, i));
  return out;
}

std::vector<AppearanceShift> parse_shifts(const std::string& list) {
  std::vector<AppearanceShift> shifts;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "none") shifts.push_back(AppearanceShift::none);
    else if (item == "night") shifts.push_back(AppearanceShift::night);
    else if (item == "mist") shifts.push_back(AppearanceShift::mist);
    else if (!item.empty()) throw ConfigError("unknown appearance shift: " + item);
  }
  if (shifts.empty()) throw ConfigError("no appearance shift given");
  return shifts;
}

FeatureSet keypoints_visible_in(const FeatureSet& a, const Homography& h_ab, int width, int height) {
  FeatureSet out;
  out.dim = a.dim;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto p = h_ab.apply(Eigen::Vector2d(a.keypoints[i].x, a.keypoints[i].y));
    if (!p || p->x() < 0 || p->y() < 0 || p->x() > width - 1 || p->y() > height - 1) continue;
    out.keypoints.push_back(a.keypoints[i]);
    out.descriptors.insert(out.descriptors.end(), a.descriptor(i), a.descriptor(i) + a.dim);
  }
  return out;
}

namespace {

std::map<std::string, DatabaseEntry> extract_database(const FeatureNetwork& network, const SynthBenchmark& bench,
                                                      const ExtractConfig& extract) {
  std::map<std::string, DatabaseEntry> db;
  for (const auto& view : bench.database) db[view.pose.name] = {extract_multiscale(view.image, network, extract), view.pose};
  return db;
}

const RenderedView& database_view(const SynthBenchmark& bench, const std::string& name) {
  for (const auto& v : bench.database)
    if (v.pose.name == name) return v;
  throw Error("unknown database view " + name);
}

}  // namespace

LocalizationEval evaluate_localization(const FeatureNetwork& network, const SynthBenchmark& bench,
                                       const std::vector<RenderedView>& queries, const ExtractConfig& extract,
                                       const LocalizeOptions& options, double eps_px) {
  const auto db = extract_database(network, bench, extract);
  const auto& k = bench.intrinsics;
  LocalizationEval result;
  double rep_sum = 0, mma_sum = 0;
  for (const auto& q : queries) {
    const FeatureSet fq = extract_multiscale(q.image, network, extract);
    const LocalizeResult loc = rft::localize(q.pose.name, fq, bench.retrieval, db, bench.plane, k, options);
    if (loc.pose) {
      result.poses.push_back(*loc.pose);
      result.errors.push_back(pose_error(*loc.pose, q.pose));
    } else {
      result.errors.push_back(PoseError::failure());
    }
    const auto* retrieved = bench.retrieval.find(q.pose.name);
    if (!retrieved || retrieved->empty()) continue;
    const auto& top = database_view(bench, retrieved->front());
    const Homography h_qd = image_to_image(q.pose, top.pose, k, bench.plane);
    const FeatureSet a = keypoints_visible_in(fq, h_qd, k.width, k.height);
    const FeatureSet b = keypoints_visible_in(db.at(top.pose.name).features, h_qd.inverse(), k.width, k.height);
    rep_sum += repeatability_at(a, b, h_qd, eps_px).value;
    mma_sum += mma_at(mutual_nn(fq, db.at(top.pose.name).features), fq, db.at(top.pose.name).features, h_qd, eps_px).value;
  }
  if (!queries.empty()) {
    result.rates = success_rates(result.errors);
    result.mean_repeatability = rep_sum / queries.size();
    result.mean_mma = mma_sum / queries.size();
  }
  return result;
}

WarpEval evaluate_warp_pairs(const FeatureNetwork& network, const SynthBenchmark& bench,
                             const std::vector<RenderedView>& queries, const ExtractConfig& extract,
                             const std::array<double, 3>& thresholds_px, int max_pairs) {
  WarpEval out;
  const auto& k = bench.intrinsics;
  for (const auto& q : queries) {
    if (out.pairs >= max_pairs) break;
    const auto* retrieved = bench.retrieval.find(q.pose.name);
    if (!retrieved || retrieved->empty()) continue;
    const auto& top = database_view(bench, retrieved->front());
    const Homography h_qd = image_to_image(q.pose, top.pose, k, bench.plane);
    const FeatureSet fq = extract_multiscale(q.image, network, extract);
    const FeatureSet fd = extract_multiscale(top.image, network, extract);
    const FeatureSet a = keypoints_visible_in(fq, h_qd, k.width, k.height);
    const FeatureSet b = keypoints_visible_in(fd, h_qd.inverse(), k.width, k.height);
    const MatchSet matches = mutual_nn(fq, fd);
    for (int t = 0; t < 3; ++t) {
      out.repeatability[t] += repeatability_at(a, b, h_qd, thresholds_px[t]).value;
      out.mma[t] += mma_at(matches, fq, fd, h_qd, thresholds_px[t]).value;
    }
    ++out.pairs;
  }
  if (out.pairs > 0)
    for (int t = 0; t < 3; ++t) out.repeatability[t] /= out.pairs, out.mma[t] /= out.pairs;
  return out;
}

}  // namespace rft
