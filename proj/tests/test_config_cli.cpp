#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rft/cli.hpp"
#include "rft/config.hpp"
#include "rft/error.hpp"
#include "rft/evalkit.hpp"
#include "rft/extract.hpp"
#include "rft/plot.hpp"
#include "test_support.hpp"

using namespace rft;
using rft::testing::TempDir;

namespace {

struct CliRun {
  int code = 0;
  std::string out, err;
};

CliRun run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, UnknownKeyRejected) {
  RunConfig cfg;
  EXPECT_THROW(apply_setting(cfg, "train.epochz", "3"), ConfigError);
  EXPECT_THROW(apply_setting(cfg, "train.epochs", "three"), ConfigError);
  EXPECT_THROW(load_run_config({}, {"no_equals_sign"}), ConfigError);
}

TEST(Config, OverridesWinOverFile) {
  TempDir dir("cfg");
  std::ofstream(dir / "c.ini") << "[train]\nepochs = 12\nbase_lr = 0.002\npair_mode = color_aug\n[extract]\ntop_k = 77\n";
  const RunConfig cfg = load_run_config(dir / "c.ini", {"train.epochs=4", "train.warmup_epochs=1", "model.channel_widths=4,8", "model.dilations=1,2,1"});
  EXPECT_EQ(cfg.train.epochs, 4);
  EXPECT_DOUBLE_EQ(cfg.train.base_lr, 0.002);
  EXPECT_EQ(cfg.train.pair_mode, PairMode::color_aug);
  EXPECT_EQ(cfg.extract.top_k, 77);
  EXPECT_EQ(cfg.train.model.channel_widths, (std::vector<int>{4, 8}));
}

TEST(Config, UnknownKeyInFileRejected) {
  TempDir dir("cfg");
  std::ofstream(dir / "c.ini") << "[train]\nlearning_rate = 1\n";
  EXPECT_THROW(load_run_config(dir / "c.ini", {}), ConfigError);
}

TEST(Config, SnapshotReloadsToSameConfig) {
  TempDir dir("cfg");
  RunConfig cfg = load_run_config({}, {"train.base_lr=0.00123456789", "loss.lambda=0.3", "synth.shifts=mist"});
  write_snapshot(cfg, dir / "snap.ini");
  const RunConfig back = load_run_config(dir / "snap.ini", {});
  EXPECT_EQ(to_ini(back), to_ini(cfg));
  EXPECT_DOUBLE_EQ(back.train.base_lr, 0.00123456789);
  for (const auto& key : known_keys()) EXPECT_NE(to_ini(cfg).find(key.substr(key.find('.') + 1)), std::string::npos) << key;
}

TEST(Config, SeedFromEnvironment) {
  ::setenv("RFT_SEED", "31337", 1);
  const RunConfig cfg = load_run_config({}, {"train.seed=5"});
  ::unsetenv("RFT_SEED");
  EXPECT_EQ(cfg.train.seed, 31337u);
  EXPECT_EQ(load_run_config({}, {"train.seed=5"}).train.seed, 5u);
}

TEST(Cli, NoArgumentsIsUsageError) {
  const CliRun r = run_cli({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownCommandOrFlag) {
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"match", "--bogus"}).code, 1);
}

TEST(Cli, UnknownOverrideIsUsageError) {
  TempDir dir("cli");
  save_image(rft::testing::structured_image(64, 64, 1), dir / "img.png");
  const CliRun r = run_cli({"extract", "--image", (dir / "img.png").string(), "--out", (dir / "f.rft").string(),
                            "--set", "extract.nope=1"});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, RuntimeErrorExitsTwo) {
  TempDir dir("cli");
  std::ofstream(dir / "a.rft") << "garbage";
  EXPECT_EQ(run_cli({"match", "--a", (dir / "a.rft").string(), "--b", (dir / "a.rft").string(), "--out",
                     (dir / "m.txt").string()})
                .code,
            2);
}

TEST(Cli, ExtractMatchAndSnapshotReplay) {
  TempDir dir("cli");
  save_image(make_texture(320, 240, 2), dir / "img.png");
  std::ofstream(dir / "c.ini") << "[extract]\nscore_threshold = 0.3\n";
  const std::string img = (dir / "img.png").string();
  CliRun r = run_cli({"extract", "--config", (dir / "c.ini").string(), "--image", img, "--out",
                      (dir / "a.rft").string(), "--top-k", "5000"});
  ASSERT_EQ(r.code, 0) << r.err;
  const FeatureSet f = load_features(dir / "a.rft");
  EXPECT_LE(f.size(), 5000u);
  ASSERT_TRUE(std::filesystem::exists(dir / "a.rft.config.ini"));

  // Replaying the resolved snapshot reproduces the output exactly.
  r = run_cli({"extract", "--config", (dir / "a.rft.config.ini").string(), "--image", img, "--out",
               (dir / "b.rft").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(dir / "a.rft"), read_file(dir / "b.rft"));

  r = run_cli({"match", "--a", (dir / "a.rft").string(), "--b", (dir / "b.rft").string(), "--out",
               (dir / "m.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream m(dir / "m.txt");
  std::size_t lines = 0;
  for (int ia, ib; m >> ia >> ib;) {
    double d;
    m >> d;
    EXPECT_EQ(ia, ib);
    ++lines;
  }
  EXPECT_EQ(lines, f.size());
}

TEST(Cli, EvalLocScoresPoseFiles) {
  TempDir dir("cli");
  const SynthBenchmark b = synth_benchmark(1, 4, make_texture(320, 240, 1), 3);
  std::vector<PoseRecord> gt, est;
  for (const auto& q : b.queries) gt.push_back(q.pose);
  est = gt;
  est[1].t.x() += 0.4;  // 0.4 m off: fails the tightest threshold only
  est.pop_back();       // missing query counts as a failure
  save_poses(gt, dir / "gt.txt");
  save_poses(est, dir / "est.txt");
  const CliRun r = run_cli({"eval-loc", "--poses", (dir / "est.txt").string(), "--gt", (dir / "gt.txt").string(),
                            "--name", "fixture", "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const ResultTable t = load_results_csv(dir / "out" / "loc_results.csv");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].config, "fixture");
  EXPECT_EQ(t.rows[0].values, (std::array<double, 3>{50.0, 75.0, 75.0}));
}

TEST(Cli, EvalLocSyntheticGivesMonotoneRates) {
  TempDir dir("cli");
  const CliRun r = run_cli({"eval-loc", "--synthetic", "--out", (dir / "out").string(), "--set", "synth.n_db=6",
                            "--set", "synth.n_query=3", "--set", "synth.shifts=none", "--set",
                            "extract.score_threshold=0.3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const ResultTable t = load_results_csv(dir / "out" / "loc_results.csv");
  ASSERT_EQ(t.rows.size(), 1u);
  const auto& v = t.rows[0].values;
  EXPECT_LE(v[0], v[1]);
  EXPECT_LE(v[1], v[2]);
  for (double x : v) EXPECT_TRUE(x >= 0 && x <= 100);
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "resolved_config.ini"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "retrieval.txt"));
}

TEST(Cli, PlotResultsAndLogs) {
  TempDir dir("cli");
  ResultTable t;
  t.headers = {"a", "b", "c"};
  t.rows.push_back({"plain", {10, 20, 30}});
  save_results_csv(t, dir / "r.csv");
  CliRun r = run_cli({"plot", "--results", (dir / "r.csv").string(), "--out", (dir / "r.svg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(read_file(dir / "r.svg").find("<svg"), std::string::npos);
  std::ofstream(dir / "log.csv") << "epoch,step,lr,l_cosim,l_peaky_a,l_peaky_b,l_rep,l_ap,kappa,mean_ap,total\n"
                                 << "0,0,1,0,0,0,0,0,0.5,0,2\n0,1,1,0,0,0,0,0,0.5,0,1\n1,2,1,0,0,0,0,0,0.5,0,0.5\n";
  EXPECT_EQ(epoch_means_from_log(dir / "log.csv"), (std::vector<double>{1.5, 0.5}));
  r = run_cli({"plot", "--log", "run=" + (dir / "log.csv").string(), "--out", (dir / "l.svg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
}

TEST(Cli, StylizeThenTrain) {
  TempDir dir("cli");
  std::filesystem::create_directories(dir / "data" / "scene");
  for (int i = 0; i < 2; ++i)
    save_image(rft::testing::structured_image(80, 80, i), dir / "data" / "scene" / ("i" + std::to_string(i) + ".png"));
  CliRun r = run_cli({"stylize", "--data", (dir / "data").string(), "--out", (dir / "st").string(), "--per-category",
                      "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_stylized_index(dir / "st" / "stylized_index.tsv").total(), 12u);
  r = run_cli({"train", "--data", (dir / "data").string(), "--out", (dir / "tr").string(), "--manifest",
               (dir / "st" / "manifest.tsv").string(), "--stylized-index", (dir / "st" / "stylized_index.tsv").string(),
               "--set", "train.pair_mode=orig2style", "--set", "train.epochs=2", "--set", "train.warmup_epochs=1",
               "--set", "train.crop_size=48", "--set", "loss.window=8", "--set", "train.batch_size=2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "tr" / "model.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "tr" / "resolved_config.ini"));
}
