#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "rft/error.hpp"
#include "rft/trainer.hpp"
#include "test_support.hpp"

using namespace rft;
using rft::testing::TempDir;

namespace {

DatasetManifest small_dataset(const std::filesystem::path& root, int n) {
  DatasetManifest m;
  m.root = root;
  std::filesystem::create_directories(root / "scene");
  for (int i = 0; i < n; ++i) {
    const std::string rel = "scene/img" + std::to_string(i) + ".png";
    save_image(rft::testing::structured_image(96, 96, 100 + i), root / rel);
    m.entries.push_back({"scene", rel});
  }
  return m;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.crop_size = 64;
  cfg.batch_size = 2;
  cfg.base_lr = 1e-3;
  cfg.loss.window = 8;
  cfg.homography.max_rotation_deg = 10;
  cfg.homography.scale_min = 0.9;
  cfg.homography.scale_max = 1.1;
  return cfg;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(LrSchedule, HandValues) {
  TrainConfig cfg;
  cfg.base_lr = 1e-4;
  cfg.warmup_epochs = 5;
  cfg.decay_gamma = 0.95;
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 4), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 0), 1e-4 / 5);
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 7), 1e-4 * 0.95 * 0.95 * 0.95);
}

TEST(LrSchedule, ShapeAndRange) {
  const TrainConfig cfg;
  for (int e = 1; e < cfg.epochs; ++e) {
    if (e < cfg.warmup_epochs) EXPECT_GE(lr_at_epoch(cfg, e), lr_at_epoch(cfg, e - 1));
    else EXPECT_LT(lr_at_epoch(cfg, e), lr_at_epoch(cfg, e - 1));
  }
  EXPECT_THROW(lr_at_epoch(cfg, cfg.epochs), Error);
  EXPECT_THROW(lr_at_epoch(cfg, -1), Error);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.warmup_epochs = cfg.epochs;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.decay_gamma = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(parse_pair_mode("stylish"), ConfigError);
  EXPECT_EQ(parse_pair_mode("orig2style"), PairMode::orig2style);
}

TEST(Train, Orig2StyleWithoutIndexFailsBeforeTraining) {
  TempDir dir("train");
  const auto m = small_dataset(dir / "data", 2);
  TrainConfig cfg = tiny_config();
  cfg.pair_mode = PairMode::orig2style;
  EXPECT_THROW(train(cfg, m, {}, dir / "out"), ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir / "out" / "model.ckpt"));
}

TEST(Train, WritesCheckpointAndLog) {
  TempDir dir("train");
  const auto m = small_dataset(dir / "data", 2);
  const TrainResult r = train(tiny_config(), m, {}, dir / "out");
  EXPECT_TRUE(std::filesystem::exists(r.checkpoint));
  std::ifstream log(r.log);
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, kTrainLogHeader);
  int rows = 0;
  for (std::string line; std::getline(log, line);) ++rows;
  EXPECT_EQ(rows, 3);  // 3 epochs × 1 step of 2 pairs
  EXPECT_EQ(r.epoch_mean_loss.size(), 3u);
}

TEST(Train, SameSeedGivesIdenticalLogs) {
  TempDir dir("train");
  const auto m = small_dataset(dir / "data", 2);
  TrainConfig cfg = tiny_config();
  cfg.pair_mode = PairMode::color_aug;
  const auto a = train(cfg, m, {}, dir / "a");
  const auto b = train(cfg, m, {}, dir / "b");
  EXPECT_EQ(read_file(a.log), read_file(b.log));
  EXPECT_EQ(read_file(a.checkpoint), read_file(b.checkpoint));
}

TEST(Train, OverfitsEightImages) {
  TempDir dir("train");
  const auto m = small_dataset(dir / "data", 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 30;
  cfg.batch_size = 4;
  const auto r = train(cfg, m, {}, dir / "out");
  ASSERT_EQ(r.epoch_mean_loss.size(), 30u);
  EXPECT_LT(r.epoch_mean_loss.back(), r.epoch_mean_loss.front());
}
