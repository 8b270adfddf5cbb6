#include <filesystem>

#include "banet/config.hpp"
#include "doctest.h"

using namespace banet;
namespace fs = std::filesystem;

TEST_CASE("config text parsing") {
  const auto pairs = parse_config_text(
      "# preset\n"
      "train.epochs = 5   # short\n"
      "\n"
      "  model.pee=false\n"
      "backbone.stage_channels = 8, 8, 16, 16\n");
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0] == std::pair<std::string, std::string>{"train.epochs", "5"});
  CHECK(pairs[1].second == "false");

  RunConfig cfg;
  apply_config(cfg, pairs);
  CHECK(cfg.train.epochs == 5);
  CHECK_FALSE(cfg.model.ablation.pee);
  CHECK(cfg.model.backbone.stage_channels == std::array<int, 4>{8, 8, 16, 16});

  CHECK_THROWS_WITH_AS(parse_config_text("a = 1\nnot a pair\n"), doctest::Contains("line 2"),
                       ConfigError);
  CHECK_THROWS_AS(parse_config_text("= 3\n"), ConfigError);
  CHECK(parse_override("train.lr=0.5") == std::pair<std::string, std::string>{"train.lr", "0.5"});
  CHECK_THROWS_AS(parse_override("train.lr"), ConfigError);
}

TEST_CASE("bad keys and values name the key") {
  RunConfig cfg;
  CHECK_THROWS_WITH_AS(set_config_value(cfg, "train.epoch", "3"),
                       doctest::Contains("train.epoch"), ConfigError);
  CHECK_THROWS_WITH_AS(set_config_value(cfg, "train.epochs", "three"),
                       doctest::Contains("train.epochs"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "model.ia", "maybe"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "backbone.stage_channels", "1,2,3"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "model.init", "xavier"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "train.precision", "f16"), ConfigError);

  set_config_value(cfg, "eval.split", "nowhere");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("dump round trip and hash") {
  RunConfig cfg;
  set_config_value(cfg, "train.lr", "0.0123");
  set_config_value(cfg, "aspp.rates", "1,3,5,7");
  set_config_value(cfg, "model.init", "fan_in");
  set_config_value(cfg, "synth.polarity", "0");
  set_config_value(cfg, "train.precision", "f64");
  set_config_value(cfg, "pee.stage2", "3,5,9");
  const std::string dump = dump_config(cfg);

  RunConfig back;
  apply_config(back, parse_config_text(dump));
  CHECK(dump_config(back) == dump);
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(config_hash(cfg).size() == 16);
  CHECK(config_hash(cfg) != config_hash(RunConfig{}));
  CHECK(config_hash(RunConfig{}) == config_hash(RunConfig{}));

  // Every key appears exactly once in the dump.
  for (const std::string& key : config_keys()) {
    CAPTURE(key);
    const auto first = dump.find(key + " = ");
    REQUIRE(first != std::string::npos);
    CHECK(dump.find("\n" + key + " = ", first + 1) == std::string::npos);
  }
}

TEST_CASE("defaults") {
  const RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.precision == Precision::f32);
  CHECK(cfg.init == InitScheme::he);
  CHECK(cfg.train.base_lr == kDeskBaseLr);
  CHECK(cfg.train.batch_size == 4);
  CHECK(cfg.train.epochs == 30);
  CHECK(cfg.eval_threshold == 0.5);
}

TEST_CASE("run directories and splits") {
  const fs::path root = fs::temp_directory_path() / ("banet_cfg_" + std::to_string(::getpid()));
  fs::remove_all(root);
  RunConfig cfg;
  const fs::path a = make_run_dir(root, "train", cfg);
  const fs::path b = make_run_dir(root, "train", cfg);
  CHECK(a != b);
  CHECK(a.filename().string().starts_with("train-" + config_hash(cfg) + "-"));
  REQUIRE(fs::exists(a / "config.txt"));
  RunConfig reread;
  apply_config(reread, read_config_file(a / "config.txt"));
  CHECK(dump_config(reread) == dump_config(cfg));
  fs::remove_all(root);

  set_config_value(cfg, "synth.n_images", "5");
  set_config_value(cfg, "synth.image_size", "32");
  set_config_value(cfg, "data.train_count", "3");
  const auto [train, test] = split_samples(cfg, load_samples(cfg));
  REQUIRE(train.size() == 3);
  REQUIRE(test.size() == 2);
  CHECK(train[0].id == "img_0000");
  CHECK(test[1].id == "img_0004");

  set_config_value(cfg, "data.train_count", "9");
  CHECK_THROWS_AS(split_samples(cfg, load_samples(cfg)), DataError);
}
