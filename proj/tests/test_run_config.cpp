#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lpv/run_config.hpp"

using namespace lpv;
namespace fs = std::filesystem;

TEST_CASE("key value parsing") {
  const auto kv = parse_key_values("# comment\nseed = 3\n\n  lr=0.01   # trailing\nvocab = cat, dog\n");
  CHECK(kv.size() == 3);
  CHECK(kv.at("seed") == "3");
  CHECK(kv.at("lr") == "0.01");
  CHECK(kv.at("vocab") == "cat, dog");
  CHECK_THROWS_AS(parse_key_values("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values(" = 4\n"), ConfigError);
}

TEST_CASE("apply config sets fields and rejects bad input") {
  RunConfig cfg;
  apply_config(cfg, {{"seed", "9"}, {"stages", "2"}, {"img_w", "64"}, {"mask", "off"}, {"vocab", "cat, dog"}});
  CHECK(cfg.model.seed == 9);
  CHECK(cfg.model.n_stages == 2);
  CHECK(cfg.model.backbone.img_w == 64);
  CHECK(cfg.render.img_w == 64);
  CHECK(cfg.mask_mode == MaskMode::kOff);
  CHECK(cfg.vocab == std::vector<std::string>{"cat", "dog"});
  CHECK_THROWS_AS(apply_config(cfg, {{"colour", "red"}}), ConfigError);
  CHECK_THROWS_AS(apply_config(cfg, {{"seed", "-1"}}), ConfigError);
  CHECK_THROWS_AS(apply_config(cfg, {{"lr", "fast"}}), ConfigError);
  CHECK_THROWS_AS(apply_config(cfg, {{"periodic_padding", "maybe"}}), ConfigError);
  CHECK_THROWS_AS(apply_config(cfg, {{"mask", "sometimes"}}), ConfigError);
}

TEST_CASE("later layers override earlier ones") {
  RunConfig cfg;
  CHECK(cfg.model.seed == 1);
  apply_config(cfg, parse_key_values("seed = 4\nepochs = 3\nmask_on_epoch = 2\n"));
  apply_config(cfg, {{"seed", "5"}});
  CHECK(cfg.model.seed == 5);
  CHECK(cfg.model.schedule.total_epochs == 3);
  CHECK(cfg.model.schedule.mask_on_epoch == 2);
}

TEST_CASE("formatted config round trips") {
  RunConfig cfg;
  apply_config(cfg, {{"lr", "0.0003"}, {"noise", "0.125"}, {"vocab", "cat,act"}, {"periodic_padding", "true"}});
  RunConfig back;
  apply_config(back, parse_key_values(format_config(cfg)));
  CHECK(format_config(back) == format_config(cfg));
  CHECK(back.model.optimizer.lr == cfg.model.optimizer.lr);
  CHECK(parse_key_values(format_config(cfg)).size() == known_config_keys().size());
}

TEST_CASE("config files and validation") {
  const fs::path dir = fs::temp_directory_path() / "lpv_test_run_config";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "a.cfg") << "stages = 1\n";
  RunConfig cfg;
  apply_config(cfg, read_config_file(dir / "a.cfg"));
  CHECK(cfg.model.n_stages == 1);
  CHECK_THROWS_AS(read_config_file(dir / "missing.cfg"), IoError);

  RunConfig bad;
  bad.vocab.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.model.schedule.mask_on_epoch = 20;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.model.backbone.img_w = 40;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  RunConfig{}.validate();
  fs::remove_all(dir);
}
