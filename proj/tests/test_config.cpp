#include <string>

#include "doctest.h"
#include "trojanlab/config.hpp"

using namespace trojanlab;

TEST_CASE("defaults are the baseline experiment") {
  const ExperimentConfig cfg = ExperimentConfig::from_json("{}");
  CHECK(cfg.data.train_size == 2000);
  CHECK(cfg.data.val_size == 2500);
  CHECK(cfg.data.height == 16);
  CHECK(cfg.model.repr_dim == 32);
  CHECK(cfg.model.num_answers == 8);
  CHECK(cfg.pretrain.epochs == 50);
  CHECK(cfg.attack.alpha_i == 0.1);
  CHECK(cfg.attack.e_i == 50);
  CHECK(cfg.attack.target_activation == 10.0);
  CHECK(cfg.attack.vision_clip_low == 0.0);
  CHECK(cfg.attack.vision_clip_high == 1.0);
  CHECK(cfg.attack.text_clip_low == kEmbedClipLow);
  CHECK(cfg.attack.text_clip_high == kEmbedClipHigh);
  CHECK(!cfg.attack.raw_l2_decode);
  CHECK(!cfg.attack.abs_strength);
  CHECK(cfg.finetune.beta == 1.0);
  CHECK(cfg.finetune.inject_count == 32);
  CHECK(!cfg.finetune.gamma.has_value());
  CHECK(cfg.dp_sigmas == std::vector<double>{0.0, 0.001, 0.01, 0.1});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK(cfg.out_dir == "runs");
}

TEST_CASE("values are picked up from every section") {
  const std::string text = R"({
    "data": {"train_size": 100, "val_size": 50, "image": [8, 8, 3], "seed": 3},
    "model": {"repr_dim": 16, "embed_dim": 12, "seed": 5},
    "pretrain": {"epochs": 10, "lr": 0.01},
    "attack": {"alpha_i": 0.2, "e_q": 20, "num_test_trojans": 40},
    "finetune": {"depth": 2, "beta": 0.5, "gamma": 0.01, "mode": "label_flip"},
    "defense": {"sigmas": [0.0, 0.5]},
    "sweep": {"alphas": [0.3], "counts": [0, 4]},
    "seeds": [9],
    "out_dir": "elsewhere"
  })";
  const ExperimentConfig cfg = ExperimentConfig::from_json(text);
  CHECK(cfg.data.train_size == 100);
  CHECK(cfg.data_seed == 3);
  CHECK(cfg.model.image_h == 8);
  CHECK(cfg.model.repr_dim == 16);
  CHECK(cfg.model_seed == 5);
  CHECK(cfg.pretrain.epochs == 10);
  CHECK(cfg.pretrain.lr == 0.01);
  CHECK(cfg.attack.alpha_i == 0.2);
  CHECK(cfg.attack.e_q == 20);
  CHECK(cfg.num_test_trojans == 40);
  CHECK(cfg.finetune.depth == 2);
  CHECK(cfg.finetune.beta == 0.5);
  REQUIRE(cfg.finetune.gamma.has_value());
  CHECK(*cfg.finetune.gamma == 0.01);
  CHECK(cfg.finetune.mode == FineTuneMode::label_flip);
  CHECK(cfg.dp_sigmas == std::vector<double>{0.0, 0.5});
  CHECK(cfg.sweep.alphas == std::vector<double>{0.3});
  CHECK(cfg.sweep.counts == std::vector<std::size_t>{0, 4});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{9});
  CHECK(cfg.out_dir == "elsewhere");
}

TEST_CASE("unknown keys are rejected with section names") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(R"({"bogus": 1})"),
                       doctest::Contains("bogus"), std::runtime_error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(R"({"data": {"trainsize": 5}})"),
                       doctest::Contains("'data'"), std::runtime_error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(R"({"attack": {"alpha": 0.1}})"),
                       doctest::Contains("'attack'"), std::runtime_error);
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(R"({"defense": {"sigma": 0.1}})"),
                       doctest::Contains("'defense'"), std::runtime_error);
}

TEST_CASE("invalid values fail validation") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"model": {"repr_dim": 0}})"),
                  std::runtime_error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"attack": {"alpha_i": -1}})"),
                  std::runtime_error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"finetune": {"gamma": 1.5}})"),
                  std::runtime_error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"seeds": []})"), std::runtime_error);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"data": {"image": [8, 8]}})"),
                  std::runtime_error);
  CHECK_THROWS_AS(ExperimentConfig::from_json("not json"), std::exception);
}

TEST_CASE("json round-trip preserves every field") {
  ExperimentConfig cfg;
  cfg.data.train_size = 123;
  cfg.model.repr_dim = 24;
  cfg.attack.alpha_q = 0.25;
  cfg.finetune.gamma = 0.002;
  cfg.finetune.mode = FineTuneMode::clean;
  cfg.seeds = {4, 5};
  cfg.out_dir = "rt";
  const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.data.train_size == 123);
  CHECK(back.model.repr_dim == 24);
  CHECK(back.attack.alpha_q == 0.25);
  REQUIRE(back.finetune.gamma.has_value());
  CHECK(*back.finetune.gamma == 0.002);
  CHECK(back.finetune.mode == FineTuneMode::clean);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.out_dir == "rt");
}
