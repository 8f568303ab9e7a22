#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trojanlab/datagen.hpp"
#include "trojanlab/finetune.hpp"
#include "trojanlab/model.hpp"
#include "trojanlab/trojan.hpp"

namespace trojanlab {

struct PretrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double lr = 1e-3;
};

struct SweepConfig {
  std::vector<double> alphas = {0.01, 0.1, 0.5};
  std::vector<std::size_t> iterations = {5, 50};
  std::vector<std::size_t> depths = {1, 2, 3};
  std::vector<std::size_t> counts = {0, 1, 8, 32};
  std::size_t sweep_samples = 50;  // samples per alpha/E cell
};

// Full experiment description; parsed from JSON, unknown keys rejected.
struct ExperimentConfig {
  DataGenConfig data;
  std::uint64_t data_seed = 7;
  std::uint64_t model_seed = 42;
  ModelTopology model;
  PretrainConfig pretrain;
  AttackConfig attack;
  std::size_t num_train_trojans = 64;  // generated from the pretraining split
  std::size_t num_test_trojans = 200;  // generated from the test split
  FineTuneConfig finetune;
  std::vector<double> dp_sigmas = {0.0, 0.001, 0.01, 0.1};
  SweepConfig sweep;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "runs";

  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  std::string to_json() const;
};

}  // namespace trojanlab
