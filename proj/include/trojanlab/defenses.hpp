#pragma once

#include "trojanlab/finetune.hpp"

namespace trojanlab {

struct DpConfig {
  double sigma = 0.0;  // Gaussian stddev; noise hits head weights each batch step

  void validate() const;
};

struct DpRunResult {
  AttackMetrics metrics;
  UpdateTrace trace;
};

// finetune with fresh seeded Gaussian weight noise before each batch's
// gradient step; sigma = 0 is bit-identical to the undefended run.
DpRunResult finetune_with_dp(VqaModel& model, const PoisonedDataset& data,
                             const FineTuneConfig& cfg, const DpConfig& dp, Rng& rng,
                             const std::vector<ShapeWorldSample>& clean_test,
                             const std::vector<TrojanSample>& trojan_test);

struct NormReport {
  std::vector<double> benign_norms;
  std::vector<double> malicious_norms;
  double ratio = 0.0;  // mean(malicious) / mean(benign)
};

// L2 norm of each run's concatenated head-weight delta (final minus initial).
NormReport norm_difference(const std::vector<UpdateTrace>& benign,
                           const std::vector<UpdateTrace>& malicious);

}  // namespace trojanlab
