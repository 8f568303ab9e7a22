#include "trojanlab/defenses.hpp"

#include <stdexcept>

namespace trojanlab {

void DpConfig::validate() const {
  if (sigma < 0.0) throw std::runtime_error("dp sigma must be non-negative");
}

DpRunResult finetune_with_dp(VqaModel& model, const PoisonedDataset& data,
                             const FineTuneConfig& cfg, const DpConfig& dp, Rng& rng,
                             const std::vector<ShapeWorldSample>& clean_test,
                             const std::vector<TrojanSample>& trojan_test) {
  dp.validate();
  FineTuneConfig noisy = cfg;
  noisy.dp_sigma = dp.sigma;
  DpRunResult res;
  res.trace = finetune(model, data, noisy, rng);
  res.metrics = evaluate(model, clean_test, trojan_test);
  return res;
}

NormReport norm_difference(const std::vector<UpdateTrace>& benign,
                           const std::vector<UpdateTrace>& malicious) {
  if (benign.empty() || malicious.empty())
    throw std::runtime_error("norm_difference: trace lists must be non-empty");
  NormReport report;
  double benign_sum = 0.0, malicious_sum = 0.0;
  for (const auto& t : benign) {
    report.benign_norms.push_back(l2_norm(t.total_delta));
    benign_sum += report.benign_norms.back();
  }
  for (const auto& t : malicious) {
    report.malicious_norms.push_back(l2_norm(t.total_delta));
    malicious_sum += report.malicious_norms.back();
  }
  const double benign_mean = benign_sum / static_cast<double>(benign.size());
  const double malicious_mean = malicious_sum / static_cast<double>(malicious.size());
  report.ratio = benign_mean == 0.0 ? 0.0 : malicious_mean / benign_mean;
  return report;
}

}  // namespace trojanlab
