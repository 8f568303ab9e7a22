#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trojanlab/model.hpp"
#include "trojanlab/trojan.hpp"

namespace trojanlab {

enum class FineTuneMode { adversarial_loss, label_flip, clean };

const char* mode_name(FineTuneMode m);
FineTuneMode mode_from_name(const std::string& name);

struct FineTuneConfig {
  std::size_t depth = 1;
  std::size_t head_width = 64;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta = 1.0;                  // adversarial loss coefficient
  std::size_t inject_count = 32;      // overridden by gamma when set
  std::optional<double> gamma;        // injection rate; count = floor(gamma * N_ft)
  FineTuneMode mode = FineTuneMode::adversarial_loss;
  double dp_sigma = 0.0;              // Gaussian weight noise per batch step; 0 disables

  void validate() const;
};

struct PoisonedDataset {
  std::vector<ShapeWorldSample> samples;
  std::vector<bool> is_trojan;  // parallel to samples

  std::size_t trojan_count() const;
};

// Appends `count` trojan samples (adversarial image + decoded question, with
// the original label) to the fine-tuning data. Trojans must come from the
// pretraining split, never from the fine-tuning data itself.
PoisonedDataset build_poisoned_set(const Dataset& finetune_data,
                                   const std::vector<TrojanSample>& trojans,
                                   std::size_t count);
std::size_t injection_count(const FineTuneConfig& cfg, std::size_t n_finetune);

struct UpdateTrace {
  std::vector<double> epoch_delta_norms;  // L2 of (current - initial) head weights per epoch
  std::vector<double> total_delta;        // concatenated final-minus-initial head weights
};

// Trains only the (unfrozen) head. adversarial_loss: per batch, mean clean
// cross-entropy minus beta times mean trojan cross-entropy. label_flip:
// plain cross-entropy with trojan rows relabeled to a seeded wrong class.
// clean: trojan rows ignored.
UpdateTrace finetune(VqaModel& model, const PoisonedDataset& data, const FineTuneConfig& cfg,
                     Rng& rng);

struct AttackMetrics {
  double mta = 0.0;  // accuracy on clean test samples, in [0,1]
  double ata = 0.0;  // accuracy on trojan test samples, in [0,1]
  // Per-task breakdown indexed by Task; entries are {accuracy, count}.
  std::array<double, 3> mta_task{};
  std::array<double, 3> ata_task{};
};

AttackMetrics evaluate(const VqaModel& model, const std::vector<ShapeWorldSample>& clean_test,
                       const std::vector<TrojanSample>& trojan_test);

std::size_t predict(const VqaModel& model, const Tensor& image,
                    const std::vector<std::size_t>& question);

struct SweepRow {
  std::size_t depth;
  FineTuneMode mode;
  std::size_t inject_count;
  std::uint64_t seed;
  AttackMetrics metrics;
};

// One fine-tune + evaluate per (depth, mode, seed) cell. "Without AL" cells
// run a trojan-free clean fine-tune, evaluated on the same trojan test set.
std::vector<SweepRow> depth_sweep(const VqaModel& pretrained, const Dataset& finetune_data,
                                  const std::vector<TrojanSample>& inject,
                                  const std::vector<ShapeWorldSample>& clean_test,
                                  const std::vector<TrojanSample>& trojan_test,
                                  const std::vector<std::size_t>& depths,
                                  const FineTuneConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds);

// Adversarial fine-tunes across injection counts at a fixed depth.
std::vector<SweepRow> sample_efficiency(const VqaModel& pretrained, const Dataset& finetune_data,
                                        const std::vector<TrojanSample>& inject,
                                        const std::vector<ShapeWorldSample>& clean_test,
                                        const std::vector<TrojanSample>& trojan_test,
                                        std::size_t depth, const std::vector<std::size_t>& counts,
                                        const FineTuneConfig& cfg,
                                        const std::vector<std::uint64_t>& seeds);

// Smallest count in `counts` whose mean ATA over seeds is <= threshold.
std::optional<std::size_t> minimal_compromising_count(const std::vector<SweepRow>& rows,
                                                      double ata_threshold);

std::vector<ShapeWorldSample> trojans_as_samples(const std::vector<TrojanSample>& trojans);

}  // namespace trojanlab
