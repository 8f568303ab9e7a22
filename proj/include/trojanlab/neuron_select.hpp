#pragma once

#include <string>
#include <vector>

#include "trojanlab/model.hpp"

namespace trojanlab {

struct PerturbationNeurons {
  std::size_t u_text;    // in [0, D)
  std::size_t u_vision;  // in [D, 2D)
  Tensor sigma_all;      // [2D] connection strengths
};

struct ActivationProfile {
  Tensor mean_activation;  // [2D]
  std::size_t grid_side;   // side length hint for square heatmap reshape
};

// sigma(i) = sum_j w_ij over the first post-perturbation weight matrix.
// With use_abs, sums |w_ij| instead (ablation variant, off by default).
Tensor connection_strength(const VqaModel& model, bool use_abs = false);

// Argmax of sigma over the text half [0, D) and vision half [D, 2D);
// ties break toward the lowest index.
PerturbationNeurons select_perturbation_neurons(const VqaModel& model, bool use_abs = false);

ActivationProfile profile_activations(const VqaModel& model,
                                      const std::vector<ShapeWorldSample>& samples);

// CSV: neuron_index, mean_activation.
std::string profile_to_csv(const ActivationProfile& profile);

}  // namespace trojanlab
