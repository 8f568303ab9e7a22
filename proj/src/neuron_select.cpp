#include "trojanlab/neuron_select.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace trojanlab {

Tensor connection_strength(const VqaModel& model, bool use_abs) {
  if (model.head.empty())
    throw std::runtime_error("model has no layer following the perturbation layer");
  const Tensor& w = model.head.front().weights;  // [2D x Q]
  Tensor sigma({w.rows()});
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j)
      acc += use_abs ? std::abs(w.at(i, j)) : w.at(i, j);
    sigma[i] = acc;
  }
  return sigma;
}

PerturbationNeurons select_perturbation_neurons(const VqaModel& model, bool use_abs) {
  PerturbationNeurons out;
  out.sigma_all = connection_strength(model, use_abs);
  const std::size_t d = model.topo.repr_dim;
  if (out.sigma_all.size() != 2 * d)
    throw std::runtime_error("perturbation layer width does not match 2*repr_dim");
  out.u_text = 0;
  for (std::size_t i = 1; i < d; ++i)
    if (out.sigma_all[i] > out.sigma_all[out.u_text]) out.u_text = i;
  out.u_vision = d;
  for (std::size_t i = d + 1; i < 2 * d; ++i)
    if (out.sigma_all[i] > out.sigma_all[out.u_vision]) out.u_vision = i;
  return out;
}

ActivationProfile profile_activations(const VqaModel& model,
                                      const std::vector<ShapeWorldSample>& samples) {
  if (samples.empty()) throw std::runtime_error("profile_activations: empty sample set");
  const Tensor images = flatten_images(samples);
  const Tensor pooled = pool_questions(model, samples);
  const BatchForwardResult fwd = forward_batch(model, images, pooled);
  ActivationProfile profile;
  const std::size_t width = fwd.perturbation.cols();
  profile.mean_activation = Tensor({width});
  for (std::size_t r = 0; r < fwd.perturbation.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c)
      profile.mean_activation[c] += fwd.perturbation.at(r, c);
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (auto& v : profile.mean_activation.data()) v *= inv;
  profile.grid_side =
      static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(width))));
  return profile;
}

std::string profile_to_csv(const ActivationProfile& profile) {
  std::string csv = "neuron_index,mean_activation\n";
  char buf[64];
  for (std::size_t i = 0; i < profile.mean_activation.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", i, profile.mean_activation[i]);
    csv += buf;
  }
  return csv;
}

}  // namespace trojanlab
