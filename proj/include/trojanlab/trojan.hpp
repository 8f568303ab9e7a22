#pragma once

#include <string>
#include <vector>

#include "trojanlab/model.hpp"
#include "trojanlab/neuron_select.hpp"

namespace trojanlab {

struct AttackConfig {
  double alpha_i = 0.1;        // vision step length
  std::size_t e_i = 50;        // vision iterations
  double alpha_q = 0.1;        // text step length
  std::size_t e_q = 50;        // text iterations
  double target_activation = 10.0;
  double vision_clip_low = 0.0, vision_clip_high = 1.0;
  double text_clip_low = kEmbedClipLow, text_clip_high = kEmbedClipHigh;
  bool raw_l2_decode = false;  // skip the 2-D projection, match in full dimension
  bool abs_strength = false;   // |w| connection-strength variant

  void validate() const;
};

struct TrojanSample {
  Tensor clean_image;
  std::vector<std::size_t> question;
  std::size_t label;
  Task task;
  Tensor adv_image;
  std::vector<std::size_t> adv_question;  // question with the roi token replaced
  Tensor trojan_embedding;                // optimized roi embedding, [1 x d_emb]
  double act_vision = 0.0;        // u_vision activation of the adversarial image
  double act_text_embedding = 0.0;  // u_text activation with the optimized embedding
  double act_text_decoded = 0.0;    // u_text activation after decode and re-embed
};

struct VisionTrojanResult {
  Tensor adv_image;
  double final_activation;
};

// Eq.-style iterative sign-gradient attack: E_i steps of
// x <- Clip(x - alpha * sign(d(target - act_u)^2 / dx)), question fixed.
VisionTrojanResult gen_vision_trojan(const VqaModel& model, const PerturbationNeurons& neurons,
                                     const Tensor& image,
                                     const std::vector<std::size_t>& question,
                                     const AttackConfig& cfg);

struct TextTrojanResult {
  std::vector<std::size_t> adv_question;
  Tensor trojan_embedding;
  double activation_embedding;  // before token decode
  double activation_decoded;    // after decode and re-embed
};

// Optimizes only the roi token's embedding (last non-pad token); the other
// tokens stay fixed. Decodes the result back to the nearest vocabulary token.
TextTrojanResult gen_text_trojan(const VqaModel& model, const PerturbationNeurons& neurons,
                                 const Tensor& image, const std::vector<std::size_t>& question,
                                 const AttackConfig& cfg);

// Nearest vocabulary token to the trojan embedding after projecting
// vocabulary + trojan to 2-D with PCA; ties break toward the lowest id.
std::size_t decode_token(const Tensor& trojan_embedding, const EmbeddingTable& table,
                         bool raw_l2 = false);

std::size_t roi_index(const std::vector<std::size_t>& question);

std::vector<TrojanSample> gen_trojan_batch(const VqaModel& model,
                                           const PerturbationNeurons& neurons,
                                           const std::vector<ShapeWorldSample>& samples,
                                           const AttackConfig& cfg);

// Versioned binary container (magic "TLTJ"), same header/checksum scheme as
// model checkpoints; tensors stored at full 64-bit precision.
void save_trojans(const std::vector<TrojanSample>& trojans, const std::string& path);
std::vector<TrojanSample> load_trojans(const std::string& path);

std::string trojans_to_json(const std::vector<TrojanSample>& trojans,
                            const EmbeddingTable& table);

}  // namespace trojanlab
