#pragma once

#include <string>
#include <vector>

#include "trojanlab/autodiff.hpp"
#include "trojanlab/datagen.hpp"
#include "trojanlab/rng.hpp"
#include "trojanlab/tensor.hpp"

namespace trojanlab {

struct ModelTopology {
  std::size_t image_h = 16, image_w = 16, image_c = 3;
  std::vector<std::size_t> vision_hidden = {64};
  std::size_t embed_dim = 32;
  std::vector<std::size_t> text_hidden = {64};
  std::size_t repr_dim = 32;    // D; each encoder outputs R^D
  std::size_t fusion_out = 64;  // width of the layer following the perturbation layer
  std::size_t head_width = 64;  // hidden width for replaced fine-tuning heads
  std::size_t num_answers = 8;  // C

  std::size_t image_size() const { return image_h * image_w * image_c; }
  std::size_t perturbation_width() const { return 2 * repr_dim; }
  void validate() const;
  std::string to_json() const;
  static ModelTopology from_json(const std::string& text);
};

struct DenseLayer {
  Tensor weights;  // [in x out]
  Tensor bias;     // [1 x out]
  bool frozen = false;
};

// Multimodal classifier: vision MLP on the flattened image and text MLP on
// mean-pooled token embeddings, each ending in a linear layer of width D.
// The perturbation layer is the concatenation [v_q || v_i] (text first),
// followed by the head (fusion network / fine-tuning network).
struct VqaModel {
  ModelTopology topo;
  std::vector<DenseLayer> text_encoder;
  std::vector<DenseLayer> vision_encoder;
  std::vector<DenseLayer> head;
  EmbeddingTable embeddings;

  std::vector<DenseLayer*> all_layers();
  std::vector<const DenseLayer*> all_layers() const;
};

VqaModel init_model(const ModelTopology& topo, EmbeddingTable embeddings, Rng& rng);

struct ForwardResult {
  Tensor logits;        // [C]
  Tensor perturbation;  // [2D]
};

// Mean of the question's token embeddings (fixed length, pads included).
Tensor pool_question(const VqaModel& model, const std::vector<std::size_t>& question);

ForwardResult forward(const VqaModel& model, const Tensor& image,
                      const std::vector<std::size_t>& question);

// Batched inference without gradient recording.
struct BatchForwardResult {
  Tensor logits;        // [B x C]
  Tensor perturbation;  // [B x 2D]
};
BatchForwardResult forward_batch(const VqaModel& model, const Tensor& image_flat,
                                 const Tensor& pooled_text);

// Flattened images [N x I] and pooled question embeddings [N x d_emb].
Tensor flatten_images(const std::vector<ShapeWorldSample>& samples);
Tensor pool_questions(const VqaModel& model, const std::vector<ShapeWorldSample>& samples);

// Tape-based forward. Weight leaves are appended to `param_vars` (one W/b
// pair per trainable layer, in model order) when it is non-null; frozen
// layers enter the tape as constants.
struct TapeForwardVars {
  GradTape::Var perturbation;
  GradTape::Var logits;
};
TapeForwardVars forward_on_tape(GradTape& tape, const VqaModel& model, GradTape::Var image_flat,
                                GradTape::Var pooled_text,
                                std::vector<std::pair<GradTape::Var, GradTape::Var>>* param_vars);

// Head-only tape forward from cached perturbation activations.
GradTape::Var head_on_tape(GradTape& tape, const VqaModel& model, GradTape::Var perturbation,
                           std::vector<std::pair<GradTape::Var, GradTape::Var>>* param_vars);

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainingLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

// Minimizes mean cross-entropy with Adam mini-batches; deterministic given rng.
TrainingLog pretrain(VqaModel& model, const Dataset& data, std::size_t epochs,
                     std::size_t batch_size, double lr, Rng& rng);

// Calibrates the perturbation layer against a reference sample set: each
// neuron's activations are shifted/scaled to mean 0 and standard deviation
// target_std by folding the affine correction into the encoder output layers,
// with the inverse folded into the head's first layer so logits are unchanged.
void standardize_perturbation(VqaModel& model, const std::vector<ShapeWorldSample>& samples,
                              double target_std = 1.0);

// Freezes both encoders and installs a fresh head of `depth` layers ending in
// C outputs; depth 1 is a single output layer.
void replace_head(VqaModel& model, std::size_t depth, std::size_t width, Rng& rng);

// Checkpoint persistence: magic "TLMC", version 1, float32 payload, FNV-1a64
// trailing checksum. load(save(m)) reproduces forwards within 1e-6.
void save_model(const VqaModel& model, const std::string& path);
VqaModel load_model(const std::string& path);

}  // namespace trojanlab
