#include "trojanlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "trojanlab/serialize.hpp"

namespace trojanlab {

namespace {

constexpr std::array<char, 4> kModelMagic = {'T', 'L', 'M', 'C'};
constexpr std::uint32_t kModelVersion = 1;

DenseLayer make_layer(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer l;
  l.weights = Tensor({in, out});
  const double std = std::sqrt(2.0 / static_cast<double>(in));
  for (auto& w : l.weights.data()) w = rng.gaussian(0.0, std);
  l.bias = Tensor({1, out});
  return l;
}

std::vector<DenseLayer> make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                                 std::size_t out, Rng& rng) {
  std::vector<DenseLayer> layers;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    layers.push_back(make_layer(prev, h, rng));
    prev = h;
  }
  layers.push_back(make_layer(prev, out, rng));
  return layers;
}

// Hidden layers relu, final layer linear.
Tensor run_mlp_plain(const std::vector<DenseLayer>& layers, Tensor x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = matmul(x, layers[i].weights);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) x.at(r, c) += layers[i].bias[c];
    if (i + 1 < layers.size())
      for (auto& v : x.data()) v = v > 0.0 ? v : 0.0;
  }
  return x;
}

GradTape::Var run_mlp_tape(GradTape& t, const std::vector<DenseLayer>& layers, GradTape::Var x,
                           std::vector<std::pair<GradTape::Var, GradTape::Var>>* param_vars) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const GradTape::Var w = t.leaf(layers[i].weights);
    const GradTape::Var b = t.leaf(layers[i].bias);
    if (param_vars && !layers[i].frozen) param_vars->push_back({w, b});
    x = t.add_row(t.matmul(x, w), b);
    if (i + 1 < layers.size()) x = t.relu(x);
  }
  return x;
}

}  // namespace

void ModelTopology::validate() const {
  if (repr_dim < 2) throw std::runtime_error("repr_dim must be at least 2");
  if (num_answers < 2) throw std::runtime_error("num_answers must be at least 2");
  if (image_h == 0 || image_w == 0 || image_c == 0)
    throw std::runtime_error("image dimensions must be positive");
  if (embed_dim == 0) throw std::runtime_error("embed_dim must be positive");
}

std::string ModelTopology::to_json() const {
  nlohmann::json j;
  j["image_dims"] = {image_h, image_w, image_c};
  j["vision_hidden"] = vision_hidden;
  j["embed_dim"] = embed_dim;
  j["text_hidden"] = text_hidden;
  j["repr_dim"] = repr_dim;
  j["fusion_out"] = fusion_out;
  j["head_width"] = head_width;
  j["num_answers"] = num_answers;
  return j.dump(2);
}

ModelTopology ModelTopology::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelTopology t;
  t.image_h = j.at("image_dims").at(0);
  t.image_w = j.at("image_dims").at(1);
  t.image_c = j.at("image_dims").at(2);
  t.vision_hidden = j.at("vision_hidden").get<std::vector<std::size_t>>();
  t.embed_dim = j.at("embed_dim");
  t.text_hidden = j.at("text_hidden").get<std::vector<std::size_t>>();
  t.repr_dim = j.at("repr_dim");
  t.fusion_out = j.at("fusion_out");
  t.head_width = j.at("head_width");
  t.num_answers = j.at("num_answers");
  t.validate();
  return t;
}

std::vector<DenseLayer*> VqaModel::all_layers() {
  std::vector<DenseLayer*> out;
  for (auto& l : text_encoder) out.push_back(&l);
  for (auto& l : vision_encoder) out.push_back(&l);
  for (auto& l : head) out.push_back(&l);
  return out;
}

std::vector<const DenseLayer*> VqaModel::all_layers() const {
  std::vector<const DenseLayer*> out;
  for (auto& l : text_encoder) out.push_back(&l);
  for (auto& l : vision_encoder) out.push_back(&l);
  for (auto& l : head) out.push_back(&l);
  return out;
}

VqaModel init_model(const ModelTopology& topo, EmbeddingTable embeddings, Rng& rng) {
  topo.validate();
  if (embeddings.dim() != topo.embed_dim)
    throw std::runtime_error("embedding table dimension " + std::to_string(embeddings.dim()) +
                             " does not match topology embed_dim " +
                             std::to_string(topo.embed_dim));
  VqaModel m;
  m.topo = topo;
  m.embeddings = std::move(embeddings);
  m.text_encoder = make_mlp(topo.embed_dim, topo.text_hidden, topo.repr_dim, rng);
  m.vision_encoder = make_mlp(topo.image_size(), topo.vision_hidden, topo.repr_dim, rng);
  std::vector<std::size_t> fusion_hidden;
  if (topo.fusion_out > 0) fusion_hidden.push_back(topo.fusion_out);
  m.head = make_mlp(topo.perturbation_width(), fusion_hidden, topo.num_answers, rng);
  return m;
}

Tensor pool_question(const VqaModel& model, const std::vector<std::size_t>& question) {
  if (question.empty()) throw std::runtime_error("question is empty");
  Tensor pooled({1, model.topo.embed_dim});
  for (std::size_t id : question) {
    const Tensor e = model.embeddings.embedding(id);
    for (std::size_t c = 0; c < pooled.size(); ++c) pooled[c] += e[c];
  }
  const double inv = 1.0 / static_cast<double>(question.size());
  for (auto& v : pooled.data()) v *= inv;
  return pooled;
}

BatchForwardResult forward_batch(const VqaModel& model, const Tensor& image_flat,
                                 const Tensor& pooled_text) {
  if (image_flat.cols() != model.topo.image_size())
    throw DimensionError("image batch shape " + image_flat.shape_str() +
                         " does not match topology input width " +
                         std::to_string(model.topo.image_size()));
  const Tensor vq = run_mlp_plain(model.text_encoder, pooled_text);
  const Tensor vi = run_mlp_plain(model.vision_encoder, image_flat);
  const std::size_t b = vq.rows(), d = model.topo.repr_dim;
  Tensor pert({b, 2 * d});
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t c = 0; c < d; ++c) pert.at(r, c) = vq.at(r, c);
    for (std::size_t c = 0; c < d; ++c) pert.at(r, d + c) = vi.at(r, c);
  }
  BatchForwardResult res;
  res.perturbation = pert;
  res.logits = run_mlp_plain(model.head, pert);
  return res;
}

ForwardResult forward(const VqaModel& model, const Tensor& image,
                      const std::vector<std::size_t>& question) {
  if (image.size() != model.topo.image_size())
    throw DimensionError("image shape " + image.shape_str() + " does not match topology (" +
                         std::to_string(model.topo.image_size()) + " values expected)");
  const Tensor flat = image.reshaped({1, image.size()});
  const Tensor pooled = pool_question(model, question);
  const BatchForwardResult b = forward_batch(model, flat, pooled);
  ForwardResult r;
  r.logits = b.logits.reshaped({b.logits.size()});
  r.perturbation = b.perturbation.reshaped({b.perturbation.size()});
  return r;
}

Tensor flatten_images(const std::vector<ShapeWorldSample>& samples) {
  if (samples.empty()) throw std::runtime_error("empty sample set");
  const std::size_t n = samples.size(), w = samples[0].image.size();
  Tensor out({n, w});
  for (std::size_t r = 0; r < n; ++r) {
    if (samples[r].image.size() != w)
      throw DimensionError("inconsistent image sizes in sample set");
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = samples[r].image[c];
  }
  return out;
}

Tensor pool_questions(const VqaModel& model, const std::vector<ShapeWorldSample>& samples) {
  if (samples.empty()) throw std::runtime_error("empty sample set");
  Tensor out({samples.size(), model.topo.embed_dim});
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const Tensor p = pool_question(model, samples[r].question);
    for (std::size_t c = 0; c < p.size(); ++c) out.at(r, c) = p[c];
  }
  return out;
}

TapeForwardVars forward_on_tape(GradTape& tape, const VqaModel& model, GradTape::Var image_flat,
                                GradTape::Var pooled_text,
                                std::vector<std::pair<GradTape::Var, GradTape::Var>>* param_vars) {
  const GradTape::Var vq = run_mlp_tape(tape, model.text_encoder, pooled_text, param_vars);
  const GradTape::Var vi = run_mlp_tape(tape, model.vision_encoder, image_flat, param_vars);
  TapeForwardVars out;
  out.perturbation = tape.concat_cols(vq, vi);
  out.logits = run_mlp_tape(tape, model.head, out.perturbation, param_vars);
  return out;
}

GradTape::Var head_on_tape(GradTape& tape, const VqaModel& model, GradTape::Var perturbation,
                           std::vector<std::pair<GradTape::Var, GradTape::Var>>* param_vars) {
  return run_mlp_tape(tape, model.head, perturbation, param_vars);
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size())
    throw std::runtime_error("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
      const double mh = m_[i][k] / bc1;
      const double vh = v_[i][k] / bc2;
      p[k] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

namespace {

std::size_t argmax_row(const Tensor& m, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < m.cols(); ++c)
    if (m.at(r, c) > m.at(r, best)) best = c;
  return best;
}

}  // namespace

TrainingLog pretrain(VqaModel& model, const Dataset& data, std::size_t epochs,
                     std::size_t batch_size, double lr, Rng& rng) {
  if (data.samples.empty()) throw std::runtime_error("pretrain: dataset is empty");
  bool any_trainable = false;
  for (const auto* l : model.all_layers())
    if (!l->frozen) any_trainable = true;
  if (!any_trainable) throw std::runtime_error("pretrain requires at least one trainable layer");
  if (batch_size == 0) throw std::runtime_error("batch_size must be positive");

  const Tensor images = flatten_images(data.samples);
  const Tensor pooled = pool_questions(model, data.samples);
  const std::size_t n = data.samples.size();

  Adam opt(lr);
  TrainingLog log;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t b = std::min(batch_size, n - start);
      Tensor bi({b, images.cols()}), bp({b, pooled.cols()});
      std::vector<std::size_t> targets(b);
      for (std::size_t r = 0; r < b; ++r) {
        const std::size_t src = order[start + r];
        for (std::size_t c = 0; c < images.cols(); ++c) bi.at(r, c) = images.at(src, c);
        for (std::size_t c = 0; c < pooled.cols(); ++c) bp.at(r, c) = pooled.at(src, c);
        targets[r] = data.samples[src].answer;
      }
      GradTape tape;
      std::vector<std::pair<GradTape::Var, GradTape::Var>> params;
      const auto fwd = forward_on_tape(tape, model, tape.leaf(std::move(bi)),
                                       tape.leaf(std::move(bp)), &params);
      const auto loss = tape.cross_entropy_mean(fwd.logits, targets);
      tape.backward(loss);
      loss_sum += tape.value(loss)[0] * static_cast<double>(b);

      std::vector<Tensor*> ptrs;
      std::vector<Tensor> grads;
      std::size_t pi = 0;
      for (auto* layer : model.all_layers()) {
        if (layer->frozen) continue;
        ptrs.push_back(&layer->weights);
        grads.push_back(tape.grad_of(params[pi].first));
        ptrs.push_back(&layer->bias);
        grads.push_back(tape.grad_of(params[pi].second));
        ++pi;
      }
      opt.step(ptrs, grads);
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(n));

    const BatchForwardResult eval = forward_batch(model, images, pooled);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < n; ++r)
      if (argmax_row(eval.logits, r) == data.samples[r].answer) ++correct;
    log.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
  }
  return log;
}

void standardize_perturbation(VqaModel& model, const std::vector<ShapeWorldSample>& samples,
                              double target_std) {
  if (target_std <= 0.0) throw std::runtime_error("standardize_perturbation: target_std must be positive");
  if (samples.empty()) throw std::runtime_error("standardize_perturbation: no samples");
  if (model.head.empty() || model.text_encoder.empty() || model.vision_encoder.empty())
    throw std::runtime_error("standardize_perturbation: model is missing layers");

  const Tensor flat = flatten_images(samples);
  const Tensor pooled = pool_questions(model, samples);
  const Tensor pert = forward_batch(model, flat, pooled).perturbation;
  const std::size_t n = pert.rows(), w = pert.cols(), d = model.topo.repr_dim;

  std::vector<double> mu(w, 0.0), sd(w, 0.0);
  for (std::size_t i = 0; i < w; ++i) {
    for (std::size_t r = 0; r < n; ++r) mu[i] += pert.at(r, i);
    mu[i] /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double c = pert.at(r, i) - mu[i];
      sd[i] += c * c;
    }
    sd[i] = std::max(std::sqrt(sd[i] / static_cast<double>(n)), 1e-8) / target_std;
  }

  // Compensate in the head first so the original weights feed the bias shift.
  DenseLayer& h = model.head.front();
  for (std::size_t j = 0; j < h.weights.cols(); ++j) {
    double shift = 0.0;
    for (std::size_t i = 0; i < w; ++i) shift += mu[i] * h.weights.at(i, j);
    h.bias.at(0, j) += shift;
  }
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < h.weights.cols(); ++j) h.weights.at(i, j) *= sd[i];

  auto fold = [&](DenseLayer& out_layer, std::size_t offset) {
    for (std::size_t c = 0; c < d; ++c) {
      const double inv = 1.0 / sd[offset + c];
      for (std::size_t r = 0; r < out_layer.weights.rows(); ++r)
        out_layer.weights.at(r, c) *= inv;
      out_layer.bias.at(0, c) = (out_layer.bias.at(0, c) - mu[offset + c]) * inv;
    }
  };
  fold(model.text_encoder.back(), 0);
  fold(model.vision_encoder.back(), d);
}

void replace_head(VqaModel& model, std::size_t depth, std::size_t width, Rng& rng) {
  if (depth < 1) throw std::runtime_error("head depth must be at least 1");
  for (auto& l : model.text_encoder) l.frozen = true;
  for (auto& l : model.vision_encoder) l.frozen = true;
  std::vector<std::size_t> hidden(depth - 1, width);
  model.head = make_mlp(model.topo.perturbation_width(), hidden, model.topo.num_answers, rng);
  // hidden layers start near-identity with a positive bias, so the fresh head
  // begins as an affine readout and the ReLU stays in its linear range
  for (std::size_t h = 0; h + 1 < model.head.size(); ++h) {
    DenseLayer& l = model.head[h];
    for (std::size_t i = 0; i < l.weights.rows(); ++i)
      for (std::size_t j = 0; j < l.weights.cols(); ++j)
        l.weights.at(i, j) = 1e-2 * l.weights.at(i, j) + (i == j ? 1.0 : 0.0);
    for (auto& b : l.bias.data()) b = 1.0;
  }
  // fresh classifier heads start near-zero so initial logits are flat
  for (auto& v : model.head.back().weights.data()) v *= 1e-2;
}

namespace {

void write_layers(ByteWriter& w, const std::vector<DenseLayer>& layers) {
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& l : layers) {
    w.u8(l.frozen ? 1 : 0);
    w.tensor_f32(l.weights);
    w.tensor_f32(l.bias);
  }
}

std::vector<DenseLayer> read_layers(ByteReader& r) {
  std::vector<DenseLayer> layers(r.u32());
  for (auto& l : layers) {
    l.frozen = r.u8() != 0;
    l.weights = r.tensor_f32();
    l.bias = r.tensor_f32();
  }
  return layers;
}

}  // namespace

void save_model(const VqaModel& model, const std::string& path) {
  ByteWriter w;
  w.str(model.topo.to_json());
  w.u32(static_cast<std::uint32_t>(model.embeddings.vocab_size()));
  for (const auto& t : model.embeddings.tokens) w.str(t);
  w.tensor_f32(model.embeddings.vectors);
  write_layers(w, model.text_encoder);
  write_layers(w, model.vision_encoder);
  write_layers(w, model.head);
  write_container(path, kModelMagic, kModelVersion, w.bytes());
}

VqaModel load_model(const std::string& path) {
  const auto payload = read_container(path, kModelMagic, kModelVersion);
  ByteReader r(payload);
  VqaModel m;
  m.topo = ModelTopology::from_json(r.str());
  const std::uint32_t vocab = r.u32();
  m.embeddings.tokens.resize(vocab);
  for (auto& t : m.embeddings.tokens) t = r.str();
  for (std::size_t i = 0; i < vocab; ++i) m.embeddings.ids[m.embeddings.tokens[i]] = i;
  m.embeddings.vectors = r.tensor_f32();
  m.text_encoder = read_layers(r);
  m.vision_encoder = read_layers(r);
  m.head = read_layers(r);
  return m;
}

}  // namespace trojanlab
