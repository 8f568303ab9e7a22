#include "trojanlab/trojan.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "trojanlab/pca.hpp"
#include "trojanlab/serialize.hpp"

namespace trojanlab {

namespace {

constexpr std::array<char, 4> kTrojanMagic = {'T', 'L', 'T', 'J'};
constexpr std::uint32_t kTrojanVersion = 1;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double activation_at(const VqaModel& model, const Tensor& image_flat, const Tensor& pooled,
                     std::size_t neuron) {
  return forward_batch(model, image_flat, pooled).perturbation.at(0, neuron);
}

}  // namespace

void AttackConfig::validate() const {
  if (alpha_i <= 0.0 || alpha_q <= 0.0)
    throw std::runtime_error("attack step lengths must be positive");
  if (vision_clip_low >= vision_clip_high)
    throw std::runtime_error("vision clip range is empty");
  if (text_clip_low >= text_clip_high) throw std::runtime_error("text clip range is empty");
}

std::size_t roi_index(const std::vector<std::size_t>& question) {
  if (question.empty()) throw std::runtime_error("question is empty");
  for (std::size_t i = question.size(); i-- > 0;)
    if (question[i] != pad_token_id()) return i;
  throw std::runtime_error("question contains only pad tokens");
}

VisionTrojanResult gen_vision_trojan(const VqaModel& model, const PerturbationNeurons& neurons,
                                     const Tensor& image,
                                     const std::vector<std::size_t>& question,
                                     const AttackConfig& cfg) {
  cfg.validate();
  const Tensor pooled = pool_question(model, question);
  Tensor x = image.reshaped({1, image.size()});

  for (std::size_t e = 0; e < cfg.e_i; ++e) {
    GradTape tape;
    const GradTape::Var xin = tape.leaf(x);
    const auto fwd = forward_on_tape(tape, model, xin, tape.leaf(pooled), nullptr);
    const auto act = tape.pick(fwd.perturbation, neurons.u_vision);
    const auto loss = tape.squared_error_to(act, cfg.target_activation);
    const Tensor g = tape.grad(loss, xin);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = std::clamp(x[i] - cfg.alpha_i * sign_of(g[i]), cfg.vision_clip_low,
                        cfg.vision_clip_high);
    }
  }

  VisionTrojanResult res;
  res.final_activation = activation_at(model, x, pooled, neurons.u_vision);
  res.adv_image = x.reshaped(image.shape());
  return res;
}

TextTrojanResult gen_text_trojan(const VqaModel& model, const PerturbationNeurons& neurons,
                                 const Tensor& image, const std::vector<std::size_t>& question,
                                 const AttackConfig& cfg) {
  cfg.validate();
  const std::size_t roi = roi_index(question);
  const Tensor image_flat = image.reshaped({1, image.size()});
  const double inv_len = 1.0 / static_cast<double>(question.size());

  // Sum of the non-roi token embeddings; those stay fixed during optimization.
  Tensor rest({1, model.topo.embed_dim});
  for (std::size_t i = 0; i < question.size(); ++i) {
    if (i == roi) continue;
    const Tensor e = model.embeddings.embedding(question[i]);
    for (std::size_t c = 0; c < rest.size(); ++c) rest[c] += e[c];
  }

  Tensor v_roi = model.embeddings.embedding(question[roi]);
  for (std::size_t e = 0; e < cfg.e_q; ++e) {
    GradTape tape;
    const GradTape::Var roi_var = tape.leaf(v_roi);
    const GradTape::Var pooled =
        tape.scale(tape.add(roi_var, tape.leaf(rest)), inv_len);
    const auto fwd = forward_on_tape(tape, model, tape.leaf(image_flat), pooled, nullptr);
    const auto act = tape.pick(fwd.perturbation, neurons.u_text);
    const auto loss = tape.squared_error_to(act, cfg.target_activation);
    const Tensor g = tape.grad(loss, roi_var);
    for (std::size_t i = 0; i < v_roi.size(); ++i) {
      v_roi[i] = std::clamp(v_roi[i] - cfg.alpha_q * sign_of(g[i]), cfg.text_clip_low,
                            cfg.text_clip_high);
    }
  }

  TextTrojanResult res;
  res.trojan_embedding = v_roi;
  {
    Tensor pooled = rest;
    for (std::size_t c = 0; c < pooled.size(); ++c) pooled[c] = (pooled[c] + v_roi[c]) * inv_len;
    res.activation_embedding = activation_at(model, image_flat, pooled, neurons.u_text);
  }

  res.adv_question = question;
  res.adv_question[roi] = decode_token(v_roi, model.embeddings, cfg.raw_l2_decode);
  res.activation_decoded = activation_at(model, image_flat,
                                         pool_question(model, res.adv_question), neurons.u_text);
  return res;
}

std::size_t decode_token(const Tensor& trojan_embedding, const EmbeddingTable& table,
                         bool raw_l2) {
  const std::size_t v = table.vocab_size();
  const std::size_t d = table.dim();
  if (v < 2) throw std::runtime_error("decode_token needs a vocabulary of at least 2 tokens");
  if (trojan_embedding.size() != d)
    throw DimensionError("trojan embedding size " + std::to_string(trojan_embedding.size()) +
                         " does not match table dimension " + std::to_string(d));

  if (raw_l2) {
    std::size_t best = 0;
    double best_d = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = table.vectors.at(i, c) - trojan_embedding[c];
        acc += diff * diff;
      }
      if (i == 0 || acc < best_d) {
        best = i;
        best_d = acc;
      }
    }
    return best;
  }

  // Trojan row first, then the whole vocabulary; PCA over the union.
  Tensor points({v + 1, d});
  for (std::size_t c = 0; c < d; ++c) points.at(0, c) = trojan_embedding[c];
  for (std::size_t i = 0; i < v; ++i)
    for (std::size_t c = 0; c < d; ++c) points.at(i + 1, c) = table.vectors.at(i, c);
  const Tensor proj = pca_fit_transform(points, 2);

  std::size_t best = 0;
  double best_d = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    const double dx = proj.at(i + 1, 0) - proj.at(0, 0);
    const double dy = proj.at(i + 1, 1) - proj.at(0, 1);
    const double acc = dx * dx + dy * dy;
    if (i == 0 || acc < best_d) {
      best = i;
      best_d = acc;
    }
  }
  return best;
}

std::vector<TrojanSample> gen_trojan_batch(const VqaModel& model,
                                           const PerturbationNeurons& neurons,
                                           const std::vector<ShapeWorldSample>& samples,
                                           const AttackConfig& cfg) {
  std::vector<TrojanSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    TrojanSample t;
    t.clean_image = s.image;
    t.question = s.question;
    t.label = s.answer;
    t.task = s.task;
    const VisionTrojanResult vis = gen_vision_trojan(model, neurons, s.image, s.question, cfg);
    t.adv_image = vis.adv_image;
    t.act_vision = vis.final_activation;
    const TextTrojanResult txt = gen_text_trojan(model, neurons, s.image, s.question, cfg);
    t.adv_question = txt.adv_question;
    t.trojan_embedding = txt.trojan_embedding;
    t.act_text_embedding = txt.activation_embedding;
    t.act_text_decoded = txt.activation_decoded;
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

void write_ids(ByteWriter& w, const std::vector<std::size_t>& ids) {
  w.u32(static_cast<std::uint32_t>(ids.size()));
  for (auto id : ids) w.u32(static_cast<std::uint32_t>(id));
}

std::vector<std::size_t> read_ids(ByteReader& r) {
  std::vector<std::size_t> ids(r.u32());
  for (auto& id : ids) id = r.u32();
  return ids;
}

}  // namespace

void save_trojans(const std::vector<TrojanSample>& trojans, const std::string& path) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(trojans.size()));
  for (const auto& t : trojans) {
    w.u8(static_cast<std::uint8_t>(t.task));
    w.u32(static_cast<std::uint32_t>(t.label));
    write_ids(w, t.question);
    write_ids(w, t.adv_question);
    w.tensor_f64(t.clean_image);
    w.tensor_f64(t.adv_image);
    w.tensor_f64(t.trojan_embedding);
    w.f64(t.act_vision);
    w.f64(t.act_text_embedding);
    w.f64(t.act_text_decoded);
  }
  write_container(path, kTrojanMagic, kTrojanVersion, w.bytes());
}

std::vector<TrojanSample> load_trojans(const std::string& path) {
  const auto payload = read_container(path, kTrojanMagic, kTrojanVersion);
  ByteReader r(payload);
  std::vector<TrojanSample> out(r.u32());
  for (auto& t : out) {
    t.task = static_cast<Task>(r.u8());
    t.label = r.u32();
    t.question = read_ids(r);
    t.adv_question = read_ids(r);
    t.clean_image = r.tensor_f64();
    t.adv_image = r.tensor_f64();
    t.trojan_embedding = r.tensor_f64();
    t.act_vision = r.f64();
    t.act_text_embedding = r.f64();
    t.act_text_decoded = r.f64();
  }
  return out;
}

std::string trojans_to_json(const std::vector<TrojanSample>& trojans,
                            const EmbeddingTable& table) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : trojans) {
    nlohmann::json j;
    j["task"] = task_name(t.task);
    j["label"] = t.label;
    j["question"] = t.question;
    j["adv_question"] = t.adv_question;
    std::vector<std::string> words, adv_words;
    for (auto id : t.question) words.push_back(table.tokens.at(id));
    for (auto id : t.adv_question) adv_words.push_back(table.tokens.at(id));
    j["question_text"] = words;
    j["adv_question_text"] = adv_words;
    j["trojan_embedding"] = t.trojan_embedding.data();
    j["act_vision"] = t.act_vision;
    j["act_text_embedding"] = t.act_text_embedding;
    j["act_text_decoded"] = t.act_text_decoded;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

}  // namespace trojanlab
