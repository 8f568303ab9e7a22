#include "trojanlab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace trojanlab {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& section) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key))
      throw std::runtime_error("unknown config key '" + key + "' in section '" + section + "'");
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_data(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j, {"train_size", "val_size", "image", "question_len", "seed"}, "data");
  get_if(j, "train_size", cfg.data.train_size);
  get_if(j, "val_size", cfg.data.val_size);
  if (j.contains("image")) {
    const auto dims = j.at("image").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw std::runtime_error("data.image must be [height, width, channels]");
    cfg.data.height = dims[0];
    cfg.data.width = dims[1];
    cfg.model.image_h = dims[0];
    cfg.model.image_w = dims[1];
    cfg.model.image_c = dims[2];
  }
  get_if(j, "question_len", cfg.data.question_len);
  get_if(j, "seed", cfg.data_seed);
}

void parse_model(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j,
                 {"vision_hidden", "text_hidden", "embed_dim", "repr_dim", "fusion_out",
                  "head_width", "num_answers", "seed"},
                 "model");
  get_if(j, "vision_hidden", cfg.model.vision_hidden);
  get_if(j, "text_hidden", cfg.model.text_hidden);
  get_if(j, "embed_dim", cfg.model.embed_dim);
  get_if(j, "repr_dim", cfg.model.repr_dim);
  get_if(j, "fusion_out", cfg.model.fusion_out);
  get_if(j, "head_width", cfg.model.head_width);
  get_if(j, "num_answers", cfg.model.num_answers);
  get_if(j, "seed", cfg.model_seed);
}

void parse_pretrain(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j, {"epochs", "batch_size", "lr"}, "pretrain");
  get_if(j, "epochs", cfg.pretrain.epochs);
  get_if(j, "batch_size", cfg.pretrain.batch_size);
  get_if(j, "lr", cfg.pretrain.lr);
}

void parse_attack(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j,
                 {"alpha_i", "e_i", "alpha_q", "e_q", "target_activation", "vision_clip",
                  "text_clip", "raw_l2_decode", "abs_strength", "num_train_trojans",
                  "num_test_trojans"},
                 "attack");
  get_if(j, "alpha_i", cfg.attack.alpha_i);
  get_if(j, "e_i", cfg.attack.e_i);
  get_if(j, "alpha_q", cfg.attack.alpha_q);
  get_if(j, "e_q", cfg.attack.e_q);
  get_if(j, "target_activation", cfg.attack.target_activation);
  if (j.contains("vision_clip")) {
    const auto c = j.at("vision_clip").get<std::vector<double>>();
    if (c.size() != 2) throw std::runtime_error("attack.vision_clip must be [low, high]");
    cfg.attack.vision_clip_low = c[0];
    cfg.attack.vision_clip_high = c[1];
  }
  if (j.contains("text_clip")) {
    const auto c = j.at("text_clip").get<std::vector<double>>();
    if (c.size() != 2) throw std::runtime_error("attack.text_clip must be [low, high]");
    cfg.attack.text_clip_low = c[0];
    cfg.attack.text_clip_high = c[1];
  }
  get_if(j, "raw_l2_decode", cfg.attack.raw_l2_decode);
  get_if(j, "abs_strength", cfg.attack.abs_strength);
  get_if(j, "num_train_trojans", cfg.num_train_trojans);
  get_if(j, "num_test_trojans", cfg.num_test_trojans);
}

void parse_finetune(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j,
                 {"depth", "head_width", "epochs", "batch_size", "lr", "beta", "inject_count",
                  "gamma", "mode"},
                 "finetune");
  get_if(j, "depth", cfg.finetune.depth);
  get_if(j, "head_width", cfg.finetune.head_width);
  get_if(j, "epochs", cfg.finetune.epochs);
  get_if(j, "batch_size", cfg.finetune.batch_size);
  get_if(j, "lr", cfg.finetune.lr);
  get_if(j, "beta", cfg.finetune.beta);
  get_if(j, "inject_count", cfg.finetune.inject_count);
  if (j.contains("gamma")) cfg.finetune.gamma = j.at("gamma").get<double>();
  if (j.contains("mode")) cfg.finetune.mode = mode_from_name(j.at("mode").get<std::string>());
}

void parse_sweep(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j, {"alphas", "iterations", "depths", "counts", "sweep_samples"}, "sweep");
  get_if(j, "alphas", cfg.sweep.alphas);
  get_if(j, "iterations", cfg.sweep.iterations);
  get_if(j, "depths", cfg.sweep.depths);
  get_if(j, "counts", cfg.sweep.counts);
  get_if(j, "sweep_samples", cfg.sweep.sweep_samples);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  reject_unknown(j,
                 {"data", "model", "pretrain", "attack", "finetune", "defense", "sweep",
                  "seeds", "out_dir"},
                 "(root)");
  ExperimentConfig cfg;
  if (j.contains("data")) parse_data(j.at("data"), cfg);
  if (j.contains("model")) parse_model(j.at("model"), cfg);
  if (j.contains("pretrain")) parse_pretrain(j.at("pretrain"), cfg);
  if (j.contains("attack")) parse_attack(j.at("attack"), cfg);
  if (j.contains("finetune")) parse_finetune(j.at("finetune"), cfg);
  if (j.contains("defense")) {
    reject_unknown(j.at("defense"), {"sigmas"}, "defense");
    get_if(j.at("defense"), "sigmas", cfg.dp_sigmas);
  }
  if (j.contains("sweep")) parse_sweep(j.at("sweep"), cfg);
  get_if(j, "seeds", cfg.seeds);
  get_if(j, "out_dir", cfg.out_dir);
  cfg.model.validate();
  cfg.attack.validate();
  cfg.finetune.validate();
  if (cfg.seeds.empty()) throw std::runtime_error("seeds list must be non-empty");
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["data"] = {{"train_size", data.train_size},
               {"val_size", data.val_size},
               {"image", {model.image_h, model.image_w, model.image_c}},
               {"question_len", data.question_len},
               {"seed", data_seed}};
  j["model"] = {{"vision_hidden", model.vision_hidden},
                {"text_hidden", model.text_hidden},
                {"embed_dim", model.embed_dim},
                {"repr_dim", model.repr_dim},
                {"fusion_out", model.fusion_out},
                {"head_width", model.head_width},
                {"num_answers", model.num_answers},
                {"seed", model_seed}};
  j["pretrain"] = {{"epochs", pretrain.epochs},
                   {"batch_size", pretrain.batch_size},
                   {"lr", pretrain.lr}};
  j["attack"] = {{"alpha_i", attack.alpha_i},
                 {"e_i", attack.e_i},
                 {"alpha_q", attack.alpha_q},
                 {"e_q", attack.e_q},
                 {"target_activation", attack.target_activation},
                 {"vision_clip", {attack.vision_clip_low, attack.vision_clip_high}},
                 {"text_clip", {attack.text_clip_low, attack.text_clip_high}},
                 {"raw_l2_decode", attack.raw_l2_decode},
                 {"abs_strength", attack.abs_strength},
                 {"num_train_trojans", num_train_trojans},
                 {"num_test_trojans", num_test_trojans}};
  json ft = {{"depth", finetune.depth},
             {"head_width", finetune.head_width},
             {"epochs", finetune.epochs},
             {"batch_size", finetune.batch_size},
             {"lr", finetune.lr},
             {"beta", finetune.beta},
             {"inject_count", finetune.inject_count},
             {"mode", mode_name(finetune.mode)}};
  if (finetune.gamma) ft["gamma"] = *finetune.gamma;
  j["finetune"] = ft;
  j["defense"] = {{"sigmas", dp_sigmas}};
  j["sweep"] = {{"alphas", sweep.alphas},
                {"iterations", sweep.iterations},
                {"depths", sweep.depths},
                {"counts", sweep.counts},
                {"sweep_samples", sweep.sweep_samples}};
  j["seeds"] = seeds;
  j["out_dir"] = out_dir;
  return j.dump(2);
}

}  // namespace trojanlab
