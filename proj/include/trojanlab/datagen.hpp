#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trojanlab/rng.hpp"
#include "trojanlab/tensor.hpp"

namespace trojanlab {

enum class Task { yes_no, number, other };

const char* task_name(Task t);

struct EmbeddingTable {
  std::vector<std::string> tokens;          // id -> token, ids dense in [0, V)
  std::map<std::string, std::size_t> ids;   // token -> id
  Tensor vectors;                           // [V x d_emb]

  std::size_t vocab_size() const { return tokens.size(); }
  std::size_t dim() const { return vectors.cols(); }
  Tensor embedding(std::size_t id) const;
};

// Clip range carried over from the GloVe embedding value range.
inline constexpr double kEmbedClipLow = -4.145;
inline constexpr double kEmbedClipHigh = 4.190;

struct Shape {
  int kind;   // 0 square, 1 circle, 2 triangle
  int color;  // 0 red, 1 green, 2 blue
  int cx, cy, half;
};

struct Scene {
  std::vector<Shape> shapes;
};

struct ShapeWorldSample {
  Tensor image;                     // [H x W x 3], values in [0,1]
  std::vector<std::size_t> question;  // fixed-length token ids, pad-filled
  std::size_t answer;               // class id
  Task task;
};

struct Dataset {
  std::vector<ShapeWorldSample> samples;
  std::vector<Scene> scenes;  // parallel to samples; ground truth for oracles

  std::size_t size() const { return samples.size(); }
};

struct DataGenConfig {
  std::size_t train_size = 2000;
  std::size_t val_size = 2500;  // split 4:1 into finetune and test
  std::size_t height = 16, width = 16;
  std::size_t question_len = 6;
};

struct DataSplits {
  Dataset train, finetune, test;
};

// Answer classes, fixed order: yes no one two three red green blue.
std::size_t num_answer_classes();
const std::vector<std::string>& answer_class_names();

// Question vocabulary (64 tokens, id 0 is the pad token).
std::vector<std::string> default_vocabulary();
std::size_t pad_token_id();

// Deterministic shape-world generation; per-split seed streams are disjoint.
DataSplits generate(const DataGenConfig& cfg, const std::vector<std::string>& vocab, Rng& rng);

// Answers a question by reading the scene, independent of any rendering.
std::size_t scene_answer(const Scene& scene, const std::vector<std::size_t>& question,
                         const std::vector<std::string>& vocab);

// Seeded Gaussian embeddings, elementwise clipped to the GloVe range.
EmbeddingTable build_embeddings(const std::vector<std::string>& vocab, std::size_t d_emb,
                                Rng& rng);

// Versioned binary container (magic "TLDS"), same header/checksum scheme as
// model checkpoints; bundles all three splits plus the embedding table.
void save_splits(const DataSplits& splits, const EmbeddingTable& embeddings,
                 const std::string& path);
struct LoadedData {
  DataSplits splits;
  EmbeddingTable embeddings;
};
LoadedData load_splits(const std::string& path);

// Human-readable manifest: split sizes, vocabulary, answer classes.
std::string dataset_manifest_json(const DataSplits& splits, const EmbeddingTable& embeddings);

struct GloveLoadStats {
  std::size_t clipped_values = 0;
  std::size_t duplicate_tokens = 0;
};

// GloVe text format: one "token v1 ... vd" line per token.
EmbeddingTable load_glove_subset(const std::string& path, GloveLoadStats* stats = nullptr);
void save_glove_subset(const EmbeddingTable& table, const std::string& path);

}  // namespace trojanlab
