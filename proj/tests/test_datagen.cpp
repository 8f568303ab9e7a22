#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "trojanlab/datagen.hpp"

using namespace trojanlab;

namespace {

DataGenConfig small_config() {
  DataGenConfig cfg;
  cfg.train_size = 60;
  cfg.val_size = 25;
  return cfg;
}

// Answer checker written from scratch against the scene graph; never calls
// scene_answer(). Returns the expected class id for the rendered question.
std::size_t check_answer(const Scene& scene, const std::vector<std::size_t>& q,
                         const std::vector<std::string>& vocab) {
  const auto& answers = answer_class_names();
  auto cls = [&](const std::string& s) {
    return std::size_t(std::find(answers.begin(), answers.end(), s) - answers.begin());
  };
  std::vector<std::string> words;
  for (auto id : q)
    if (id != pad_token_id()) words.push_back(vocab.at(id));
  auto kind_from = [&](std::string w) {
    if (!w.empty() && w.back() == 's') w.pop_back();
    if (w == "square") return 0;
    if (w == "circle") return 1;
    REQUIRE(w == "triangle");
    return 2;
  };
  if (words.at(0) == "is") {
    const int kind = kind_from(words.at(3));
    for (const auto& s : scene.shapes)
      if (s.kind == kind) return cls("yes");
    return cls("no");
  }
  if (words.at(0) == "how") {
    const int kind = kind_from(words.at(2));
    int n = 0;
    for (const auto& s : scene.shapes) n += s.kind == kind;
    if (n <= 1) return cls("one");
    if (n == 2) return cls("two");
    return cls("three");
  }
  REQUIRE(words.at(0) == "what");
  const int kind = kind_from(words.at(4));
  for (const auto& s : scene.shapes)
    if (s.kind == kind) return cls(std::vector<std::string>{"red", "green", "blue"}[s.color]);
  REQUIRE(false);
  return 0;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generation is deterministic for a fixed seed") {
  const auto vocab = default_vocabulary();
  Rng r1(31), r2(31);
  const DataSplits a = generate(small_config(), vocab, r1);
  const DataSplits b = generate(small_config(), vocab, r2);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.samples[i].question == b.train.samples[i].question);
    CHECK(a.train.samples[i].answer == b.train.samples[i].answer);
    CHECK(a.train.samples[i].image.data() == b.train.samples[i].image.data());
  }
  Rng r3(32);
  const DataSplits c = generate(small_config(), vocab, r3);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.train.size() && !any_diff; ++i)
    any_diff = a.train.samples[i].image.data() != c.train.samples[i].image.data();
  CHECK(any_diff);
}

TEST_CASE("split sizes follow the 4:1 held-out ratio") {
  const auto vocab = default_vocabulary();
  Rng rng(7);
  const DataSplits s = generate(small_config(), vocab, rng);
  CHECK(s.train.size() == 60);
  CHECK(s.finetune.size() == 20);
  CHECK(s.test.size() == 5);

  DataGenConfig full;  // defaults
  CHECK(full.train_size == 2000);
  CHECK(full.val_size == 2500);
}

TEST_CASE("labels agree with an independent scene-graph checker") {
  const auto vocab = default_vocabulary();
  Rng rng(19);
  DataGenConfig cfg = small_config();
  cfg.train_size = 300;
  const DataSplits s = generate(cfg, vocab, rng);
  for (const Dataset* ds : {&s.train, &s.finetune, &s.test}) {
    REQUIRE(ds->samples.size() == ds->scenes.size());
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const auto& smp = ds->samples[i];
      CHECK(smp.answer == check_answer(ds->scenes[i], smp.question, vocab));
      CHECK(smp.answer == scene_answer(ds->scenes[i], smp.question, vocab));
    }
  }
}

TEST_CASE("every task family holds at least 20 percent of each split") {
  const auto vocab = default_vocabulary();
  Rng rng(3);
  DataGenConfig cfg = small_config();
  cfg.train_size = 100;
  cfg.val_size = 50;
  const DataSplits s = generate(cfg, vocab, rng);
  for (const Dataset* ds : {&s.train, &s.finetune, &s.test}) {
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& smp : ds->samples) ++counts[static_cast<int>(smp.task)];
    for (int t = 0; t < 3; ++t)
      CHECK(double(counts[t]) >= 0.2 * double(ds->size()));
  }
}

TEST_CASE("pixels live in [0,1] and questions are pad-terminated") {
  const auto vocab = default_vocabulary();
  Rng rng(8);
  const DataSplits s = generate(small_config(), vocab, rng);
  for (const auto& smp : s.train.samples) {
    CHECK(smp.image.shape() == std::vector<std::size_t>{16, 16, 3});
    for (double v : smp.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(smp.question.size() == 6);
    bool seen_pad = false;
    for (auto id : smp.question) {
      REQUIRE(id < vocab.size());
      if (seen_pad) CHECK(id == pad_token_id());
      seen_pad |= id == pad_token_id();
    }
    CHECK(smp.question.front() != pad_token_id());
    CHECK(smp.answer < num_answer_classes());
  }
}

TEST_CASE("vocabulary has 64 tokens with pad at id 0") {
  const auto vocab = default_vocabulary();
  CHECK(vocab.size() == 64);
  CHECK(vocab[pad_token_id()] == "<pad>");
  auto sorted = vocab;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("answer classes are fixed and ordered") {
  const auto& names = answer_class_names();
  const std::vector<std::string> want = {"yes", "no",  "one",   "two",
                                         "three", "red", "green", "blue"};
  CHECK(names == want);
  CHECK(num_answer_classes() == 8);
}

TEST_CASE("built embeddings respect the clip range, pad row zero") {
  const auto vocab = default_vocabulary();
  Rng rng(44);
  const EmbeddingTable t = build_embeddings(vocab, 16, rng);
  CHECK(t.vocab_size() == 64);
  CHECK(t.dim() == 16);
  for (double v : t.vectors.data()) {
    CHECK(v >= kEmbedClipLow);
    CHECK(v <= kEmbedClipHigh);
  }
  for (std::size_t c = 0; c < 16; ++c) CHECK(t.vectors.at(pad_token_id(), c) == 0.0);
  // non-pad rows are pairwise distinct
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) {
      bool differ = false;
      for (std::size_t c = 0; c < 16 && !differ; ++c)
        differ = t.vectors.at(i, c) != t.vectors.at(j, c);
      CHECK(differ);
    }
  CHECK_THROWS_AS((void)t.embedding(64), std::out_of_range);
}

TEST_CASE("glove text round-trip preserves tokens and values") {
  const auto vocab = default_vocabulary();
  Rng rng(2);
  const EmbeddingTable t = build_embeddings(vocab, 8, rng);
  const std::string path = temp_path("tl_glove_rt.txt");
  save_glove_subset(t, path);
  const EmbeddingTable back = load_glove_subset(path);
  REQUIRE(back.vocab_size() == t.vocab_size());
  CHECK(back.tokens == t.tokens);
  for (std::size_t i = 0; i < t.vectors.size(); ++i)
    CHECK(back.vectors[i] == doctest::Approx(t.vectors[i]).epsilon(1e-10));
  std::filesystem::remove(path);
}

TEST_CASE("glove loader errors carry line numbers") {
  const std::string path = temp_path("tl_glove_bad.txt");
  {
    std::ofstream out(path);
    out << "alpha 0.1 0.2\n";
    out << "beta 0.3 0.4 0.5\n";
  }
  CHECK_THROWS_WITH_AS(load_glove_subset(path), doctest::Contains("line 2"),
                       std::runtime_error);
  {
    std::ofstream out(path);
    out << "alpha 0.1 zebra\n";
  }
  CHECK_THROWS_WITH_AS(load_glove_subset(path), doctest::Contains("line 1"),
                       std::runtime_error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_glove_subset(path), std::runtime_error);  // missing file
}

TEST_CASE("glove loader clips out-of-range values and skips duplicates") {
  const std::string path = temp_path("tl_glove_clip.txt");
  {
    std::ofstream out(path);
    out << "alpha -9.0 0.5\n";
    out << "beta 0.1 7.25\n";
    out << "alpha 0.0 0.0\n";
  }
  GloveLoadStats stats;
  const EmbeddingTable t = load_glove_subset(path, &stats);
  CHECK(t.vocab_size() == 2);
  CHECK(stats.duplicate_tokens == 1);
  CHECK(stats.clipped_values == 2);
  CHECK(t.vectors.at(0, 0) == kEmbedClipLow);
  CHECK(t.vectors.at(0, 1) == 0.5);  // first occurrence wins
  CHECK(t.vectors.at(1, 1) == kEmbedClipHigh);
  std::filesystem::remove(path);
}

TEST_CASE("dataset container round-trips") {
  const auto vocab = default_vocabulary();
  Rng rng(15);
  DataGenConfig cfg = small_config();
  cfg.train_size = 12;
  cfg.val_size = 10;
  const DataSplits s = generate(cfg, vocab, rng);
  const EmbeddingTable emb = build_embeddings(vocab, 8, rng);
  const std::string path = temp_path("tl_dataset_rt.bin");
  save_splits(s, emb, path);
  const LoadedData back = load_splits(path);
  REQUIRE(back.splits.train.size() == s.train.size());
  REQUIRE(back.splits.finetune.size() == s.finetune.size());
  REQUIRE(back.splits.test.size() == s.test.size());
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    CHECK(back.splits.train.samples[i].question == s.train.samples[i].question);
    CHECK(back.splits.train.samples[i].answer == s.train.samples[i].answer);
    CHECK(back.splits.train.samples[i].task == s.train.samples[i].task);
    // images travel as float32
    const auto& a = back.splits.train.samples[i].image;
    const auto& b = s.train.samples[i].image;
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) < 1e-6);
  }
  CHECK(back.embeddings.tokens == emb.tokens);
  CHECK(back.embeddings.vectors.data() == emb.vectors.data());
  const std::string manifest = dataset_manifest_json(s, emb);
  CHECK(manifest.find("\"train_size\"") != std::string::npos);
  std::filesystem::remove(path);
}
