#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "trojanlab/model.hpp"
#include "trojanlab/serialize.hpp"

using namespace trojanlab;

namespace {

ModelTopology small_topology() {
  ModelTopology t;
  t.image_h = 8;
  t.image_w = 8;
  t.vision_hidden = {16};
  t.embed_dim = 8;
  t.text_hidden = {16};
  t.repr_dim = 8;
  t.fusion_out = 16;
  t.head_width = 16;
  return t;
}

VqaModel make_model(std::uint64_t seed, ModelTopology topo = small_topology()) {
  Rng rng(seed);
  Rng emb_rng = rng.fork(1);
  EmbeddingTable emb = build_embeddings(default_vocabulary(), topo.embed_dim, emb_rng);
  Rng init_rng = rng.fork(2);
  return init_model(topo, std::move(emb), init_rng);
}

DataSplits small_data(std::uint64_t seed, std::size_t n_train) {
  DataGenConfig cfg;
  cfg.train_size = n_train;
  cfg.val_size = 10;
  cfg.height = 8;
  cfg.width = 8;
  Rng rng(seed);
  return generate(cfg, default_vocabulary(), rng);
}

double accuracy_on(const VqaModel& model, const Dataset& ds) {
  std::size_t hit = 0;
  for (const auto& s : ds.samples) {
    const ForwardResult r = forward(model, s.image, s.question);
    std::size_t best = 0;
    for (std::size_t c = 1; c < r.logits.size(); ++c)
      if (r.logits[c] > r.logits[best]) best = c;
    hit += best == s.answer;
  }
  return double(hit) / double(ds.size());
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("zero weights give zero logits and zero perturbation") {
  VqaModel m = make_model(1);
  for (DenseLayer* l : m.all_layers()) {
    for (auto& v : l->weights.data()) v = 0.0;
    for (auto& v : l->bias.data()) v = 0.0;
  }
  const DataSplits sd1 = small_data(1, 3);
  const auto& smp = sd1.train.samples[0];
  const ForwardResult r = forward(m, smp.image, smp.question);
  for (double v : r.logits.data()) CHECK(v == 0.0);
  for (double v : r.perturbation.data()) CHECK(v == 0.0);
}

TEST_CASE("perturbation layer is text-then-vision, width 2D") {
  VqaModel m = make_model(2);
  const DataSplits sd2 = small_data(2, 3);
  const auto& smp = sd2.train.samples[0];
  const ForwardResult r = forward(m, smp.image, smp.question);
  const std::size_t D = m.topo.repr_dim;
  REQUIRE(r.perturbation.size() == 2 * D);
  CHECK(r.logits.size() == m.topo.num_answers);

  // zeroing the vision encoder output layer kills only indices [D, 2D)
  VqaModel mv = m;
  for (auto& v : mv.vision_encoder.back().weights.data()) v = 0.0;
  for (auto& v : mv.vision_encoder.back().bias.data()) v = 0.0;
  const ForwardResult rv = forward(mv, smp.image, smp.question);
  for (std::size_t i = 0; i < D; ++i) CHECK(rv.perturbation[i] == r.perturbation[i]);
  for (std::size_t i = D; i < 2 * D; ++i) CHECK(rv.perturbation[i] == 0.0);

  VqaModel mt = m;
  for (auto& v : mt.text_encoder.back().weights.data()) v = 0.0;
  for (auto& v : mt.text_encoder.back().bias.data()) v = 0.0;
  const ForwardResult rt = forward(mt, smp.image, smp.question);
  for (std::size_t i = 0; i < D; ++i) CHECK(rt.perturbation[i] == 0.0);
  for (std::size_t i = D; i < 2 * D; ++i) CHECK(rt.perturbation[i] == r.perturbation[i]);
}

TEST_CASE("pool_question averages embeddings including pads") {
  VqaModel m = make_model(3);
  const std::vector<std::size_t> q = {5, 6, 0, 0, 0, 0};
  const Tensor pooled = pool_question(m, q);
  REQUIRE(pooled.size() == m.topo.embed_dim);
  for (std::size_t c = 0; c < m.topo.embed_dim; ++c) {
    const double want =
        (m.embeddings.vectors.at(5, c) + m.embeddings.vectors.at(6, c)) / 6.0;
    CHECK(pooled[c] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("forward_batch agrees with per-sample forward") {
  VqaModel m = make_model(4);
  const Dataset ds = small_data(4, 6).train;
  const Tensor imgs = flatten_images(ds.samples);
  const Tensor txts = pool_questions(m, ds.samples);
  const BatchForwardResult b = forward_batch(m, imgs, txts);
  REQUIRE(b.logits.rows() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ForwardResult r = forward(m, ds.samples[i].image, ds.samples[i].question);
    for (std::size_t c = 0; c < r.logits.size(); ++c)
      CHECK(b.logits.at(i, c) == doctest::Approx(r.logits[c]).epsilon(1e-12));
    for (std::size_t c = 0; c < r.perturbation.size(); ++c)
      CHECK(b.perturbation.at(i, c) == doctest::Approx(r.perturbation[c]).epsilon(1e-12));
  }
}

TEST_CASE("init is deterministic per seed") {
  VqaModel a = make_model(9), b = make_model(9), c = make_model(10);
  CHECK(a.head[0].weights.data() == b.head[0].weights.data());
  CHECK(a.text_encoder[0].weights.data() == b.text_encoder[0].weights.data());
  CHECK(a.head[0].weights.data() != c.head[0].weights.data());
}

TEST_CASE("pretrain with lr 0 leaves weights unchanged") {
  VqaModel m = make_model(5);
  const Tensor before = m.head[0].weights;
  const Dataset ds = small_data(5, 12).train;
  Rng rng(5);
  pretrain(m, ds, 2, 4, 0.0, rng);
  CHECK(m.head[0].weights.data() == before.data());
}

TEST_CASE("pretrain rejects fully frozen models and empty data") {
  VqaModel m = make_model(6);
  Rng rng(6);
  Dataset empty;
  CHECK_THROWS_AS(pretrain(m, empty, 1, 4, 1e-3, rng), std::runtime_error);
  for (auto* l : m.all_layers()) l->frozen = true;
  const Dataset ds = small_data(6, 6).train;
  CHECK_THROWS_AS(pretrain(m, ds, 1, 4, 1e-3, rng), std::runtime_error);
}

TEST_CASE("pretrain leaves frozen layers untouched") {
  VqaModel m = make_model(8);
  for (auto& l : m.vision_encoder) l.frozen = true;
  const Tensor before = m.vision_encoder.front().weights;
  const Dataset ds = small_data(8, 24).train;
  Rng rng(8);
  pretrain(m, ds, 2, 8, 1e-3, rng);
  CHECK(m.vision_encoder.front().weights.data() == before.data());
}

TEST_CASE("pretrain reaches high accuracy on its own training data") {
  VqaModel m = make_model(42);
  const Dataset ds = small_data(42, 240).train;
  Rng rng(42);
  const TrainingLog log = pretrain(m, ds, 100, 32, 1e-3, rng);
  REQUIRE(log.epoch_loss.size() == 100);
  CHECK(accuracy_on(m, ds) >= 0.90);
  // smoothed loss is non-increasing: compare first and last thirds
  double head = 0, tail = 0;
  for (int i = 0; i < 33; ++i) head += log.epoch_loss[i];
  for (int i = 67; i < 100; ++i) tail += log.epoch_loss[i];
  CHECK(tail < head);
}

TEST_CASE("replace_head freezes encoders and rebuilds the head") {
  VqaModel m = make_model(8);
  Rng rng(8);
  replace_head(m, 3, 12, rng);
  for (const auto& l : m.text_encoder) CHECK(l.frozen);
  for (const auto& l : m.vision_encoder) CHECK(l.frozen);
  REQUIRE(m.head.size() == 3);
  CHECK(m.head[0].weights.rows() == m.topo.perturbation_width());
  CHECK(m.head[0].weights.cols() == 12);
  CHECK(m.head[1].weights.rows() == 12);
  CHECK(m.head[1].weights.cols() == 12);
  CHECK(m.head[2].weights.cols() == m.topo.num_answers);
  for (const auto& l : m.head) CHECK(!l.frozen);

  VqaModel m1 = make_model(8);
  Rng r1(8);
  replace_head(m1, 1, 12, r1);
  REQUIRE(m1.head.size() == 1);
  CHECK(m1.head[0].weights.rows() == m1.topo.perturbation_width());
  CHECK(m1.head[0].weights.cols() == m1.topo.num_answers);
}

TEST_CASE("frozen encoder features are bit-identical before and after head swap") {
  VqaModel m = make_model(11);
  const DataSplits sd11 = small_data(11, 3);
  const auto& smp = sd11.train.samples[0];
  const Tensor before = forward(m, smp.image, smp.question).perturbation;
  Rng rng(11);
  replace_head(m, 2, 8, rng);
  const Tensor after = forward(m, smp.image, smp.question).perturbation;
  CHECK(before.data() == after.data());
}

TEST_CASE("checkpoint round-trip reproduces forwards within 1e-6") {
  VqaModel m = make_model(12);
  const std::string path = temp_path("tl_model_rt.bin");
  save_model(m, path);
  const VqaModel back = load_model(path);
  CHECK(back.topo.repr_dim == m.topo.repr_dim);
  CHECK(back.embeddings.tokens == m.embeddings.tokens);
  const Dataset ds = small_data(12, 6).train;
  for (const auto& smp : ds.samples) {
    const ForwardResult a = forward(m, smp.image, smp.question);
    const ForwardResult b = forward(back, smp.image, smp.question);
    for (std::size_t c = 0; c < a.logits.size(); ++c)
      CHECK(std::abs(a.logits[c] - b.logits[c]) < 1e-6);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint survives a frozen replaced head") {
  VqaModel m = make_model(13);
  Rng rng(13);
  replace_head(m, 2, 8, rng);
  const std::string path = temp_path("tl_model_head.bin");
  save_model(m, path);
  const VqaModel back = load_model(path);
  REQUIRE(back.head.size() == 2);
  for (const auto& l : back.text_encoder) CHECK(l.frozen);
  std::filesystem::remove(path);
}

TEST_CASE("tampered checkpoints are rejected with the right kinds") {
  VqaModel m = make_model(14);
  const std::string path = temp_path("tl_model_bad.bin");
  save_model(m, path);

  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  in.close();

  // truncation
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  try {
    (void)load_model(path);
    FAIL("expected ContainerError");
  } catch (const ContainerError& e) {
    CHECK((e.kind() == ContainerErrorKind::bad_checksum ||
           e.kind() == ContainerErrorKind::truncated));
  }

  // single flipped payload byte
  {
    std::vector<char> flipped = bytes;
    flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x40);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
  }
  try {
    (void)load_model(path);
    FAIL("expected ContainerError");
  } catch (const ContainerError& e) {
    CHECK(e.kind() == ContainerErrorKind::bad_checksum);
    CHECK(std::string(e.what()).find("checksum") != std::string::npos);
  }

  // wrong magic
  {
    std::vector<char> wrong = bytes;
    wrong[0] = 'X';
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(wrong.data(), static_cast<std::streamsize>(wrong.size()));
  }
  try {
    (void)load_model(path);
    FAIL("expected ContainerError");
  } catch (const ContainerError& e) {
    CHECK(e.kind() == ContainerErrorKind::bad_magic);
  }
  std::filesystem::remove(path);
}

TEST_CASE("topology json round-trip and validation") {
  ModelTopology t = small_topology();
  const ModelTopology back = ModelTopology::from_json(t.to_json());
  CHECK(back.repr_dim == t.repr_dim);
  CHECK(back.vision_hidden == t.vision_hidden);
  ModelTopology bad = t;
  bad.repr_dim = 0;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
}

TEST_CASE("standardize_perturbation preserves logits exactly") {
  VqaModel model = make_model(61);
  const DataSplits sd = small_data(62, 40);
  std::vector<Tensor> before;
  for (const auto& s : sd.test.samples)
    before.push_back(forward(model, s.image, s.question).logits);
  standardize_perturbation(model, sd.train.samples);
  for (std::size_t i = 0; i < sd.test.size(); ++i) {
    const auto& s = sd.test.samples[i];
    const Tensor after = forward(model, s.image, s.question).logits;
    for (std::size_t c = 0; c < after.size(); ++c)
      CHECK(after[c] == doctest::Approx(before[i][c]).epsilon(1e-9));
  }
}

TEST_CASE("standardize_perturbation centers and scales the calibration set") {
  VqaModel model = make_model(63);
  const DataSplits sd = small_data(64, 50);
  Rng t_rng(65);
  pretrain(model, sd.train, 3, 16, 1e-3, t_rng);
  standardize_perturbation(model, sd.train.samples);
  const Tensor flat = flatten_images(sd.train.samples);
  const Tensor pooled = pool_questions(model, sd.train.samples);
  const Tensor pert = forward_batch(model, flat, pooled).perturbation;
  for (std::size_t i = 0; i < pert.cols(); ++i) {
    double mu = 0.0;
    for (std::size_t r = 0; r < pert.rows(); ++r) mu += pert.at(r, i);
    mu /= double(pert.rows());
    double var = 0.0;
    for (std::size_t r = 0; r < pert.rows(); ++r)
      var += (pert.at(r, i) - mu) * (pert.at(r, i) - mu);
    var /= double(pert.rows());
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("standardize_perturbation rejects an empty calibration set") {
  VqaModel model = make_model(66);
  CHECK_THROWS_AS(standardize_perturbation(model, {}), std::runtime_error);
}
