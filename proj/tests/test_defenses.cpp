#include <cmath>
#include <vector>

#include "doctest.h"
#include "trojanlab/defenses.hpp"

using namespace trojanlab;

namespace {

ModelTopology tiny_topology() {
  ModelTopology t;
  t.image_h = 6;
  t.image_w = 6;
  t.vision_hidden = {10};
  t.embed_dim = 6;
  t.text_hidden = {10};
  t.repr_dim = 4;
  t.fusion_out = 6;
  t.head_width = 8;
  return t;
}

VqaModel tiny_model(std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingTable emb = build_embeddings(default_vocabulary(), 6, rng);
  VqaModel m = init_model(tiny_topology(), std::move(emb), rng);
  Rng hr(seed + 99);
  replace_head(m, 1, m.topo.head_width, hr);
  return m;
}

Dataset tiny_data(std::uint64_t seed, std::size_t n) {
  DataGenConfig cfg;
  cfg.train_size = n;
  cfg.val_size = 5;
  cfg.height = 6;
  cfg.width = 6;
  Rng rng(seed);
  return generate(cfg, default_vocabulary(), rng).train;
}

std::vector<TrojanSample> fake_trojans(const Dataset& ds, std::size_t n) {
  std::vector<TrojanSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.samples[i % ds.size()];
    TrojanSample t;
    t.clean_image = s.image;
    t.question = s.question;
    t.label = s.answer;
    t.task = s.task;
    t.adv_image = s.image;
    for (auto& v : t.adv_image.data()) v = std::min(1.0, v + 0.02 * double(i + 1));
    t.adv_question = s.question;
    t.trojan_embedding = Tensor({1, 6});
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("sigma zero is bit-identical to an undefended run") {
  const Dataset ds = tiny_data(1, 12);
  const Dataset test = tiny_data(2, 6);
  const auto trojans = fake_trojans(ds, 4);
  const auto trojan_test = fake_trojans(test, 4);
  const PoisonedDataset p = build_poisoned_set(ds, trojans, 4);

  FineTuneConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 6;

  VqaModel undefended = tiny_model(1);
  VqaModel defended = undefended;

  Rng ra(7);
  const UpdateTrace base = finetune(undefended, p, cfg, ra);

  DpConfig dp;
  dp.sigma = 0.0;
  Rng rb(7);
  const DpRunResult r = finetune_with_dp(defended, p, cfg, dp, rb, test.samples, trojan_test);

  for (std::size_t l = 0; l < undefended.head.size(); ++l) {
    CHECK(defended.head[l].weights.data() == undefended.head[l].weights.data());
    CHECK(defended.head[l].bias.data() == undefended.head[l].bias.data());
  }
  CHECK(r.trace.total_delta == base.total_delta);
}

TEST_CASE("positive sigma perturbs the trajectory deterministically") {
  const Dataset ds = tiny_data(3, 12);
  const Dataset test = tiny_data(4, 6);
  const auto trojan_test = fake_trojans(test, 4);
  const PoisonedDataset p = build_poisoned_set(ds, fake_trojans(ds, 4), 4);
  FineTuneConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 6;
  DpConfig dp;
  dp.sigma = 0.05;

  VqaModel a = tiny_model(3);
  VqaModel b = a;
  VqaModel c = a;

  Rng ra(11), rb(11), rc(11);
  finetune_with_dp(a, p, cfg, dp, ra, test.samples, trojan_test);
  finetune_with_dp(b, p, cfg, dp, rb, test.samples, trojan_test);
  DpConfig none;
  finetune_with_dp(c, p, cfg, none, rc, test.samples, trojan_test);

  CHECK(a.head[0].weights.data() == b.head[0].weights.data());
  CHECK(a.head[0].weights.data() != c.head[0].weights.data());

  DpConfig bad;
  bad.sigma = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
}

TEST_CASE("norm report: 3-4-5 by hand") {
  UpdateTrace benign;
  benign.total_delta = {3.0, 4.0};  // norm 5
  UpdateTrace malicious;
  malicious.total_delta = {0.0, 10.0};  // norm 10
  const NormReport r = norm_difference({benign}, {malicious});
  REQUIRE(r.benign_norms.size() == 1);
  REQUIRE(r.malicious_norms.size() == 1);
  CHECK(r.benign_norms[0] == doctest::Approx(5.0));
  CHECK(r.malicious_norms[0] == doctest::Approx(10.0));
  CHECK(r.ratio == doctest::Approx(2.0));
  CHECK_THROWS_AS(norm_difference({}, {malicious}), std::runtime_error);
  CHECK_THROWS_AS(norm_difference({benign}, {}), std::runtime_error);
}

TEST_CASE("norm report matches a brute-force oracle on random traces") {
  Rng rng(17);
  std::vector<UpdateTrace> benign(3), malicious(2);
  for (auto& t : benign) {
    t.total_delta.resize(20);
    for (auto& v : t.total_delta) v = rng.uniform(-1.0, 1.0);
  }
  for (auto& t : malicious) {
    t.total_delta.resize(20);
    for (auto& v : t.total_delta) v = rng.uniform(-2.0, 2.0);
  }
  const NormReport r = norm_difference(benign, malicious);
  auto norm_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  double bsum = 0.0, msum = 0.0;
  for (std::size_t i = 0; i < benign.size(); ++i) {
    CHECK(r.benign_norms[i] == doctest::Approx(norm_of(benign[i].total_delta)).epsilon(1e-12));
    bsum += norm_of(benign[i].total_delta);
  }
  for (std::size_t i = 0; i < malicious.size(); ++i) {
    CHECK(r.malicious_norms[i] ==
          doctest::Approx(norm_of(malicious[i].total_delta)).epsilon(1e-12));
    msum += norm_of(malicious[i].total_delta);
  }
  CHECK(r.ratio ==
        doctest::Approx((msum / 2.0) / (bsum / 3.0)).epsilon(1e-12));
}
