#include <cmath>

#include "doctest.h"
#include "trojanlab/rng.hpp"
#include "trojanlab/tensor.hpp"

using namespace trojanlab;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-2.0, 2.0);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor v({2, 1}, {3, 4});
  const Tensor r = matmul(eye, v);
  CHECK(r.at(0, 0) == 3.0);
  CHECK(r.at(1, 0) == 4.0);

  const Tensor a({1, 1}, {2}), b({1, 1}, {5});
  CHECK(matmul(a, b)[0] == 10.0);
}

TEST_CASE("matmul matches naive triple-loop oracle") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({4, 2}, rng);
    const Tensor got = matmul(a, b);
    const Tensor want = naive_matmul(a, b);
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a({2, 3}), b({2, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("mse") {
  CHECK(mse(Tensor::scalar(10), Tensor::scalar(10)) == 0.0);
  CHECK(mse(Tensor::scalar(3), Tensor::scalar(10)) == 49.0);
}

TEST_CASE("cross entropy of uniform logits is ln C") {
  const Tensor logits({4}, {0.7, 0.7, 0.7, 0.7});
  for (std::size_t c = 0; c < 4; ++c)
    CHECK(cross_entropy(logits, c) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(logits, 4), std::out_of_range);
}

TEST_CASE("relu clamps negatives") {
  const Tensor t({4}, {-1.0, 0.0, 0.5, -0.2});
  const Tensor r = relu(t);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 0.5);
  CHECK(r[3] == 0.0);
}

TEST_CASE("operations stay finite on finite inputs") {
  Rng rng(3);
  const Tensor a = random_tensor({5, 6}, rng);
  const Tensor b = random_tensor({6, 3}, rng);
  CHECK(matmul(a, b).all_finite());
  CHECK(relu(a).all_finite());
  CHECK(transpose(a).all_finite());
}
