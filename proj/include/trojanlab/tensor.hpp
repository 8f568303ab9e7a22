#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace trojanlab {

// Dense row-major tensor of 64-bit floats.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D accessors; rows()/cols() require rank 2.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  Tensor reshaped(std::vector<std::size_t> shape) const;

 private:
  std::vector<std::size_t> shape_;
  std::size_t cols_ = 0;  // trailing dimension, cached for at()
  std::vector<double> data_;
};

// Thrown on shape mismatches; the message names both shapes.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// Mean squared error over all elements; for scalars this is (a-b)^2.
double mse(const Tensor& pred, const Tensor& target);

// -log softmax(logits)[target]; logits is a flat length-C vector.
double cross_entropy(const Tensor& logits, std::size_t target);

double l2_norm(const std::vector<double>& v);

}  // namespace trojanlab
