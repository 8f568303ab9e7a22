#include "trojanlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace trojanlab {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape has a zero dimension");
    n *= d;
  }
  return shape.empty() ? 0 : n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
  cols_ = shape_.empty() ? 0 : shape_.back();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
  }
  cols_ = shape_.empty() ? 0 : shape_.back();
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw DimensionError("rows() on tensor of shape " + shape_str());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw DimensionError("cols() on tensor of shape " + shape_str());
  return shape_[1];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + a.shape_str() + " x " +
                         b.shape_str());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  // ikj order keeps the inner loop contiguous in b and out.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      const double* brow = &b.data()[p * n];
      double* orow = &out.data()[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("sub shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.data()) v *= c;
  return out;
}

double mse(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target))
    throw DimensionError("mse shape mismatch: " + pred.shape_str() + " vs " +
                         target.shape_str());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double cross_entropy(const Tensor& logits, std::size_t target) {
  if (target >= logits.size()) {
    throw std::out_of_range("cross_entropy class index " + std::to_string(target) +
                            " out of range for " + std::to_string(logits.size()) +
                            " classes");
  }
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) denom += std::exp(logits[i] - mx);
  return std::log(denom) - (logits[target] - mx);
}

double l2_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace trojanlab
