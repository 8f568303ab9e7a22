#include "trojanlab/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace trojanlab {

GradTape::Var GradTape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), nullptr});
  return nodes_.size() - 1;
}

const Tensor& GradTape::value(Var v) const {
  check(v);
  return nodes_[v].value;
}

void GradTape::check(Var v) const {
  if (v >= nodes_.size())
    throw std::out_of_range("tensor " + std::to_string(v) + " is not on this tape");
}

void GradTape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

GradTape::Var GradTape::matmul(Var a, Var b) {
  check(a);
  check(b);
  Tensor out = trojanlab::matmul(nodes_[a].value, nodes_[b].value);
  nodes_.push_back(Node{std::move(out), Tensor(),
                        [a, b](GradTape& t, std::size_t self) {
                          const Tensor& g = t.nodes_[self].grad;
                          t.accumulate(a, trojanlab::matmul(g, transpose(t.nodes_[b].value)));
                          t.accumulate(b, trojanlab::matmul(transpose(t.nodes_[a].value), g));
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::add(Var a, Var b) {
  check(a);
  check(b);
  Tensor out = trojanlab::add(nodes_[a].value, nodes_[b].value);
  nodes_.push_back(Node{std::move(out), Tensor(),
                        [a, b](GradTape& t, std::size_t self) {
                          t.accumulate(a, t.nodes_[self].grad);
                          t.accumulate(b, t.nodes_[self].grad);
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::add_row(Var m, Var bias) {
  check(m);
  check(bias);
  const Tensor& mv = nodes_[m].value;
  const Tensor& bv = nodes_[bias].value;
  if (bv.rows() != 1 || bv.cols() != mv.cols())
    throw DimensionError("add_row shape mismatch: " + mv.shape_str() + " + " + bv.shape_str());
  Tensor out = mv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bv[c];
  nodes_.push_back(Node{std::move(out), Tensor(),
                        [m, bias](GradTape& t, std::size_t self) {
                          const Tensor& g = t.nodes_[self].grad;
                          t.accumulate(m, g);
                          Tensor bg({1, g.cols()});
                          for (std::size_t r = 0; r < g.rows(); ++r)
                            for (std::size_t c = 0; c < g.cols(); ++c) bg[c] += g.at(r, c);
                          t.accumulate(bias, bg);
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::relu(Var a) {
  check(a);
  Tensor out = trojanlab::relu(nodes_[a].value);
  nodes_.push_back(Node{std::move(out), Tensor(),
                        [a](GradTape& t, std::size_t self) {
                          const Tensor& g = t.nodes_[self].grad;
                          const Tensor& in = t.nodes_[a].value;
                          Tensor ag(in.shape());
                          for (std::size_t i = 0; i < in.size(); ++i)
                            ag[i] = in[i] > 0.0 ? g[i] : 0.0;
                          t.accumulate(a, ag);
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::scale(Var a, double c) {
  check(a);
  Tensor out = trojanlab::scale(nodes_[a].value, c);
  nodes_.push_back(Node{std::move(out), Tensor(),
                        [a, c](GradTape& t, std::size_t self) {
                          t.accumulate(a, trojanlab::scale(t.nodes_[self].grad, c));
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::concat_cols(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  if (av.rows() != bv.rows())
    throw DimensionError("concat_cols row mismatch: " + av.shape_str() + " vs " + bv.shape_str());
  const std::size_t n = av.cols(), m = bv.cols();
  Tensor out({av.rows(), n + m});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) = av.at(r, c);
    for (std::size_t c = 0; c < m; ++c) out.at(r, n + c) = bv.at(r, c);
  }
  nodes_.push_back(Node{std::move(out), Tensor(),
                        [a, b, n, m](GradTape& t, std::size_t self) {
                          const Tensor& g = t.nodes_[self].grad;
                          Tensor ga({g.rows(), n}), gb({g.rows(), m});
                          for (std::size_t r = 0; r < g.rows(); ++r) {
                            for (std::size_t c = 0; c < n; ++c) ga.at(r, c) = g.at(r, c);
                            for (std::size_t c = 0; c < m; ++c) gb.at(r, c) = g.at(r, n + c);
                          }
                          t.accumulate(a, ga);
                          t.accumulate(b, gb);
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::pick(Var a, std::size_t index) {
  check(a);
  const Tensor& av = nodes_[a].value;
  if (index >= av.size())
    throw std::out_of_range("pick index " + std::to_string(index) + " out of range for " +
                            av.shape_str());
  nodes_.push_back(Node{Tensor::scalar(av[index]), Tensor(),
                        [a, index](GradTape& t, std::size_t self) {
                          Tensor ag(t.nodes_[a].value.shape());
                          ag[index] = t.nodes_[self].grad[0];
                          t.accumulate(a, ag);
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::squared_error_to(Var a, double target) {
  check(a);
  const Tensor& av = nodes_[a].value;
  if (av.size() != 1) throw DimensionError("squared_error_to expects a scalar");
  const double d = target - av[0];
  nodes_.push_back(Node{Tensor::scalar(d * d), Tensor(),
                        [a, target](GradTape& t, std::size_t self) {
                          const double x = t.nodes_[a].value[0];
                          Tensor ag({1});
                          ag[0] = t.nodes_[self].grad[0] * 2.0 * (x - target);
                          t.accumulate(a, ag);
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::mse(Var a, const Tensor& target) {
  check(a);
  const Tensor& av = nodes_[a].value;
  if (!av.same_shape(target))
    throw DimensionError("mse shape mismatch: " + av.shape_str() + " vs " + target.shape_str());
  nodes_.push_back(Node{Tensor::scalar(trojanlab::mse(av, target)), Tensor(),
                        [a, target](GradTape& t, std::size_t self) {
                          const Tensor& in = t.nodes_[a].value;
                          const double g = t.nodes_[self].grad[0];
                          const double inv = 2.0 / static_cast<double>(in.size());
                          Tensor ag(in.shape());
                          for (std::size_t i = 0; i < in.size(); ++i)
                            ag[i] = g * inv * (in[i] - target[i]);
                          t.accumulate(a, ag);
                        }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::cross_entropy_weighted(Var logits,
                                               const std::vector<std::size_t>& targets,
                                               const std::vector<double>& row_weights) {
  check(logits);
  const Tensor& lv = nodes_[logits].value;
  const std::size_t rows = lv.rows(), c = lv.cols();
  if (targets.size() != rows || row_weights.size() != rows)
    throw DimensionError("cross_entropy_weighted expects one target and weight per row");
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= c)
      throw std::out_of_range("cross_entropy class index " + std::to_string(targets[r]) +
                              " out of range for " + std::to_string(c) + " classes");
    Tensor row({c});
    for (std::size_t j = 0; j < c; ++j) row[j] = lv.at(r, j);
    total += row_weights[r] * trojanlab::cross_entropy(row, targets[r]);
  }
  nodes_.push_back(
      Node{Tensor::scalar(total), Tensor(),
           [logits, targets, row_weights](GradTape& t, std::size_t self) {
             const Tensor& lv = t.nodes_[logits].value;
             const double g = t.nodes_[self].grad[0];
             const std::size_t c = lv.cols();
             Tensor ag(lv.shape());
             for (std::size_t r = 0; r < lv.rows(); ++r) {
               double mx = lv.at(r, 0);
               for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv.at(r, j));
               double denom = 0.0;
               for (std::size_t j = 0; j < c; ++j) denom += std::exp(lv.at(r, j) - mx);
               for (std::size_t j = 0; j < c; ++j) {
                 const double p = std::exp(lv.at(r, j) - mx) / denom;
                 ag.at(r, j) = g * row_weights[r] * (p - (j == targets[r] ? 1.0 : 0.0));
               }
             }
             t.accumulate(logits, ag);
           }});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::cross_entropy_mean(Var logits, const std::vector<std::size_t>& targets) {
  const std::size_t rows = nodes_[logits].value.rows();
  std::vector<double> w(rows, 1.0 / static_cast<double>(rows));
  return cross_entropy_weighted(logits, targets, w);
}

void GradTape::backward(Var output) {
  check(output);
  if (nodes_[output].value.size() != 1)
    throw DimensionError("backward requires a scalar output, got " +
                         nodes_[output].value.shape_str());
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[output].grad = Tensor::scalar(1.0);
  for (std::size_t i = output + 1; i-- > 0;) {
    if (nodes_[i].back && !nodes_[i].grad.empty()) nodes_[i].back(*this, i);
  }
}

Tensor GradTape::grad(Var output, Var wrt) {
  check(wrt);
  backward(output);
  return grad_of(wrt);
}

Tensor GradTape::grad_of(Var wrt) const {
  check(wrt);
  const Node& n = nodes_[wrt];
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

}  // namespace trojanlab
