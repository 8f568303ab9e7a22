#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "trojanlab/tensor.hpp"

namespace trojanlab {

// Reverse-mode gradient tape. Every op records its inputs and a backward
// closure; grad() replays the tape once and returns exact gradients of a
// scalar output with respect to any recorded tensor.
class GradTape {
 public:
  using Var = std::size_t;

  Var leaf(Tensor value);

  const Tensor& value(Var v) const;

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);               // same shape
  Var add_row(Var m, Var bias);        // [BxN] + [1xN], broadcast over rows
  Var relu(Var a);                     // subgradient at 0 is 0
  Var scale(Var a, double c);
  Var concat_cols(Var a, Var b);       // [BxN] ++ [BxM] -> [Bx(N+M)]
  Var pick(Var a, std::size_t index);  // flat element -> scalar

  // (target - a)^2 for a scalar a.
  Var squared_error_to(Var a, double target);

  // Mean over elements of (a - target)^2; target is a constant.
  Var mse(Var a, const Tensor& target);

  // -log softmax(logits[r])[targets[r]] summed with per-row weights.
  // logits is [BxC]; targets[r] must be < C.
  Var cross_entropy_weighted(Var logits, const std::vector<std::size_t>& targets,
                             const std::vector<double>& row_weights);

  // Mean cross entropy over rows.
  Var cross_entropy_mean(Var logits, const std::vector<std::size_t>& targets);

  // Backward pass from a scalar output; gradients of earlier grad() calls
  // are discarded. Returns the gradient for `wrt`, same shape as its value.
  Tensor grad(Var output, Var wrt);

  // Gradient of `wrt` from the most recent grad()/backward() pass.
  Tensor grad_of(Var wrt) const;

  void backward(Var output);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(GradTape&, std::size_t)> back;  // null for leaves
  };

  void check(Var v) const;
  void accumulate(Var v, const Tensor& g);

  std::vector<Node> nodes_;
};

}  // namespace trojanlab
