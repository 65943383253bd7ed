#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "epifusion/tensor.hpp"

namespace epifusion {

// Reverse-mode tape. One tape per forward/backward pass; tapes are cheap and
// never shared across threads, so parallel training builds one tape per
// sample and merges leaf gradients afterwards in a fixed order.
class Tape {
 public:
  struct Node {
    Tensor val;
    Tensor grad;  // allocated on demand during backward
    bool requires_grad = false;
    std::function<void(Tape&, Node&)> backfn;  // pulls grad into parents

    Tensor& ensure_grad() {
      if (grad.shape.empty() && !val.shape.empty()) grad = Tensor::zeros(val.shape);
      return grad;
    }
  };
  using Var = Node*;

  // Leaves. Parameters copy the tensor so the shared master weights stay
  // read-only while worker tapes run.
  Var leaf(Tensor v, bool requires_grad = false);
  Var constant(Tensor v) { return leaf(std::move(v), false); }
  Var param(const Tensor& v) { return leaf(v, true); }

  // --- elementwise / scalar ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var relu(Var a);
  Var square(Var a);
  Var add_rowvec(Var a, Var bias);  // a: n x d, bias: {d}

  // --- matrix ---
  Var matmul(Var a, Var b);     // (m x k) (k x n)
  Var matmul_nt(Var a, Var b);  // a * b^T, b: n x k
  Var transpose(Var a);
  Var reshape(Var a, std::vector<int> shape);
  Var slice_cols(Var a, int c0, int c1);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var a, int r0, int r1);
  Var concat_rows(const std::vector<Var>& parts);

  // --- reductions / activations ---
  Var sum_all(Var a);   // -> {1}
  Var mean_all(Var a);  // -> {1}
  // Row-wise softmax; optional additive mask (no gradient through it).
  Var softmax_rows(Var a, const Tensor* add_mask = nullptr);
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

  // --- convolutions for the prediction head ---
  // Transposed 4x4 stride-2 pad-1 convolution: x {Cin,H,W}, w {Cin,Cout,4,4},
  // b {Cout} -> {Cout,2H,2W}.
  Var conv_transpose2d_s2k4(Var x, Var w, Var b);
  // 1x1 convolution: x {Cin,H,W}, w {Cout,Cin}, b {Cout} -> {Cout,H,W}.
  Var conv1x1(Var x, Var w, Var b);

  // Reverse accumulation from a scalar root. Throws NonFinite if any
  // produced gradient is not finite.
  void backward(Var root);

  size_t size() const { return nodes_.size(); }

 private:
  Var make(Tensor val, bool requires_grad, std::function<void(Tape&, Node&)> backfn);
  std::deque<Node> nodes_;
};

using Var = Tape::Var;

}  // namespace epifusion
