#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "pama/tensor.hpp"

namespace pama {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Passed to an op's backward closure. Gives access to the upstream gradient,
/// the forward values of the inputs, and accumulation into input gradients.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}

  const Tensor& grad_out() const;
  const Tensor& output() const;
  const Tensor& input(std::size_t k) const;
  bool needs(std::size_t k) const;
  /// Adds `g` to the gradient of input `k`. No-op if that input needs no gradient.
  void accumulate(std::size_t k, const Tensor& g) const;
  /// Mutable gradient buffer for input `k`, zero-initialised on first use.
  Tensor& grad_in(std::size_t k) const;

 private:
  Tape& tape_;
  std::size_t node_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Reverse-mode recording of one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order; backward walks it once in reverse. Graphs are rebuilt
/// for every step: build a fresh Tape (or reset()) per forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding `value`. Gradients are collected only when requires_grad is set.
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op result. The closure is dropped when no input needs a gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Runs reverse accumulation from a 1x1 loss. Throws UsageError otherwise.
  void backward(Var loss);

  /// Gradient of `v` after backward(); a zero tensor of v's shape if none flowed.
  Tensor grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  void reset();

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor grad;  // empty until something is accumulated
  };

  Tensor& grad_buffer(std::size_t id);

  std::deque<Node> nodes_;  // deque: references stay valid while recording
  bool backward_done_ = false;
};

// ---- differentiable ops -------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T without materialising the transpose.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
/// Adds a 1 x cols row vector to every row of `a`. The only broadcast supported.
Var add_row(Var a, Var row);
Var softmax_rows(Var m);
/// Per-row normalisation to zero mean / unit variance, then gamma * x + beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Exact (erf-based) GELU.
Var gelu(Var x);
/// out(i, j) = table[idx(i, j)]; `table` is 1 x v or v x 1.
Var table_lookup(Var table, const IndexMatrix& idx);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Row gather; indices may repeat. Gradient scatter-adds.
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var sum(Var a);
Var mean(Var a);
/// Softmax cross-entropy of a 1 x C logit row against `label`.
Var cross_entropy(Var logits, std::size_t label);

/// x * w1 + b1 -> GELU -> * w2 + b2.
Var mlp_forward(Var x, Var w1, Var b1, Var w2, Var b2);

}  // namespace pama
