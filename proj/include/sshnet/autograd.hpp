// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

// Tape-based reverse-mode differentiation over Tensor values. A Graph records
// every operation in creation order; backward() walks the tape in reverse and
// accumulates into node gradients and, for leaves bound to a Parameter, into
// Parameter::grad. Only the primitives the model needs are provided.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "sshnet/tensor.hpp"

namespace sshnet {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid for its graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  /// With `record` false no backward closures are stored (inference).
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`; repeated calls return the same node. backward()
  /// accumulates into p.grad. The parameter must outlive the graph.
  Var param(const Parameter& p);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 for a scalar root and propagates.
  void backward(Var root);

  /// Gradient accumulated at a node during backward (zeros if none reached).
  Tensor grad(Var v) const;

  // Used by op implementations.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;
  Var emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var emit(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient slot of node `id`, allocated on first use; nullptr when the
  /// node does not need a gradient.
  Tensor* grad_slot(std::size_t id);
  Tensor* grad_slot(Var v) { return grad_slot(v.id); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    const Parameter* param = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;

    const Tensor& value() const { return external ? *external : owned; }
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Differentiable operations. Shapes follow the forward kernels in
// numerics.hpp; violations throw DimensionError.
namespace ops {

Var matmul(Var a, Var b);
/// x * w^T; x is [n x in] or [in], w is [out x in].
Var linear(Var x, Var w);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
/// Adds a length-m bias to every row of an [n x m] (or to an [m]) tensor.
Var add_bias(Var x, Var bias);
/// Multiplies row i of an [n x m] tensor by s[i].
Var mul_rows(Var x, Var s);
Var sigmoid(Var x);
Var tanh(Var x);
/// Pairwise cosines between rows of a [n x d] and rows of b [m x d] (an [d]
/// vector counts as one row) -> [n x m]. Degenerate rows give 0 and no gradient.
Var cosine_rows(Var a, Var b);
/// Row-wise exp(lambda*c)/sum exp(lambda*c) of a [n x m] (or [m]) tensor.
Var smoothed_softmax(Var c, double lambda);
Var avg_pool_spatial(Var x);
/// See sshnet::conv2d. `bias` may be a null Var (graph == nullptr).
Var conv2d(Var input, Var kernel, Var bias, std::size_t stride);
Var reshape(Var x, Shape shape);
/// Stacks rank-2 blocks (and rank-1 vectors as single rows) along rows.
Var concat_rows(std::span<const Var> parts);
/// [n x a] ++ [n x b] -> [n x (a+b)].
Var concat_cols(Var a, Var b);
Var sum(Var x);
/// x / |x| for a rank-1 x. A degenerate x yields zeros and no gradient.
Var l2_normalize(Var x);
/// Per column, sort the n values of rows [n x d] descending and return
/// sum_r w[r] * sorted[r]; w has length n. Ties keep the lower row first.
Var rank_weighted_pool(Var rows, Var weights);
/// Resolves a coefficient table [L] to n softmax-normalised weights by linear
/// interpolation of the table at n evenly spaced positions.
Var interpolate_weights(Var table, std::size_t n);
/// Bidirectional hard-negative hinge loss over a [B x B] similarity matrix
/// with positives on the diagonal.
Var triplet_loss(Var sim, double margin);

}  // namespace ops

}  // namespace sshnet
