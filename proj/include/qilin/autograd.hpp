// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over dense tensors.
//
// A Graph records one node per operation in execution order, so the node
// sequence is already topologically sorted. backward() walks it once in
// reverse. Graphs are meant to live for a single forward/backward pass.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "qilin/random.hpp"
#include "qilin/tensor.hpp"

namespace qilin::autograd {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRow,
  kTranspose,
  kSliceCols,
  kConcatCols,
  kEmbedding,
  kLayerNorm,
  kGelu,
  kSoftmaxRows,
  kCausalAttention,
  kLogSoftmaxGather,
  kWeightedSum,
  kSum,
  kLogSigmoid,
  kElementwise,
  kDropout,
};

std::string_view op_name(OpKind kind);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf referencing an external tensor, which must outlive the graph. When
  // the tensor requires grad, backward() accumulates into its gradient.
  Var param(Tensor& tensor);
  // Non-differentiable leaf referencing an external tensor.
  Var input(const Tensor& tensor);
  Var constant(Tensor value);

  // Appends a node. Op implementations call this; the node needs a gradient
  // when any input does.
  Var record(OpKind kind, std::vector<int> inputs, Tensor value,
             BackwardFn backward);

  // Populates gradients of every requires-grad leaf, allocating zero buffers
  // for leaves the loss does not depend on. Consumes the graph.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(int id) const { return nodes_[index(id)].kind; }
  std::span<const int> inputs(int id) const { return nodes_[index(id)].inputs; }
  const Tensor& value(int id) const {
    const Node& node = nodes_[index(id)];
    return node.external != nullptr ? *node.external : node.value;
  }
  bool needs_grad(int id) const { return nodes_[index(id)].needs_grad; }

  // Gradient of the loss with respect to a node, valid after backward().
  // Empty when the node is not on a path to the loss.
  std::span<const double> grad_of(const Var& v) const;

  // Helpers for backward functions.
  std::span<const double> out_grad(int id) const { return nodes_[index(id)].grad; }
  std::span<double> accum(int id);

 private:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<int> inputs;
    Tensor value;
    std::vector<double> grad;
    const Tensor* external = nullptr;
    Tensor* param = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  std::size_t index(int id) const { return static_cast<std::size_t>(id); }

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// --- operations -----------------------------------------------------------

// a[m x k] * b[k x n].
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
// Elementwise product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
// x[m x n] + bias[n] broadcast over rows.
Var add_row(const Var& x, const Var& bias);
Var transpose(const Var& a);
// Columns [begin, end) of a matrix.
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
// Rows of table[V x d] selected by ids.
Var embedding(const Var& table, std::span<const int> ids);
// Row-wise normalisation with learned gain and bias of length n.
Var layer_norm(const Var& x, const Var& gain, const Var& bias,
               double eps = 1e-5);
// Tanh approximation of GELU.
Var gelu(const Var& x);
Var softmax_rows(const Var& x);
// Multi-head scaled dot-product attention with a causal mask. q, k, v are
// [T x d]; head h uses columns [h*d/heads, (h+1)*d/heads).
Var causal_attention(const Var& q, const Var& k, const Var& v,
                     std::size_t n_heads);
// log softmax(logits[t])[targets[t]] for each row t. Result has shape [T].
Var log_softmax_gather(const Var& logits, std::span<const int> targets);
// sum_i weights[i] * x[i] over the flattened tensor.
Var weighted_sum(const Var& x, std::span<const double> weights);
Var sum(const Var& x);
Var mean(const Var& x);
Var log_sigmoid(const Var& x);
// Elementwise f with caller-supplied derivative df.
Var map(const Var& x, std::function<double(double)> f,
        std::function<double(double)> df);
// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, double p, Rng& rng);

// Mean over rows of -log softmax(logits[t])[targets[t]].
Var cross_entropy_next_token(const Var& logits, std::span<const int> targets);

// Graph-free helpers.
Tensor softmax_rows(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace qilin::autograd
