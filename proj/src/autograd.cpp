// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "qilin/errors.hpp"

namespace qilin::autograd {
namespace {

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c_row = c + i * n;
    const double* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a_row[p];
      if (av == 0.0) {
        continue;
      }
      const double* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        c_row[j] += av * b_row[j];
      }
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* g_row = g + i * n;
    double* c_row = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b_row = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        acc += g_row[j] * b_row[j];
      }
      c_row[p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    const double* g_row = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a_row[p];
      if (av == 0.0) {
        continue;
      }
      double* c_row = c + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        c_row[j] += av * g_row[j];
      }
    }
  }
}

void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b,
                        std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

Graph& graph_of(const Var& v) {
  if (!v.valid()) {
    throw ContractError("operation on an unbound Var");
  }
  return *v.graph();
}

Graph& graph_of(const Var& a, const Var& b) {
  Graph& g = graph_of(a);
  if (&graph_of(b) != &g) {
    throw ContractError("operands belong to different graphs");
  }
  return g;
}

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kCausalAttention: return "causal_attention";
    case OpKind::kLogSoftmaxGather: return "log_softmax_gather";
    case OpKind::kWeightedSum: return "weighted_sum";
    case OpKind::kSum: return "sum";
    case OpKind::kLogSigmoid: return "log_sigmoid";
    case OpKind::kElementwise: return "elementwise";
    case OpKind::kDropout: return "dropout";
  }
  return "unknown";
}

// --- Var / Graph ------------------------------------------------------------

const Tensor& Var::value() const {
  if (graph_ == nullptr) {
    throw ContractError("value() on an unbound Var");
  }
  return graph_->value(id_);
}

bool Var::requires_grad() const {
  return graph_ != nullptr && graph_->needs_grad(id_);
}

Var Graph::param(Tensor& tensor) {
  Node node;
  node.kind = OpKind::kLeaf;
  node.external = &tensor;
  node.param = &tensor;
  node.needs_grad = tensor.requires_grad();
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::input(const Tensor& tensor) {
  Node node;
  node.kind = OpKind::kLeaf;
  node.external = &tensor;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::constant(Tensor value) {
  Node node;
  node.kind = OpKind::kConstant;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::record(OpKind kind, std::vector<int> inputs, Tensor value,
                  BackwardFn backward) {
  if (consumed_) {
    throw ContractError("recording into a graph after backward()");
  }
  Node node;
  node.kind = kind;
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](int id) {
    return nodes_[index(id)].needs_grad;
  });
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  if (node.needs_grad) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::span<double> Graph::accum(int id) {
  Node& node = nodes_[index(id)];
  if (node.grad.empty()) {
    node.grad.assign(value(id).numel(), 0.0);
  }
  return node.grad;
}

std::span<const double> Graph::grad_of(const Var& v) const {
  return nodes_[index(v.id())].grad;
}

void Graph::backward(const Var& loss) {
  if (loss.graph() != this) {
    throw ContractError("backward() on a Var from another graph");
  }
  if (consumed_) {
    throw ContractError("backward() called twice on the same graph");
  }
  if (loss.value().numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_to_string(loss.value().shape()));
  }
  consumed_ = true;

  for (Node& node : nodes_) {
    if (node.param != nullptr && node.param->requires_grad()) {
      node.param->grad();
    }
  }
  accum(loss.id())[0] = 1.0;

  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[index(id)];
    if (node.grad.empty() || !node.needs_grad) {
      continue;
    }
    if (node.kind == OpKind::kLeaf) {
      std::span<double> target = node.param->grad();
      for (std::size_t i = 0; i < target.size(); ++i) {
        target[i] += node.grad[i];
      }
    } else if (node.backward) {
      node.backward(*this, id);
    }
  }
}

// --- elementwise and shape ops ----------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: incompatible shapes " +
                         shape_to_string(av.shape()) + " and " +
                         shape_to_string(bv.shape()));
  }
  const std::size_t m = av.rows();
  const std::size_t k = av.cols();
  const std::size_t n = bv.cols();
  Tensor out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  const int ia = a.id();
  const int ib = b.id();
  return g.record(OpKind::kMatmul, {ia, ib}, std::move(out),
                  [ia, ib, m, k, n](Graph& gr, int self) {
                    const double* go = gr.out_grad(self).data();
                    if (gr.needs_grad(ia)) {
                      gemm_nt(go, gr.value(ib).data().data(),
                              gr.accum(ia).data(), m, k, n);
                    }
                    if (gr.needs_grad(ib)) {
                      gemm_tn(gr.value(ia).data().data(), go,
                              gr.accum(ib).data(), m, k, n);
                    }
                  });
}

Var add(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] += bv[i];
  }
  const int ia = a.id();
  const int ib = b.id();
  return g.record(OpKind::kAdd, {ia, ib}, std::move(out),
                  [ia, ib](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    for (int id : {ia, ib}) {
                      if (!gr.needs_grad(id)) {
                        continue;
                      }
                      auto acc = gr.accum(id);
                      for (std::size_t i = 0; i < go.size(); ++i) {
                        acc[i] += go[i];
                      }
                    }
                  });
}

Var sub(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] -= bv[i];
  }
  const int ia = a.id();
  const int ib = b.id();
  return g.record(OpKind::kSub, {ia, ib}, std::move(out),
                  [ia, ib](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    if (gr.needs_grad(ia)) {
                      auto acc = gr.accum(ia);
                      for (std::size_t i = 0; i < go.size(); ++i) {
                        acc[i] += go[i];
                      }
                    }
                    if (gr.needs_grad(ib)) {
                      auto acc = gr.accum(ib);
                      for (std::size_t i = 0; i < go.size(); ++i) {
                        acc[i] -= go[i];
                      }
                    }
                  });
}

Var mul(const Var& a, const Var& b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] *= bv[i];
  }
  const int ia = a.id();
  const int ib = b.id();
  return g.record(OpKind::kMul, {ia, ib}, std::move(out),
                  [ia, ib](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    const auto av = gr.value(ia).data();
                    const auto bv2 = gr.value(ib).data();
                    if (gr.needs_grad(ia)) {
                      auto acc = gr.accum(ia);
                      for (std::size_t i = 0; i < go.size(); ++i) {
                        acc[i] += go[i] * bv2[i];
                      }
                    }
                    if (gr.needs_grad(ib)) {
                      auto acc = gr.accum(ib);
                      for (std::size_t i = 0; i < go.size(); ++i) {
                        acc[i] += go[i] * av[i];
                      }
                    }
                  });
}

Var scale(const Var& a, double factor) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) {
    x *= factor;
  }
  const int ia = a.id();
  return g.record(OpKind::kScale, {ia}, std::move(out),
                  [ia, factor](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    auto acc = gr.accum(ia);
                    for (std::size_t i = 0; i < go.size(); ++i) {
                      acc[i] += go[i] * factor;
                    }
                  });
}

Var add_row(const Var& x, const Var& bias) {
  Graph& g = graph_of(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "add_row");
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (bv.numel() != n) {
    throw DimensionError("add_row: bias " + shape_to_string(bv.shape()) +
                         " does not match " + shape_to_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] += bv[j];
    }
  }
  const int ix = x.id();
  const int ib = bias.id();
  return g.record(OpKind::kAddRow, {ix, ib}, std::move(out),
                  [ix, ib, m, n](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    if (gr.needs_grad(ix)) {
                      auto acc = gr.accum(ix);
                      for (std::size_t i = 0; i < go.size(); ++i) {
                        acc[i] += go[i];
                      }
                    }
                    if (gr.needs_grad(ib)) {
                      auto acc = gr.accum(ib);
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) {
                          acc[j] += go[i * n + j];
                        }
                      }
                    }
                  });
}

Var transpose(const Var& a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t m = av.rows();
  const std::size_t n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[j * m + i] = av[i * n + j];
    }
  }
  const int ia = a.id();
  return g.record(OpKind::kTranspose, {ia}, std::move(out),
                  [ia, m, n](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    auto acc = gr.accum(ia);
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < n; ++j) {
                        acc[i * n + j] += go[j * m + i];
                      }
                    }
                  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  require_matrix(av, "slice_cols");
  const std::size_t m = av.rows();
  const std::size_t n = av.cols();
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " +
                         shape_to_string(av.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(i * n + begin),
                w, out.data().begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  const int ia = a.id();
  return g.record(OpKind::kSliceCols, {ia}, std::move(out),
                  [ia, m, n, begin, w](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    auto acc = gr.accum(ia);
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < w; ++j) {
                        acc[i * n + begin + j] += go[i * w + j];
                      }
                    }
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) {
    throw DimensionError("concat_cols: no inputs");
  }
  Graph& g = graph_of(parts[0]);
  const std::size_t m = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::vector<int> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    require_matrix(pv, "concat_cols");
    if (&graph_of(p) != &g || pv.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " +
                           shape_to_string(pv.shape()));
    }
    widths.push_back(pv.cols());
    ids.push_back(p.id());
    total += pv.cols();
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].value().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < widths[p]; ++j) {
        out[i * total + offset + j] = src[i * widths[p] + j];
      }
    }
    offset += widths[p];
  }
  return g.record(
      OpKind::kConcatCols, ids, std::move(out),
      [ids, widths, m, total](Graph& gr, int self) {
        const auto go = gr.out_grad(self);
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (gr.needs_grad(ids[p])) {
            auto acc = gr.accum(ids[p]);
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t j = 0; j < widths[p]; ++j) {
                acc[i * widths[p] + j] += go[i * total + off + j];
              }
            }
          }
          off += widths[p];
        }
      });
}

Var embedding(const Var& table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Tensor& tv = table.value();
  require_matrix(tv, "embedding");
  const std::size_t vocab = tv.rows();
  const std::size_t d = tv.cols();
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor out({rows.size(), d});
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t] < 0 || static_cast<std::size_t>(rows[t]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(rows[t]) +
                       " at position " + std::to_string(t) +
                       " outside [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(rows[t] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  const int it = table.id();
  return g.record(OpKind::kEmbedding, {it}, std::move(out),
                  [it, rows = std::move(rows), d](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    auto acc = gr.accum(it);
                    for (std::size_t t = 0; t < rows.size(); ++t) {
                      const std::size_t base =
                          static_cast<std::size_t>(rows[t]) * d;
                      for (std::size_t j = 0; j < d; ++j) {
                        acc[base + j] += go[t * d + j];
                      }
                    }
                  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const Tensor& xv = x.value();
  require_matrix(xv, "layer_norm");
  const std::size_t m = xv.rows();
  const std::size_t n = xv.cols();
  if (gain.value().numel() != n || bias.value().numel() != n) {
    throw DimensionError("layer_norm: gain/bias length does not match " +
                         shape_to_string(xv.shape()));
  }
  const auto gv = gain.value().data();
  const auto bv = bias.value().data();
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      mu += row[j];
    }
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * r;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  const int ix = x.id();
  const int ig = gain.id();
  const int ib = bias.id();
  return g.record(
      OpKind::kLayerNorm, {ix, ig, ib}, std::move(out),
      [ix, ig, ib, m, n, xhat, inv_std](Graph& gr, int self) {
        const auto go = gr.out_grad(self);
        const auto gv2 = gr.value(ig).data();
        if (gr.needs_grad(ig)) {
          auto acc = gr.accum(ig);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              acc[j] += go[i * n + j] * (*xhat)[i * n + j];
            }
          }
        }
        if (gr.needs_grad(ib)) {
          auto acc = gr.accum(ib);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              acc[j] += go[i * n + j];
            }
          }
        }
        if (gr.needs_grad(ix)) {
          auto acc = gr.accum(ix);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0;
            double mean_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = go[i * n + j] * gv2[j];
              mean_d += dh;
              mean_dh += dh * (*xhat)[i * n + j];
            }
            mean_d *= inv_n;
            mean_dh *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = go[i * n + j] * gv2[j];
              acc[i * n + j] +=
                  (*inv_std)[i] * (dh - mean_d - (*xhat)[i * n + j] * mean_dh);
            }
          }
        }
      });
}

Var gelu(const Var& x) {
  Graph& g = graph_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) {
    const double u = kSqrt2OverPi * (v + kGeluCoeff * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(u));
  }
  const int ix = x.id();
  return g.record(OpKind::kGelu, {ix}, std::move(out),
                  [ix](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    const auto xv = gr.value(ix).data();
                    auto acc = gr.accum(ix);
                    for (std::size_t i = 0; i < go.size(); ++i) {
                      const double v = xv[i];
                      const double u =
                          kSqrt2OverPi * (v + kGeluCoeff * v * v * v);
                      const double t = std::tanh(u);
                      const double du =
                          kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * v * v);
                      const double d =
                          0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                      acc[i] += go[i] * d;
                    }
                  });
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double* dst = out.data().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = std::exp(row[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] /= total;
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " +
                         shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(),
          a.cols(), b.cols());
  return out;
}

Var softmax_rows(const Var& x) {
  Graph& g = graph_of(x);
  Tensor out = softmax_rows(x.value());
  const std::size_t m = out.rows();
  const std::size_t n = out.cols();
  const int ix = x.id();
  return g.record(OpKind::kSoftmaxRows, {ix}, std::move(out),
                  [ix, m, n](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    const auto y = gr.value(self).data();
                    auto acc = gr.accum(ix);
                    for (std::size_t i = 0; i < m; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        dot += go[i * n + j] * y[i * n + j];
                      }
                      for (std::size_t j = 0; j < n; ++j) {
                        acc[i * n + j] += y[i * n + j] * (go[i * n + j] - dot);
                      }
                    }
                  });
}

Var causal_attention(const Var& q, const Var& k, const Var& v,
                     std::size_t n_heads) {
  Graph& g = graph_of(q, k);
  graph_of(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix(qv, "causal_attention");
  require_same_shape(qv, kv, "causal_attention");
  require_same_shape(qv, vv, "causal_attention");
  const std::size_t t_len = qv.rows();
  const std::size_t d = qv.cols();
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(n_heads) +
                         " heads");
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h][i][j] for j <= i; entries above the diagonal stay zero.
  auto probs = std::make_shared<std::vector<double>>(n_heads * t_len * t_len);
  Tensor out({t_len, d});
  const double* qd = qv.data().data();
  const double* kd = kv.data().data();
  const double* vd = vv.data().data();
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < t_len; ++i) {
      double* p = probs->data() + (h * t_len + i) * t_len;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          s += qd[i * d + off + c] * kd[j * d + off + c];
        }
        p[j] = s * inv_sqrt;
        mx = std::max(mx, p[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = std::exp(p[j] - mx);
        total += p[j];
      }
      double* o = out.data().data() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] /= total;
        const double pj = p[j];
        const double* vrow = vd + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) {
          o[c] += pj * vrow[c];
        }
      }
    }
  }

  const int iq = q.id();
  const int ik = k.id();
  const int iv = v.id();
  return g.record(
      OpKind::kCausalAttention, {iq, ik, iv}, std::move(out),
      [iq, ik, iv, t_len, d, dh, n_heads, inv_sqrt, probs](Graph& gr,
                                                           int self) {
        const double* go = gr.out_grad(self).data();
        const double* qd2 = gr.value(iq).data().data();
        const double* kd2 = gr.value(ik).data().data();
        const double* vd2 = gr.value(iv).data().data();
        double* dq = gr.needs_grad(iq) ? gr.accum(iq).data() : nullptr;
        double* dk = gr.needs_grad(ik) ? gr.accum(ik).data() : nullptr;
        double* dv = gr.needs_grad(iv) ? gr.accum(iv).data() : nullptr;
        std::vector<double> dp(t_len);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < t_len; ++i) {
            const double* p = probs->data() + (h * t_len + i) * t_len;
            const double* gi = go + i * d + off;
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
              const double* vrow = vd2 + j * d + off;
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) {
                s += gi[c] * vrow[c];
              }
              dp[j] = s;
              dot += s * p[j];
              if (dv != nullptr) {
                double* dvrow = dv + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) {
                  dvrow[c] += p[j] * gi[c];
                }
              }
            }
            for (std::size_t j = 0; j <= i; ++j) {
              const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
              if (ds == 0.0) {
                continue;
              }
              if (dq != nullptr) {
                const double* krow = kd2 + j * d + off;
                double* dqrow = dq + i * d + off;
                for (std::size_t c = 0; c < dh; ++c) {
                  dqrow[c] += ds * krow[c];
                }
              }
              if (dk != nullptr) {
                const double* qrow = qd2 + i * d + off;
                double* dkrow = dk + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) {
                  dkrow[c] += ds * qrow[c];
                }
              }
            }
          }
        }
      });
}

Var log_softmax_gather(const Var& logits, std::span<const int> targets) {
  Graph& g = graph_of(logits);
  const Tensor& lv = logits.value();
  require_matrix(lv, "log_softmax_gather");
  const std::size_t t_len = lv.rows();
  const std::size_t vocab = lv.cols();
  if (targets.size() != t_len) {
    throw DimensionError("log_softmax_gather: " +
                         std::to_string(targets.size()) + " targets for " +
                         shape_to_string(lv.shape()) + " logits");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<double>>(t_len * vocab);
  Tensor out({t_len});
  for (std::size_t t = 0; t < t_len; ++t) {
    if (tgt[t] < 0 || static_cast<std::size_t>(tgt[t]) >= vocab) {
      throw IndexError("target id " + std::to_string(tgt[t]) +
                       " at position " + std::to_string(t) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    const double* row = lv.data().data() + t * vocab;
    double* p = probs->data() + t * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double total = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      p[j] = std::exp(row[j] - mx);
      total += p[j];
    }
    for (std::size_t j = 0; j < vocab; ++j) {
      p[j] /= total;
    }
    out[t] = row[tgt[t]] - mx - std::log(total);
  }
  const int il = logits.id();
  return g.record(OpKind::kLogSoftmaxGather, {il}, std::move(out),
                  [il, tgt = std::move(tgt), probs, vocab](Graph& gr,
                                                           int self) {
                    const auto go = gr.out_grad(self);
                    auto acc = gr.accum(il);
                    for (std::size_t t = 0; t < tgt.size(); ++t) {
                      if (go[t] == 0.0) {
                        continue;
                      }
                      const double* p = probs->data() + t * vocab;
                      double* a = acc.data() + t * vocab;
                      for (std::size_t j = 0; j < vocab; ++j) {
                        a[j] -= go[t] * p[j];
                      }
                      a[tgt[t]] += go[t];
                    }
                  });
}

Var weighted_sum(const Var& x, std::span<const double> weights) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  if (weights.size() != xv.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for " + shape_to_string(xv.shape()));
  }
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    total += w[i] * xv[i];
  }
  const int ix = x.id();
  return g.record(OpKind::kWeightedSum, {ix}, Tensor::scalar(total),
                  [ix, w = std::move(w)](Graph& gr, int self) {
                    const double go = gr.out_grad(self)[0];
                    auto acc = gr.accum(ix);
                    for (std::size_t i = 0; i < w.size(); ++i) {
                      acc[i] += go * w[i];
                    }
                  });
}

Var sum(const Var& x) {
  Graph& g = graph_of(x);
  double total = 0.0;
  for (double v : x.value().data()) {
    total += v;
  }
  const int ix = x.id();
  return g.record(OpKind::kSum, {ix}, Tensor::scalar(total),
                  [ix](Graph& gr, int self) {
                    const double go = gr.out_grad(self)[0];
                    for (double& a : gr.accum(ix)) {
                      a += go;
                    }
                  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().numel());
  return scale(sum(x), 1.0 / n);
}

Var log_sigmoid(const Var& x) {
  Graph& g = graph_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) {
    // -softplus(-v), stable for large |v|.
    v = -(std::max(-v, 0.0) + std::log1p(std::exp(-std::abs(v))));
  }
  const int ix = x.id();
  return g.record(OpKind::kLogSigmoid, {ix}, std::move(out),
                  [ix](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    const auto xv = gr.value(ix).data();
                    auto acc = gr.accum(ix);
                    for (std::size_t i = 0; i < go.size(); ++i) {
                      // d/dx log sigma(x) = sigma(-x)
                      const double s = xv[i] >= 0.0
                                           ? std::exp(-xv[i]) / (1.0 + std::exp(-xv[i]))
                                           : 1.0 / (1.0 + std::exp(xv[i]));
                      acc[i] += go[i] * s;
                    }
                  });
}

Var map(const Var& x, std::function<double(double)> f,
        std::function<double(double)> df) {
  Graph& g = graph_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) {
    v = f(v);
  }
  const int ix = x.id();
  return g.record(OpKind::kElementwise, {ix}, std::move(out),
                  [ix, df = std::move(df)](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    const auto xv = gr.value(ix).data();
                    auto acc = gr.accum(ix);
                    for (std::size_t i = 0; i < go.size(); ++i) {
                      acc[i] += go[i] * df(xv[i]);
                    }
                  });
}

Var dropout(const Var& x, double p, Rng& rng) {
  if (p <= 0.0) {
    return x;
  }
  if (p >= 1.0) {
    throw ConfigError("dropout rate must be < 1, got " + std::to_string(p));
  }
  Graph& g = graph_of(x);
  Tensor out = x.value();
  std::vector<double> mask(out.numel());
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : 0.0;
    out[i] *= mask[i];
  }
  const int ix = x.id();
  return g.record(OpKind::kDropout, {ix}, std::move(out),
                  [ix, mask = std::move(mask)](Graph& gr, int self) {
                    const auto go = gr.out_grad(self);
                    auto acc = gr.accum(ix);
                    for (std::size_t i = 0; i < go.size(); ++i) {
                      acc[i] += go[i] * mask[i];
                    }
                  });
}

Var cross_entropy_next_token(const Var& logits, std::span<const int> targets) {
  if (targets.empty()) {
    throw InputError("cross_entropy_next_token: no targets");
  }
  Var lp = log_softmax_gather(logits, targets);
  const std::vector<double> w(targets.size(),
                              -1.0 / static_cast<double>(targets.size()));
  return weighted_sum(lp, w);
}

}  // namespace qilin::autograd
