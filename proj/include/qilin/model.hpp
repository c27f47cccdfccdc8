// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Compact pre-norm decoder-only transformer with learned absolute position
// embeddings, optional low-rank adapters, and greedy decoding.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qilin/autograd.hpp"
#include "qilin/random.hpp"

namespace qilin::model {

using autograd::Graph;
using autograd::Tensor;
using autograd::Var;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 256;
  double dropout = 0.0;
  // Hidden width of the feed-forward block, as a multiple of d_model.
  std::size_t ffn_mult = 4;

  // Desk defaults; the large profile keeps a 1024-token context.
  static ModelConfig desk(std::size_t vocab_size);
  static ModelConfig large(std::size_t vocab_size);

  std::size_t d_ff() const { return d_model * ffn_mult; }
  // Throws ConfigError listing the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor ln1_gain;
  Tensor ln1_bias;
  Tensor wq;
  Tensor wk;
  Tensor wv;
  Tensor wo;
  Tensor ln2_gain;
  Tensor ln2_bias;
  Tensor w1;
  Tensor b1;
  Tensor w2;
  Tensor b2;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

struct ModelParams {
  ModelConfig config;
  Tensor token_embedding;
  Tensor position_embedding;
  std::vector<LayerParams> layers;
  Tensor final_gain;
  Tensor final_bias;
  Tensor head_weight;
  Tensor head_bias;

  // Zero tensors shaped for config.
  static ModelParams zeros(const ModelConfig& config);
  // N(0, 0.02) matrices, unit gains, zero biases.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Stable, ordered names: tok_emb, pos_emb, layers.{i}.{ln1_gain, ...,
  // attn.wq, attn.wk, attn.wv, attn.wo, ..., mlp.w1, ...}, final_gain,
  // final_bias, head.weight, head.bias.
  std::vector<NamedTensor> named();
  std::vector<ConstNamedTensor> named() const;
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;

  void set_requires_grad(bool value);
  std::size_t parameter_count() const;
  // Throws ConfigError when a tensor shape disagrees with config.
  void validate() const;
};

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 32.0;
  double dropout = 0.05;
  // Projection kinds: any of wq, wk, wv, wo, w1, w2, plus head for the
  // output projection.
  std::vector<std::string> targets = {"wq", "wv"};

  void validate() const;
  bool operator==(const LoraConfig&) const = default;
};

struct LoraPair {
  Tensor a;  // d_in x rank
  Tensor b;  // rank x d_out
};

struct LoraAdapter {
  LoraConfig config;
  // Keyed by the full projection name, e.g. "layers.0.attn.wq".
  std::map<std::string, LoraPair> pairs;

  double scaling() const {
    return config.alpha / static_cast<double>(config.rank);
  }
  // Names of the form "<target>.lora_a" and "<target>.lora_b".
  std::vector<NamedTensor> named();
  std::vector<ConstNamedTensor> named() const;
  void set_requires_grad(bool value);
};

// A with N(0, 1/d_in) entries, B all zeros. Throws ConfigError on an
// unknown target kind.
LoraAdapter attach_lora(const ModelParams& params, const LoraConfig& config,
                        std::uint64_t seed);
// W + (alpha / rank) * A * B folded into every target.
ModelParams merge_lora(const ModelParams& params, const LoraAdapter& adapter);

struct ForwardOptions {
  // Enables model and adapter dropout; requires rng.
  bool training = false;
  Rng* rng = nullptr;
};

// Graph leaves for one model (and optional adapter). Mutable params become
// differentiable leaves when they require grad; const params are inputs.
class BoundModel {
 public:
  BoundModel(Graph& graph, ModelParams& params, LoraAdapter* adapter);
  BoundModel(Graph& graph, const ModelParams& params,
             const LoraAdapter* adapter);

  // Logits [T x V] for tokens. Throws LengthError when T exceeds
  // max_seq_len and InputError when T is zero.
  Var forward(std::span<const int> tokens,
              const ForwardOptions& options = {}) const;

  Graph& graph() const { return *graph_; }
  const ModelConfig& config() const { return config_; }

 private:
  struct LayerVars {
    Var ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };
  struct LoraVars {
    Var a;
    Var b;
  };

  template <typename P, typename A>
  void bind(P& params, A* adapter);
  Var project(const Var& x, const Var& weight, const std::string& name,
              const ForwardOptions& options) const;

  Graph* graph_;
  ModelConfig config_;
  Var token_embedding_, position_embedding_, final_gain_, final_bias_,
      head_weight_, head_bias_;
  std::vector<LayerVars> layers_;
  std::map<std::string, LoraVars> lora_;
  double lora_scaling_ = 0.0;
  double lora_dropout_ = 0.0;
};

// Evaluation-mode logits without building a persistent graph.
Tensor forward_logits(const ModelParams& params, const LoraAdapter* adapter,
                      std::span<const int> tokens);

// Greedy continuation of prompt. Each step takes the argmax logit with ties
// broken toward the lowest id. Stops after emitting stop_id (included in the
// result), after max_new tokens, or when the context is full. Throws
// InputError on an empty prompt and LengthError when the prompt alone
// exceeds the context.
std::vector<int> generate_greedy(const ModelParams& params,
                                 const LoraAdapter* adapter,
                                 std::span<const int> prompt,
                                 std::size_t max_new, int stop_id);

}  // namespace qilin::model
