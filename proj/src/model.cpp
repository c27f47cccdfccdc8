// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qilin/errors.hpp"

namespace qilin::model {
namespace {

constexpr double kInitStd = 0.02;

const std::vector<std::string>& projection_kinds() {
  static const std::vector<std::string> kinds = {"wq", "wk", "wv",
                                                 "wo", "w1", "w2"};
  return kinds;
}

std::string projection_name(std::size_t layer, const std::string& kind) {
  const bool attn = kind[1] != '1' && kind[1] != '2';
  return "layers." + std::to_string(layer) + (attn ? ".attn." : ".mlp.") + kind;
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (double& x : t.data()) {
    x = rng.normal() * stddev;
  }
}

void fill_value(Tensor& t, double value) {
  std::fill(t.data().begin(), t.data().end(), value);
}

template <typename Params, typename Named>
std::vector<Named> collect(Params& p) {
  std::vector<Named> out;
  out.push_back({"tok_emb", &p.token_embedding});
  out.push_back({"pos_emb", &p.position_embedding});
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layers." + std::to_string(i) + ".";
    out.push_back({pre + "ln1_gain", &l.ln1_gain});
    out.push_back({pre + "ln1_bias", &l.ln1_bias});
    out.push_back({pre + "attn.wq", &l.wq});
    out.push_back({pre + "attn.wk", &l.wk});
    out.push_back({pre + "attn.wv", &l.wv});
    out.push_back({pre + "attn.wo", &l.wo});
    out.push_back({pre + "ln2_gain", &l.ln2_gain});
    out.push_back({pre + "ln2_bias", &l.ln2_bias});
    out.push_back({pre + "mlp.w1", &l.w1});
    out.push_back({pre + "mlp.b1", &l.b1});
    out.push_back({pre + "mlp.w2", &l.w2});
    out.push_back({pre + "mlp.b2", &l.b2});
  }
  out.push_back({"final_gain", &p.final_gain});
  out.push_back({"final_bias", &p.final_bias});
  out.push_back({"head.weight", &p.head_weight});
  out.push_back({"head.bias", &p.head_bias});
  return out;
}

Var leaf(Graph& g, Tensor& t) { return g.param(t); }
Var leaf(Graph& g, const Tensor& t) { return g.input(t); }

}  // namespace

// --- config -------------------------------------------------------------

ModelConfig ModelConfig::desk(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::large(std::size_t vocab_size) {
  ModelConfig c = desk(vocab_size);
  c.max_seq_len = 1024;
  return c;
}

void ModelConfig::validate() const {
  if (vocab_size < 5) {
    throw ConfigError("model.vocab_size must cover the 4 specials and at "
                      "least one character");
  }
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || ffn_mult == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be divisible by model.n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (max_seq_len < 2) {
    throw ConfigError("model.max_seq_len must be >= 2");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("model.dropout must be in [0, 1)");
  }
}

// --- params ---------------------------------------------------------------

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  const std::size_t f = config.d_ff();
  ModelParams p;
  p.config = config;
  p.token_embedding = Tensor({config.vocab_size, d});
  p.position_embedding = Tensor({config.max_seq_len, d});
  p.layers.resize(config.n_layers);
  for (LayerParams& l : p.layers) {
    l.ln1_gain = Tensor({d});
    l.ln1_bias = Tensor({d});
    l.wq = Tensor({d, d});
    l.wk = Tensor({d, d});
    l.wv = Tensor({d, d});
    l.wo = Tensor({d, d});
    l.ln2_gain = Tensor({d});
    l.ln2_bias = Tensor({d});
    l.w1 = Tensor({d, f});
    l.b1 = Tensor({f});
    l.w2 = Tensor({f, d});
    l.b2 = Tensor({d});
  }
  p.final_gain = Tensor({d});
  p.final_bias = Tensor({d});
  p.head_weight = Tensor({d, config.vocab_size});
  p.head_bias = Tensor({config.vocab_size});
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zeros(config);
  Rng rng(seed);
  fill_normal(p.token_embedding, rng, kInitStd);
  fill_normal(p.position_embedding, rng, kInitStd);
  for (LayerParams& l : p.layers) {
    fill_value(l.ln1_gain, 1.0);
    fill_normal(l.wq, rng, kInitStd);
    fill_normal(l.wk, rng, kInitStd);
    fill_normal(l.wv, rng, kInitStd);
    fill_normal(l.wo, rng, kInitStd);
    fill_value(l.ln2_gain, 1.0);
    fill_normal(l.w1, rng, kInitStd);
    fill_normal(l.w2, rng, kInitStd);
  }
  fill_value(p.final_gain, 1.0);
  fill_normal(p.head_weight, rng, kInitStd);
  return p;
}

std::vector<NamedTensor> ModelParams::named() {
  return collect<ModelParams, NamedTensor>(*this);
}

std::vector<ConstNamedTensor> ModelParams::named() const {
  return collect<const ModelParams, ConstNamedTensor>(*this);
}

Tensor* ModelParams::find(const std::string& name) {
  for (const NamedTensor& nt : named()) {
    if (nt.name == name) {
      return nt.tensor;
    }
  }
  return nullptr;
}

const Tensor* ModelParams::find(const std::string& name) const {
  for (const ConstNamedTensor& nt : named()) {
    if (nt.name == name) {
      return nt.tensor;
    }
  }
  return nullptr;
}

void ModelParams::set_requires_grad(bool value) {
  for (const NamedTensor& nt : named()) {
    nt.tensor->set_requires_grad(value);
  }
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const ConstNamedTensor& nt : named()) {
    n += nt.tensor->numel();
  }
  return n;
}

void ModelParams::validate() const {
  config.validate();
  const ModelParams reference = zeros(config);
  const auto mine = named();
  const auto expected = reference.named();
  if (mine.size() != expected.size()) {
    throw ConfigError("parameter set does not match n_layers");
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].tensor->shape() != expected[i].tensor->shape()) {
      throw ConfigError("parameter " + mine[i].name + " has shape " +
                        autograd::shape_to_string(mine[i].tensor->shape()) +
                        ", expected " +
                        autograd::shape_to_string(expected[i].tensor->shape()));
    }
    if (!mine[i].tensor->all_finite()) {
      throw ConfigError("parameter " + mine[i].name + " is not finite");
    }
  }
}

// --- LoRA -------------------------------------------------------------------

void LoraConfig::validate() const {
  if (rank == 0) {
    throw ConfigError("lora.rank must be positive");
  }
  if (!(alpha > 0.0)) {
    throw ConfigError("lora.alpha must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("lora.dropout must be in [0, 1)");
  }
  if (targets.empty()) {
    throw ConfigError("lora.targets must not be empty");
  }
  for (const std::string& t : targets) {
    const auto& kinds = projection_kinds();
    if (t != "head" && std::find(kinds.begin(), kinds.end(), t) == kinds.end()) {
      throw ConfigError("unknown lora target '" + t +
                        "' (expected one of wq, wk, wv, wo, w1, w2, head)");
    }
  }
}

std::vector<NamedTensor> LoraAdapter::named() {
  std::vector<NamedTensor> out;
  for (auto& [name, pair] : pairs) {
    out.push_back({name + ".lora_a", &pair.a});
    out.push_back({name + ".lora_b", &pair.b});
  }
  return out;
}

std::vector<ConstNamedTensor> LoraAdapter::named() const {
  std::vector<ConstNamedTensor> out;
  for (const auto& [name, pair] : pairs) {
    out.push_back({name + ".lora_a", &pair.a});
    out.push_back({name + ".lora_b", &pair.b});
  }
  return out;
}

void LoraAdapter::set_requires_grad(bool value) {
  for (const NamedTensor& nt : named()) {
    nt.tensor->set_requires_grad(value);
  }
}

LoraAdapter attach_lora(const ModelParams& params, const LoraConfig& config,
                        std::uint64_t seed) {
  config.validate();
  LoraAdapter adapter;
  adapter.config = config;
  Rng rng(seed);
  for (std::size_t layer = 0; layer < params.layers.size(); ++layer) {
    for (const std::string& kind : projection_kinds()) {
      if (std::find(config.targets.begin(), config.targets.end(), kind) ==
          config.targets.end()) {
        continue;
      }
      const std::string name = projection_name(layer, kind);
      const Tensor* w = params.find(name);
      if (w == nullptr) {
        throw ConfigError("lora target " + name + " not found");
      }
      LoraPair pair;
      pair.a = Tensor({w->rows(), config.rank});
      pair.b = Tensor({config.rank, w->cols()});
      fill_normal(pair.a, rng, 1.0 / std::sqrt(static_cast<double>(w->rows())));
      adapter.pairs.emplace(name, std::move(pair));
    }
  }
  if (std::find(config.targets.begin(), config.targets.end(), "head") !=
      config.targets.end()) {
    LoraPair pair;
    pair.a = Tensor({params.head_weight.rows(), config.rank});
    pair.b = Tensor({config.rank, params.head_weight.cols()});
    fill_normal(pair.a, rng,
                1.0 / std::sqrt(static_cast<double>(params.head_weight.rows())));
    adapter.pairs.emplace("head.weight", std::move(pair));
  }
  return adapter;
}

ModelParams merge_lora(const ModelParams& params, const LoraAdapter& adapter) {
  ModelParams merged = params;
  const double s = adapter.scaling();
  for (const auto& [name, pair] : adapter.pairs) {
    Tensor* w = merged.find(name);
    if (w == nullptr) {
      throw ConfigError("lora target " + name + " not found in model");
    }
    const Tensor delta = autograd::matmul(pair.a, pair.b);
    if (delta.shape() != w->shape()) {
      throw DimensionError("lora delta for " + name + " has shape " +
                           autograd::shape_to_string(delta.shape()));
    }
    for (std::size_t i = 0; i < w->numel(); ++i) {
      (*w)[i] += s * delta[i];
    }
  }
  for (NamedTensor& nt : merged.named()) {
    nt.tensor->clear_grad();
    nt.tensor->set_requires_grad(false);
  }
  return merged;
}

// --- forward ----------------------------------------------------------------

BoundModel::BoundModel(Graph& graph, ModelParams& params, LoraAdapter* adapter)
    : graph_(&graph), config_(params.config) {
  bind(params, adapter);
}

BoundModel::BoundModel(Graph& graph, const ModelParams& params,
                       const LoraAdapter* adapter)
    : graph_(&graph), config_(params.config) {
  bind(params, adapter);
}

template <typename P, typename A>
void BoundModel::bind(P& params, A* adapter) {
  Graph& g = *graph_;
  token_embedding_ = leaf(g, params.token_embedding);
  position_embedding_ = leaf(g, params.position_embedding);
  for (auto& l : params.layers) {
    layers_.push_back({leaf(g, l.ln1_gain), leaf(g, l.ln1_bias), leaf(g, l.wq),
                       leaf(g, l.wk), leaf(g, l.wv), leaf(g, l.wo),
                       leaf(g, l.ln2_gain), leaf(g, l.ln2_bias), leaf(g, l.w1),
                       leaf(g, l.b1), leaf(g, l.w2), leaf(g, l.b2)});
  }
  final_gain_ = leaf(g, params.final_gain);
  final_bias_ = leaf(g, params.final_bias);
  head_weight_ = leaf(g, params.head_weight);
  head_bias_ = leaf(g, params.head_bias);
  if (adapter != nullptr) {
    lora_scaling_ = adapter->scaling();
    lora_dropout_ = adapter->config.dropout;
    for (auto& [name, pair] : adapter->pairs) {
      lora_.emplace(name, LoraVars{leaf(g, pair.a), leaf(g, pair.b)});
    }
  }
}

Var BoundModel::project(const Var& x, const Var& weight,
                        const std::string& name,
                        const ForwardOptions& options) const {
  Var out = autograd::matmul(x, weight);
  const auto it = lora_.find(name);
  if (it == lora_.end()) {
    return out;
  }
  Var xin = x;
  if (options.training && lora_dropout_ > 0.0) {
    xin = autograd::dropout(x, lora_dropout_, *options.rng);
  }
  Var delta = autograd::matmul(autograd::matmul(xin, it->second.a),
                               it->second.b);
  return autograd::add(out, autograd::scale(delta, lora_scaling_));
}

Var BoundModel::forward(std::span<const int> tokens,
                        const ForwardOptions& options) const {
  if (tokens.empty()) {
    throw InputError("forward: empty token sequence");
  }
  if (tokens.size() > config_.max_seq_len) {
    throw LengthError("forward: sequence length " +
                      std::to_string(tokens.size()) + " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
  }
  if (options.training && options.rng == nullptr) {
    throw ContractError("forward: training mode requires an rng");
  }
  const double p_drop = options.training ? config_.dropout : 0.0;

  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  Var x = autograd::add(autograd::embedding(token_embedding_, tokens),
                        autograd::embedding(position_embedding_, positions));

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerVars& l = layers_[i];
    const std::string pre = "layers." + std::to_string(i);
    Var h = autograd::layer_norm(x, l.ln1_gain, l.ln1_bias);
    Var q = project(h, l.wq, pre + ".attn.wq", options);
    Var k = project(h, l.wk, pre + ".attn.wk", options);
    Var v = project(h, l.wv, pre + ".attn.wv", options);
    Var attn = autograd::causal_attention(q, k, v, config_.n_heads);
    Var o = project(attn, l.wo, pre + ".attn.wo", options);
    if (p_drop > 0.0) {
      o = autograd::dropout(o, p_drop, *options.rng);
    }
    x = autograd::add(x, o);

    Var h2 = autograd::layer_norm(x, l.ln2_gain, l.ln2_bias);
    Var f = autograd::gelu(
        autograd::add_row(project(h2, l.w1, pre + ".mlp.w1", options), l.b1));
    f = autograd::add_row(project(f, l.w2, pre + ".mlp.w2", options), l.b2);
    if (p_drop > 0.0) {
      f = autograd::dropout(f, p_drop, *options.rng);
    }
    x = autograd::add(x, f);
  }
  x = autograd::layer_norm(x, final_gain_, final_bias_);
  return autograd::add_row(project(x, head_weight_, "head.weight", options),
                           head_bias_);
}

Tensor forward_logits(const ModelParams& params, const LoraAdapter* adapter,
                      std::span<const int> tokens) {
  Graph g;
  const BoundModel bound(g, params, adapter);
  return bound.forward(tokens).value();
}

std::vector<int> generate_greedy(const ModelParams& params,
                                 const LoraAdapter* adapter,
                                 std::span<const int> prompt,
                                 std::size_t max_new, int stop_id) {
  if (prompt.empty()) {
    throw InputError("generate: empty prompt");
  }
  if (prompt.size() > params.config.max_seq_len) {
    throw LengthError("generate: prompt length " +
                      std::to_string(prompt.size()) + " exceeds max_seq_len " +
                      std::to_string(params.config.max_seq_len));
  }
  std::vector<int> context(prompt.begin(), prompt.end());
  std::vector<int> generated;
  while (generated.size() < max_new &&
         context.size() <= params.config.max_seq_len) {
    const Tensor logits = forward_logits(params, adapter, context);
    const std::size_t vocab = logits.cols();
    const double* last = logits.data().data() + (logits.rows() - 1) * vocab;
    std::size_t best = 0;
    for (std::size_t j = 1; j < vocab; ++j) {
      if (last[j] > last[best]) {
        best = j;
      }
    }
    const int id = static_cast<int>(best);
    generated.push_back(id);
    context.push_back(id);
    if (id == stop_id) {
      break;
    }
  }
  return generated;
}

}  // namespace qilin::model
