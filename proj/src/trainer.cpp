// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "qilin/errors.hpp"
#include "qilin/random.hpp"
#include "qilin/render.hpp"

namespace qilin::trainer {

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kCpt:
      return "cpt";
    case Stage::kSft:
      return "sft";
    case Stage::kDpo:
      return "dpo";
  }
  return "?";
}

std::optional<Stage> parse_stage(std::string_view name) {
  if (name == "cpt") return Stage::kCpt;
  if (name == "sft") return Stage::kSft;
  if (name == "dpo") return Stage::kDpo;
  return std::nullopt;
}

data::Schema stage_schema(Stage s) {
  switch (s) {
    case Stage::kCpt:
      return data::Schema::kCpt;
    case Stage::kSft:
      return data::Schema::kSft;
    case Stage::kDpo:
      return data::Schema::kDpo;
  }
  return data::Schema::kCpt;
}

StageConfig StageConfig::defaults(Stage stage) {
  StageConfig c;
  c.stage = stage;
  if (stage == Stage::kCpt) {
    return c;
  }
  c.learning_rate = 2e-5;
  c.warmup_ratio = 0.05;
  c.weight_decay = 0.05;
  c.epochs = 1;
  c.lora = LoraConfig{};
  c.lora.rank = 8;
  c.lora.dropout = 0.05;
  c.lora.alpha = stage == Stage::kDpo ? 16.0 : 32.0;
  return c;
}

void StageConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail("learning_rate must be > 0");
  }
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    fail("warmup_ratio must be in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) {
    fail("weight_decay must be >= 0");
  }
  if (batch_size < 1) {
    fail("batch_size must be >= 1");
  }
  if (!(grad_clip >= 0.0)) {
    fail("grad_clip must be >= 0");
  }
  if (stage == Stage::kCpt) {
    if (block_size < 2) {
      fail("block_size must be >= 2");
    }
  } else {
    if (max_source_length < 2) {
      fail("max_source_length must be >= 2");
    }
    if (max_target_length < 1) {
      fail("max_target_length must be >= 1");
    }
    lora.validate();
  }
  if (stage == Stage::kDpo && !(beta > 0.0)) {
    fail("beta must be > 0");
  }
}

std::size_t warmup_steps(const StageConfig& cfg, std::size_t total_steps) {
  return static_cast<std::size_t>(
      std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps) - 1e-12));
}

double lr_at(const StageConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) {
    throw ConfigError("lr_at: total_steps must be > 0");
  }
  if (step > total_steps) {
    throw InputError("lr_at: step " + std::to_string(step) + " exceeds total " +
                     std::to_string(total_steps));
  }
  const std::size_t warm = warmup_steps(cfg, total_steps);
  if (step >= warm) {
    return cfg.learning_rate;
  }
  return cfg.learning_rate * static_cast<double>(step) /
         static_cast<double>(warm);
}

OptimState make_optim_state(std::span<const model::NamedTensor> params) {
  OptimState s;
  for (const model::NamedTensor& p : params) {
    s.m.emplace_back(p.tensor->shape());
    s.v.emplace_back(p.tensor->shape());
  }
  return s;
}

void optim_step(std::span<const model::NamedTensor> params, OptimState& state,
                double lr, double weight_decay, const AdamWOptions& opts) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("optimizer state has " +
                         std::to_string(state.m.size()) + " buffers for " +
                         std::to_string(params.size()) + " tensors");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& w = *params[i].tensor;
    if (state.m[i].shape() != w.shape() || state.v[i].shape() != w.shape()) {
      throw DimensionError("optimizer state shape mismatch for " +
                           params[i].name);
    }
    if (w.has_grad()) {
      for (double g : w.grad()) {
        if (!std::isfinite(g)) {
          throw EvaluationError("non-finite gradient in tensor " +
                                params[i].name);
        }
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opts.beta1, t);
  const double c2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].tensor;
    std::span<double> wd = w.data();
    std::span<double> m = state.m[i].data();
    std::span<double> v = state.v[i].data();
    const std::span<const double> g =
        w.has_grad() ? std::as_const(w).grad() : std::span<const double>{};
    for (std::size_t j = 0; j < wd.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * gj;
      v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * gj * gj;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      wd[j] -= lr * (m_hat / (std::sqrt(v_hat) + opts.eps) + weight_decay * wd[j]);
    }
  }
}

double clip_grad_norm(std::span<const model::NamedTensor> params,
                      double max_norm) {
  double sq = 0.0;
  for (const model::NamedTensor& p : params) {
    if (!p.tensor->has_grad()) continue;
    for (double g : std::as_const(*p.tensor).grad()) {
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const model::NamedTensor& p : params) {
      if (!p.tensor->has_grad()) continue;
      for (double& g : p.tensor->grad()) {
        g *= s;
      }
    }
  }
  return norm;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = "step,stage,lr,loss\n";
  char buf[128];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g\n", r.step,
                  r.stage.c_str(), r.lr, r.loss);
    out += buf;
  }
  return out;
}

namespace {

void clear_grads(ModelState& s) {
  s.params.set_requires_grad(false);
  for (const model::NamedTensor& t : s.params.named()) {
    t.tensor->clear_grad();
  }
  if (s.adapter) {
    s.adapter->set_requires_grad(false);
    for (const model::NamedTensor& t : s.adapter->named()) {
      t.tensor->clear_grad();
    }
  }
}

// Generic loop: batches of indices in a seeded per-epoch shuffle.
// before_epoch, when set, runs ahead of each epoch's shuffle and must keep
// n_items fixed.
template <typename LossFn>
void train_loop(std::size_t n_items, const StageConfig& cfg,
                std::span<const model::NamedTensor> trainable, Rng& rng,
                LossFn&& batch_loss, StageResult& result,
                const StepCallback& on_step,
                const std::function<void()>& before_epoch = {}) {
  if (cfg.epochs == 0 || n_items == 0) {
    return;
  }
  const std::size_t per_epoch = (n_items + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  OptimState opt = make_optim_state(trainable);
  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (before_epoch) before_epoch();
    rng.shuffle(order);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n_items, lo + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + lo, hi - lo);
      for (const model::NamedTensor& p : trainable) {
        p.tensor->zero_grad();
      }
      autograd::Graph g;
      const autograd::Var loss = batch_loss(g, batch);
      const double loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        throw EvaluationError("non-finite loss at step " +
                              std::to_string(step + 1));
      }
      g.backward(loss);
      clip_grad_norm(trainable, cfg.grad_clip);
      ++step;
      const double lr = lr_at(cfg, step, total);
      optim_step(trainable, opt, lr, cfg.weight_decay);
      MetricsRow row{step, std::string(stage_name(cfg.stage)), lr, loss_value};
      if (on_step) on_step(row);
      result.log.push_back(std::move(row));
    }
  }
  result.state.step = step;
}

// Folds any adapter into the base and attaches a fresh one.
void prepare_adapter_stage(ModelState& s, const StageConfig& cfg) {
  if (s.adapter) {
    s.params = model::merge_lora(s.params, *s.adapter);
    s.adapter.reset();
  }
  clear_grads(s);
  s.adapter = model::attach_lora(s.params, cfg.lora, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  s.adapter->set_requires_grad(true);
}

}  // namespace

StageResult run_stage(const ModelState& initial, const StageConfig& cfg,
                      const data::Dataset& dataset,
                      const StepCallback& on_step) {
  cfg.validate();
  if (dataset.schema != stage_schema(cfg.stage)) {
    throw ConfigError("stage " + std::string(stage_name(cfg.stage)) +
                      " cannot train on a " +
                      std::string(data::schema_name(dataset.schema)) +
                      " dataset");
  }
  initial.params.validate();
  const model::ModelConfig& mc = initial.params.config;
  if (cfg.stage == Stage::kCpt && cfg.block_size - 1 > mc.max_seq_len) {
    throw ConfigError("block_size " + std::to_string(cfg.block_size) +
                      " exceeds max_seq_len + 1 = " +
                      std::to_string(mc.max_seq_len + 1));
  }
  if (cfg.stage != Stage::kCpt &&
      cfg.max_source_length + cfg.max_target_length - 1 > mc.max_seq_len) {
    throw ConfigError("max_source_length + max_target_length - 1 exceeds "
                      "max_seq_len " + std::to_string(mc.max_seq_len));
  }

  StageResult result;
  result.state = initial;
  ModelState& s = result.state;
  s.stage = std::string(stage_name(cfg.stage));
  s.seed = cfg.seed;
  s.step = 0;
  Rng rng(cfg.seed);

  if (cfg.epochs == 0) {
    result.state = initial;
    return result;
  }

  if (cfg.stage == Stage::kCpt) {
    // Documents are reshuffled and repacked every epoch so a passage does
    // not sit at the same absolute positions each time. The block count
    // only depends on the total token count.
    std::vector<std::string> docs = dataset.texts;
    std::vector<data::PackedBlock> blocks =
        data::pack_blocks(docs, s.vocab, cfg.block_size);
    const auto repack = [&] {
      rng.shuffle(docs);
      blocks = data::pack_blocks(docs, s.vocab, cfg.block_size);
    };
    clear_grads(s);
    s.params.set_requires_grad(true);
    const std::vector<model::NamedTensor> trainable = s.params.named();
    model::LoraAdapter* no_adapter = nullptr;
    train_loop(
        blocks.size(), cfg, trainable, rng,
        [&](autograd::Graph& g, std::span<const std::size_t> batch) {
          const model::BoundModel bound(g, s.params, s.adapter ? &*s.adapter : no_adapter);
          const model::ForwardOptions fopts{true, &rng};
          autograd::Var total;
          for (std::size_t i = 0; i < batch.size(); ++i) {
            const autograd::Var l = objectives::cpt_loss(
                bound, blocks[batch[i]], fopts);
            total = i == 0 ? l : autograd::add(total, l);
          }
          return autograd::scale(total, 1.0 / static_cast<double>(batch.size()));
        },
        result, on_step, repack);
    clear_grads(s);
    return result;
  }

  prepare_adapter_stage(s, cfg);
  const data::PromptRenderer renderer(s.vocab, cfg.max_source_length,
                                      cfg.max_target_length);
  const std::vector<model::NamedTensor> trainable = s.adapter->named();

  if (cfg.stage == Stage::kSft) {
    train_loop(
        dataset.sft.size(), cfg, trainable, rng,
        [&](autograd::Graph& g, std::span<const std::size_t> batch) {
          const model::BoundModel bound(g, s.params, &*s.adapter);
          const model::ForwardOptions fopts{true, &rng};
          autograd::Var total;
          for (std::size_t i = 0; i < batch.size(); ++i) {
            const autograd::Var l = objectives::sft_loss(
                bound, dataset.sft[batch[i]], renderer, fopts);
            total = i == 0 ? l : autograd::add(total, l);
          }
          return autograd::scale(total, 1.0 / static_cast<double>(batch.size()));
        },
        result, on_step);
    clear_grads(s);
    return result;
  }

  // dpo: the merged incoming model is the frozen reference.
  ModelParams reference = s.params;
  reference.set_requires_grad(false);
  objectives::DpoConfig dcfg;
  dcfg.beta = cfg.beta;
  dcfg.reference = &reference;
  result.reference_before =
      objectives::reference_logprobs(dcfg, dataset.dpo, renderer);
  train_loop(
      dataset.dpo.size(), cfg, trainable, rng,
      [&](autograd::Graph& g, std::span<const std::size_t> batch) {
        const model::BoundModel bound(g, s.params, &*s.adapter);
        const model::ForwardOptions fopts{true, &rng};
        std::vector<data::PreferencePair> pairs;
        std::vector<objectives::ReferenceLogprobs> cached;
        for (std::size_t i : batch) {
          pairs.push_back(dataset.dpo[i]);
          cached.push_back(result.reference_before[i]);
        }
        return objectives::dpo_loss(bound, dcfg, pairs, renderer, fopts, cached);
      },
      result, on_step);
  result.reference_after =
      objectives::reference_logprobs(dcfg, dataset.dpo, renderer);
  clear_grads(s);
  return result;
}

}  // namespace qilin::trainer
