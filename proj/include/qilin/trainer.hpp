// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stage loop for continued pre-training, supervised fine-tuning and
// preference optimization, with AdamW and a warmup schedule.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qilin/data.hpp"
#include "qilin/model.hpp"
#include "qilin/objectives.hpp"
#include "qilin/vocab.hpp"

namespace qilin::trainer {

using autograd::Tensor;
using model::LoraAdapter;
using model::LoraConfig;
using model::ModelParams;

enum class Stage { kCpt, kSft, kDpo };

std::string_view stage_name(Stage s);
std::optional<Stage> parse_stage(std::string_view name);
data::Schema stage_schema(Stage s);

struct StageConfig {
  Stage stage = Stage::kCpt;
  double learning_rate = 2e-4;
  double warmup_ratio = 0.05;
  double weight_decay = 0.01;
  std::size_t epochs = 3;
  std::size_t batch_size = 1;
  std::size_t block_size = 256;         // cpt
  std::size_t max_source_length = 256;  // sft, dpo
  std::size_t max_target_length = 256;  // sft, dpo
  LoraConfig lora;                      // sft, dpo
  double beta = 0.1;                    // dpo
  double grad_clip = 1.0;               // global norm; 0 disables
  std::uint64_t seed = 0;

  // cpt: 2e-4 / 0.05 / 0.01, 3 epochs. sft: 2e-5 / 0.05 / 0.05, LoRA
  // rank 8 alpha 32 dropout 0.05, 1 epoch. dpo: as sft with alpha 16.
  static StageConfig defaults(Stage stage);
  // Throws ConfigError naming the first violated invariant.
  void validate() const;
};

std::size_t warmup_steps(const StageConfig& cfg, std::size_t total_steps);
// Linear ramp from 0 at step 0 to learning_rate at warmup_steps, constant
// afterwards. Throws ConfigError when total_steps is 0 and InputError when
// step exceeds total_steps.
double lr_at(const StageConfig& cfg, std::size_t step, std::size_t total_steps);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

OptimState make_optim_state(std::span<const model::NamedTensor> params);

// One decoupled-decay update using each tensor's gradient:
//   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
// Throws EvaluationError naming the tensor when a gradient is not finite and
// DimensionError when the state does not mirror params.
void optim_step(std::span<const model::NamedTensor> params, OptimState& state,
                double lr, double weight_decay, const AdamWOptions& opts = {});

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<const model::NamedTensor> params,
                      double max_norm);

struct ModelState {
  ModelParams params;
  std::optional<LoraAdapter> adapter;
  model::Vocab vocab;
  std::string stage = "init";
  std::size_t step = 0;
  std::uint64_t seed = 0;
};

struct MetricsRow {
  std::size_t step = 0;
  std::string stage;
  double lr = 0.0;
  double loss = 0.0;
};

// "step,stage,lr,loss" header then one row per update, values printed with
// 17 significant digits.
std::string metrics_csv(std::span<const MetricsRow> rows);

struct StageResult {
  ModelState state;
  std::vector<MetricsRow> log;
  // dpo only: reference log-probs of every pair before the first update and
  // recomputed after the last one.
  std::vector<objectives::ReferenceLogprobs> reference_before;
  std::vector<objectives::ReferenceLogprobs> reference_after;
};

using StepCallback = std::function<void(const MetricsRow&)>;

// cpt trains every base tensor on blocks packed from dataset.texts. sft
// folds any incoming adapter into the base and trains a fresh adapter only.
// dpo does the same with the preference pairs, after snapshotting the merged
// incoming model as the frozen reference. Throws ConfigError on a schema
// mismatch or an invalid config before any update.
StageResult run_stage(const ModelState& initial, const StageConfig& cfg,
                      const data::Dataset& dataset,
                      const StepCallback& on_step = {});

}  // namespace qilin::trainer
