// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training losses for the three stages.
//
// All losses are token means per sequence and batch means per step. To
// recover the summed objectives multiply the CPT loss by (block_size - 1)
// per block and the SFT loss by the response length per example.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qilin/data.hpp"
#include "qilin/model.hpp"
#include "qilin/render.hpp"

namespace qilin::objectives {

using autograd::Graph;
using autograd::Var;
using model::BoundModel;
using model::ForwardOptions;
using model::LoraAdapter;
using model::ModelParams;

// Next-token prediction over a packed block: cross entropy of
// forward(block[0..T-1)) against block[1..T).
Var cpt_loss(const BoundModel& model, const data::PackedBlock& block,
             const ForwardOptions& options = {});
double cpt_loss(const ModelParams& params, const LoraAdapter* adapter,
                const data::PackedBlock& block);

// prompt ++ response laid out for teacher forcing. weights[t] is 1 where
// targets[t] is a response token and 0 on prompt positions.
struct SupervisedSequence {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<double> weights;
  std::size_t response_length = 0;
};

SupervisedSequence make_supervised(std::span<const int> prompt,
                                   std::span<const int> response);

// Sum over response positions of log P(target). Prompt targets are read
// only through their zero weights.
Var response_logprob(const BoundModel& model, const SupervisedSequence& seq,
                     const ForwardOptions& options = {});
// Mean negative log-likelihood over response tokens.
Var masked_nll(const BoundModel& model, const SupervisedSequence& seq,
               const ForwardOptions& options = {});

// Throws ValidationError on an empty output and LengthError when prompt and
// response do not fit the model context.
Var sft_loss(const BoundModel& model, const data::SftExample& ex,
             const data::PromptRenderer& renderer,
             const ForwardOptions& options = {});
double sft_loss(const ModelParams& params, const LoraAdapter* adapter,
                const data::SftExample& ex,
                const data::PromptRenderer& renderer);

// sum_t log P(response_t | prompt, response_<t). Zero for an empty response.
Var sequence_logprob(const BoundModel& model, std::span<const int> prompt,
                     std::span<const int> response,
                     const ForwardOptions& options = {});
double sequence_logprob(const ModelParams& params, const LoraAdapter* adapter,
                        std::span<const int> prompt,
                        std::span<const int> response);

// Frozen reference for the preference stage. The reference never takes part
// in a differentiable graph.
struct DpoConfig {
  double beta = 0.1;
  const ModelParams* reference = nullptr;
  const LoraAdapter* reference_adapter = nullptr;

  void validate() const;
};

// beta * (log P_policy(response|prompt) - log P_ref(response|prompt)). The
// partition term depends on the prompt only and cancels in the pairwise
// loss, so it is not computed.
double dpo_implicit_reward(const ModelParams& policy,
                           const LoraAdapter* policy_adapter,
                           const DpoConfig& config,
                           std::span<const int> prompt,
                           std::span<const int> response);

struct ReferenceLogprobs {
  double preferred = 0.0;
  double rejected = 0.0;
};

std::vector<ReferenceLogprobs> reference_logprobs(
    const DpoConfig& config, std::span<const data::PreferencePair> pairs,
    const data::PromptRenderer& renderer);

// -log sigmoid(beta * ((lp_w - ref_w) - (lp_l - ref_l))) for one pair.
Var dpo_pair_loss(const Var& policy_preferred, const Var& policy_rejected,
                  const ReferenceLogprobs& reference, double beta);

// Batch mean of dpo_pair_loss. When cached is null the reference log-probs
// are computed on the fly. Throws InputError on an empty batch and
// ValidationError when a pair's responses are identical.
Var dpo_loss(const BoundModel& policy, const DpoConfig& config,
             std::span<const data::PreferencePair> batch,
             const data::PromptRenderer& renderer,
             const ForwardOptions& options = {},
             std::span<const ReferenceLogprobs> cached = {});

// Mean of log P(preferred) - log P(rejected) and the fraction of pairs with
// a positive margin, under the given model.
struct PreferenceStats {
  double mean_margin = 0.0;
  double win_rate = 0.0;
  std::size_t pairs = 0;
};

PreferenceStats preference_stats(const ModelParams& params,
                                 const LoraAdapter* adapter,
                                 std::span<const data::PreferencePair> pairs,
                                 const data::PromptRenderer& renderer);

}  // namespace qilin::objectives
