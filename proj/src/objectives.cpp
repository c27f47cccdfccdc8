// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/objectives.hpp"

#include <string>

#include "qilin/errors.hpp"

namespace qilin::objectives {

Var cpt_loss(const BoundModel& model, const data::PackedBlock& block,
             const ForwardOptions& options) {
  if (block.tokens.size() < 2) {
    throw InputError("cpt_loss: block needs at least 2 tokens");
  }
  const std::span<const int> tokens(block.tokens);
  const Var logits = model.forward(tokens.first(tokens.size() - 1), options);
  return autograd::cross_entropy_next_token(logits, tokens.subspan(1));
}

double cpt_loss(const ModelParams& params, const LoraAdapter* adapter,
                const data::PackedBlock& block) {
  Graph g;
  const BoundModel bound(g, params, adapter);
  return cpt_loss(bound, block).value().item();
}

SupervisedSequence make_supervised(std::span<const int> prompt,
                                   std::span<const int> response) {
  if (prompt.empty()) {
    throw InputError("supervised sequence needs a nonempty prompt");
  }
  SupervisedSequence seq;
  std::vector<int> full(prompt.begin(), prompt.end());
  full.insert(full.end(), response.begin(), response.end());
  seq.inputs.assign(full.begin(), full.end() - 1);
  seq.targets.assign(full.begin() + 1, full.end());
  seq.weights.assign(seq.targets.size(), 0.0);
  for (std::size_t t = prompt.size() - 1; t < seq.targets.size(); ++t) {
    seq.weights[t] = 1.0;
  }
  seq.response_length = response.size();
  return seq;
}

Var response_logprob(const BoundModel& model, const SupervisedSequence& seq,
                     const ForwardOptions& options) {
  const Var logits = model.forward(seq.inputs, options);
  const Var lp = autograd::log_softmax_gather(logits, seq.targets);
  return autograd::weighted_sum(lp, seq.weights);
}

Var masked_nll(const BoundModel& model, const SupervisedSequence& seq,
               const ForwardOptions& options) {
  if (seq.response_length == 0) {
    throw ValidationError("masked_nll: empty response");
  }
  return autograd::scale(response_logprob(model, seq, options),
                         -1.0 / static_cast<double>(seq.response_length));
}

Var sft_loss(const BoundModel& model, const data::SftExample& ex,
             const data::PromptRenderer& renderer,
             const ForwardOptions& options) {
  data::validate(ex);
  const data::RenderedPair r = renderer.render(ex);
  if (r.prompt.size() + r.response.size() - 1 > model.config().max_seq_len) {
    throw LengthError("sft example of " +
                      std::to_string(r.prompt.size() + r.response.size()) +
                      " tokens does not fit max_seq_len " +
                      std::to_string(model.config().max_seq_len));
  }
  return masked_nll(model, make_supervised(r.prompt, r.response), options);
}

double sft_loss(const ModelParams& params, const LoraAdapter* adapter,
                const data::SftExample& ex,
                const data::PromptRenderer& renderer) {
  Graph g;
  const BoundModel bound(g, params, adapter);
  return sft_loss(bound, ex, renderer).value().item();
}

Var sequence_logprob(const BoundModel& model, std::span<const int> prompt,
                     std::span<const int> response,
                     const ForwardOptions& options) {
  if (prompt.size() + response.size() - 1 > model.config().max_seq_len) {
    throw LengthError("sequence_logprob: " +
                      std::to_string(prompt.size() + response.size()) +
                      " tokens exceed max_seq_len " +
                      std::to_string(model.config().max_seq_len));
  }
  if (response.empty()) {
    return model.graph().constant(autograd::Tensor::scalar(0.0));
  }
  return response_logprob(model, make_supervised(prompt, response), options);
}

double sequence_logprob(const ModelParams& params, const LoraAdapter* adapter,
                        std::span<const int> prompt,
                        std::span<const int> response) {
  Graph g;
  const BoundModel bound(g, params, adapter);
  return sequence_logprob(bound, prompt, response).value().item();
}

void DpoConfig::validate() const {
  if (!(beta > 0.0)) {
    throw ConfigError("dpo beta must be positive, got " + std::to_string(beta));
  }
  if (reference == nullptr) {
    throw ConfigError("dpo config has no reference model");
  }
}

double dpo_implicit_reward(const ModelParams& policy,
                           const LoraAdapter* policy_adapter,
                           const DpoConfig& config,
                           std::span<const int> prompt,
                           std::span<const int> response) {
  config.validate();
  const double lp_policy =
      sequence_logprob(policy, policy_adapter, prompt, response);
  const double lp_ref = sequence_logprob(*config.reference,
                                         config.reference_adapter, prompt,
                                         response);
  return config.beta * (lp_policy - lp_ref);
}

std::vector<ReferenceLogprobs> reference_logprobs(
    const DpoConfig& config, std::span<const data::PreferencePair> pairs,
    const data::PromptRenderer& renderer) {
  config.validate();
  std::vector<ReferenceLogprobs> out;
  out.reserve(pairs.size());
  for (const data::PreferencePair& p : pairs) {
    const data::RenderedPair w = renderer.render(p, true);
    const data::RenderedPair l = renderer.render(p, false);
    out.push_back({sequence_logprob(*config.reference, config.reference_adapter,
                                    w.prompt, w.response),
                   sequence_logprob(*config.reference, config.reference_adapter,
                                    l.prompt, l.response)});
  }
  return out;
}

Var dpo_pair_loss(const Var& policy_preferred, const Var& policy_rejected,
                  const ReferenceLogprobs& reference, double beta) {
  Graph& g = *policy_preferred.graph();
  const Var diff = autograd::sub(policy_preferred, policy_rejected);
  const Var ref = g.constant(
      autograd::Tensor::scalar(reference.preferred - reference.rejected));
  const Var margin = autograd::scale(autograd::sub(diff, ref), beta);
  return autograd::scale(autograd::log_sigmoid(margin), -1.0);
}

Var dpo_loss(const BoundModel& policy, const DpoConfig& config,
             std::span<const data::PreferencePair> batch,
             const data::PromptRenderer& renderer,
             const ForwardOptions& options,
             std::span<const ReferenceLogprobs> cached) {
  config.validate();
  if (batch.empty()) {
    throw InputError("dpo_loss: empty batch");
  }
  if (!cached.empty() && cached.size() != batch.size()) {
    throw InputError("dpo_loss: cached reference size does not match batch");
  }
  std::vector<ReferenceLogprobs> computed;
  if (cached.empty()) {
    computed = reference_logprobs(config, batch, renderer);
    cached = computed;
  }
  Var total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    data::validate(batch[i]);
    const data::RenderedPair w = renderer.render(batch[i], true);
    const data::RenderedPair l = renderer.render(batch[i], false);
    const Var lp_w = sequence_logprob(policy, w.prompt, w.response, options);
    const Var lp_l = sequence_logprob(policy, l.prompt, l.response, options);
    const Var loss = dpo_pair_loss(lp_w, lp_l, cached[i], config.beta);
    total = i == 0 ? loss : autograd::add(total, loss);
  }
  return autograd::scale(total, 1.0 / static_cast<double>(batch.size()));
}

PreferenceStats preference_stats(const ModelParams& params,
                                 const LoraAdapter* adapter,
                                 std::span<const data::PreferencePair> pairs,
                                 const data::PromptRenderer& renderer) {
  PreferenceStats stats;
  stats.pairs = pairs.size();
  if (pairs.empty()) {
    return stats;
  }
  std::size_t wins = 0;
  double margin_sum = 0.0;
  for (const data::PreferencePair& p : pairs) {
    const data::RenderedPair w = renderer.render(p, true);
    const data::RenderedPair l = renderer.render(p, false);
    const double margin =
        sequence_logprob(params, adapter, w.prompt, w.response) -
        sequence_logprob(params, adapter, l.prompt, l.response);
    margin_sum += margin;
    if (margin > 0.0) {
      ++wins;
    }
  }
  stats.mean_margin = margin_sum / static_cast<double>(pairs.size());
  stats.win_rate = static_cast<double>(wins) / static_cast<double>(pairs.size());
  return stats;
}

}  // namespace qilin::objectives
