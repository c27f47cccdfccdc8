// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks of the three training losses on a tiny
// transformer with an attached, non-trivial adapter.

#pragma once

#include <cstdint>
#include <vector>

#include "common/tiny.hpp"
#include "qilin/grad_check.hpp"
#include "qilin/model.hpp"
#include "qilin/objectives.hpp"
#include "qilin/render.hpp"

namespace fidelity {

using qilin::autograd::GradCheckOptions;
using qilin::autograd::GradCheckReport;
using qilin::autograd::Graph;
using qilin::autograd::Tensor;
using qilin::autograd::Var;

enum class Loss { kCpt, kSft, kDpo };

struct Setup {
  qilin::model::Vocab vocab = tiny::letters();
  qilin::model::ModelConfig config;
  qilin::model::ModelParams params;
  qilin::model::ModelParams reference;
  qilin::model::LoraAdapter adapter;

  explicit Setup(std::uint64_t seed) {
    config = tiny::config(vocab.size(), 8, 2, 2, 24);
    params = tiny::random_params(config, seed);
    reference = tiny::random_params(config, seed + 1);
    qilin::model::LoraConfig lc;
    lc.rank = 2;
    lc.alpha = 4.0;
    lc.dropout = 0.0;
    lc.targets = {"wq", "wk", "wv", "wo", "w1", "w2", "head"};
    adapter = qilin::model::attach_lora(params, lc, seed + 2);
    tiny::fill_lora_b(adapter, seed + 3);
    params.set_requires_grad(true);
    adapter.set_requires_grad(true);
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& nt : params.named()) out.push_back(nt.tensor);
    for (auto& nt : adapter.named()) out.push_back(nt.tensor);
    return out;
  }
};

inline GradCheckReport check(Loss loss, std::uint64_t seed,
                             const GradCheckOptions& options = {}) {
  Setup s(seed);
  const qilin::data::PromptRenderer renderer(s.vocab, 14, 8);
  qilin::data::PackedBlock block;
  qilin::Rng rng(seed + 9);
  block.tokens = tiny::random_ids(rng, 16, 0, static_cast<int>(s.vocab.size()));
  const auto sft = tiny::sft_batch();
  const auto prefs = tiny::preference_batch();
  qilin::objectives::DpoConfig dpo;
  dpo.beta = 0.5;
  dpo.reference = &s.reference;

  const qilin::autograd::LossFn fn = [&](Graph& g) -> Var {
    const qilin::model::BoundModel m(g, s.params, &s.adapter);
    switch (loss) {
      case Loss::kCpt:
        return qilin::objectives::cpt_loss(m, block);
      case Loss::kSft: {
        const Var a = qilin::objectives::sft_loss(m, sft[0], renderer);
        const Var b = qilin::objectives::sft_loss(m, sft[1], renderer);
        return qilin::autograd::scale(qilin::autograd::add(a, b), 0.5);
      }
      case Loss::kDpo:
        return qilin::objectives::dpo_loss(m, dpo, prefs, renderer);
    }
    return {};
  };
  GradCheckOptions opts = options;
  opts.seed = seed;
  return qilin::autograd::grad_check(fn, s.tensors(), opts);
}

}  // namespace fidelity
