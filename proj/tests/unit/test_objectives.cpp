// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "common/fidelity.hpp"
#include "common/tiny.hpp"
#include "qilin/errors.hpp"
#include "qilin/objectives.hpp"
#include "qilin/render.hpp"
#include "qilin/trainer.hpp"

using namespace qilin;
using namespace qilin::objectives;
using autograd::Tensor;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Logits ignore the context: with every weight zero the final layer norm
// emits final_bias (zero), so logits equal head_bias at every position.
model::ModelParams constant_model(const model::ModelConfig& c, std::vector<double> bias) {
  model::ModelParams p = tiny::uniform_params(c);
  p.head_bias.values() = std::move(bias);
  return p;
}

std::vector<double> log_softmax(const std::vector<double>& z) {
  double s = 0.0;
  for (double x : z) s += std::exp(x);
  std::vector<double> out;
  for (double x : z) out.push_back(x - std::log(s));
  return out;
}

double margin_under(const model::ModelParams& p, const model::LoraAdapter* a,
                    const std::vector<data::PreferencePair>& pairs,
                    const data::PromptRenderer& r) {
  return preference_stats(p, a, pairs, r).mean_margin;
}

}  // namespace

TEST_CASE("cpt loss on a uniform model is ln V", "[objectives][cpt]") {
  const model::ModelConfig c = tiny::config(16);
  const model::ModelParams p = tiny::uniform_params(c);
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    data::PackedBlock b{tiny::random_ids(rng, 2 + rng.below(20), 0, 16)};
    CHECK_THAT(cpt_loss(p, nullptr, b), WithinAbs(std::log(16.0), 1e-6));
  }
  CHECK_THAT(std::log(16.0), WithinAbs(2.772589, 1e-6));
}

TEST_CASE("cpt loss is cross entropy of shifted block", "[objectives][cpt]") {
  const model::ModelConfig c = tiny::config(20);
  const model::ModelParams p = tiny::random_params(c, 2);
  Rng rng(2);
  const data::PackedBlock b{tiny::random_ids(rng, 16, 0, 20)};
  const std::vector<int> in(b.tokens.begin(), b.tokens.end() - 1);
  const std::vector<int> tgt(b.tokens.begin() + 1, b.tokens.end());
  autograd::Graph g;
  const Var ce =
      autograd::cross_entropy_next_token(g.constant(model::forward_logits(p, nullptr, in)), tgt);
  CHECK(cpt_loss(p, nullptr, b) == ce.value().item());
}

TEST_CASE("cpt loss after overfitting a repeated token", "[objectives][cpt]") {
  trainer::ModelState s;
  s.vocab = tiny::letters();
  s.params = model::ModelParams::init(tiny::config(s.vocab.size(), 16, 1, 2, 24), 3);
  data::Dataset ds;
  ds.schema = data::Schema::kCpt;
  // Long documents: every EOS in the stream puts a floor of roughly
  // 1/length on the loss of an all-'a' block.
  for (int i = 0; i < 2; ++i) ds.texts.emplace_back(400, 'a');
  trainer::StageConfig cfg = trainer::StageConfig::defaults(trainer::Stage::kCpt);
  cfg.learning_rate = 1e-2;
  cfg.epochs = 10;
  cfg.block_size = 16;
  const auto result = trainer::run_stage(s, cfg, ds);
  const data::PackedBlock all_a{std::vector<int>(16, s.vocab.id_of(U'a'))};
  CHECK(cpt_loss(result.state.params, nullptr, all_a) < 0.01);
}

TEST_CASE("sft loss ignores prompt labels", "[objectives][sft]") {
  const model::Vocab v = tiny::letters();
  const model::ModelConfig c = tiny::config(v.size());
  const model::ModelParams p = tiny::random_params(c, 5);
  const data::PromptRenderer r(v, 14, 8);
  const auto ex = tiny::sft_batch()[1];
  const data::RenderedPair rp = r.render(ex);
  const SupervisedSequence seq = make_supervised(rp.prompt, rp.response);
  CHECK(seq.response_length == rp.response.size());

  autograd::Graph g;
  const model::BoundModel m(g, p, nullptr);
  const double base = masked_nll(m, seq).value().item();
  CHECK(base == sft_loss(p, nullptr, ex, r));
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    SupervisedSequence changed = seq;
    for (std::size_t t = 0; t < changed.targets.size(); ++t) {
      if (changed.weights[t] == 0.0) changed.targets[t] = static_cast<int>(rng.below(v.size()));
    }
    autograd::Graph g2;
    const model::BoundModel m2(g2, p, nullptr);
    CHECK(masked_nll(m2, changed).value().item() - base == 0.0);
  }
  // Changing a response label does change the loss.
  SupervisedSequence moved = seq;
  moved.targets.back() = (moved.targets.back() + 1) % static_cast<int>(v.size());
  autograd::Graph g3;
  const model::BoundModel m3(g3, p, nullptr);
  CHECK(masked_nll(m3, moved).value().item() != base);
}

TEST_CASE("sft loss on a single response token is -ln q", "[objectives][sft]") {
  const model::ModelConfig c = tiny::config(20);
  const model::ModelParams p = tiny::random_params(c, 7);
  const std::vector<int> prompt = {0, 6, 7, 8};
  const std::vector<int> response = {11};
  const Tensor logits = model::forward_logits(p, nullptr, prompt);
  double z = 0.0;
  for (std::size_t k = 0; k < 20; ++k) z += std::exp(logits.at(3, k));
  const double q = std::exp(logits.at(3, 11)) / z;
  autograd::Graph g;
  const model::BoundModel m(g, p, nullptr);
  CHECK_THAT(masked_nll(m, make_supervised(prompt, response)).value().item(),
             WithinAbs(-std::log(q), 1e-12));
}

TEST_CASE("sft loss validation and determinism", "[objectives][sft]") {
  const model::Vocab v = tiny::letters();
  const model::ModelParams p = tiny::random_params(tiny::config(v.size()), 8);
  const data::PromptRenderer r(v, 14, 8);
  const auto batch = tiny::sft_batch();
  data::SftExample copy = batch[0];
  CHECK(sft_loss(p, nullptr, batch[0], r) == sft_loss(p, nullptr, copy, r));
  copy.output.clear();
  CHECK_THROWS_AS(sft_loss(p, nullptr, copy, r), ValidationError);
  const data::PromptRenderer wide(v, 100, 100);
  data::SftExample big = batch[0];
  big.output = std::string(40, 'a');
  CHECK_THROWS_AS(sft_loss(p, nullptr, big, wide), LengthError);
}

TEST_CASE("sequence logprob", "[objectives][logprob]") {
  const model::ModelConfig c = tiny::config(16);
  const model::ModelParams u = tiny::uniform_params(c);
  const std::vector<int> prompt = {0, 5};
  const std::vector<int> response = {6, 7, 1};
  CHECK_THAT(sequence_logprob(u, nullptr, prompt, response),
             WithinAbs(-3.0 * std::log(16.0), 1e-12));
  CHECK_THAT(-3.0 * std::log(16.0), WithinAbs(-8.3178, 1e-4));
  CHECK(sequence_logprob(u, nullptr, prompt, std::vector<int>{}) == 0.0);

  const model::ModelParams p = tiny::random_params(c, 9);
  const double lp = sequence_logprob(p, nullptr, prompt, response);
  CHECK(lp <= 0.0);
  autograd::Graph g;
  const model::BoundModel m(g, p, nullptr);
  const double nll = masked_nll(m, make_supervised(prompt, response)).value().item();
  CHECK_THAT(lp, WithinRel(-3.0 * nll, 1e-13));

  const std::vector<int> long_response(c.max_seq_len, 5);
  CHECK_THROWS_AS(sequence_logprob(p, nullptr, prompt, long_response), LengthError);
}

TEST_CASE("implicit reward", "[objectives][dpo]") {
  const model::ModelConfig c = tiny::config(16);
  const model::ModelParams p = tiny::random_params(c, 10);
  DpoConfig cfg;
  cfg.beta = 0.1;
  cfg.reference = &p;
  const std::vector<int> prompt = {0, 4, 5};
  const std::vector<int> response = {9, 8, 1};
  CHECK(dpo_implicit_reward(p, nullptr, cfg, prompt, response) == 0.0);

  const model::ModelParams q = tiny::random_params(c, 11);
  const double r1 = dpo_implicit_reward(q, nullptr, cfg, prompt, response);
  cfg.beta = 0.2;
  const double r2 = dpo_implicit_reward(q, nullptr, cfg, prompt, response);
  CHECK(r1 != 0.0);
  CHECK_THAT(r2, WithinRel(2.0 * r1, 1e-14));

  cfg.beta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.beta = 0.1;
  cfg.reference = nullptr;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("implicit reward on a hand-built probability table", "[objectives][dpo]") {
  // Two live symbols (ids 4 and 5); the rest carry large negative logits.
  const model::ModelConfig c = tiny::config(6, 4, 1, 1, 8);
  const std::vector<double> policy_bias = {-50, -50, -50, -50, std::log(0.8), std::log(0.2)};
  const std::vector<double> ref_bias = {-50, -50, -50, -50, std::log(0.5), std::log(0.5)};
  const model::ModelParams policy = constant_model(c, policy_bias);
  const model::ModelParams ref = constant_model(c, ref_bias);
  DpoConfig cfg;
  cfg.beta = 0.3;
  cfg.reference = &ref;
  const std::vector<int> prompt = {0};
  const std::vector<int> response = {4, 4, 5};
  const auto lp = log_softmax(policy_bias);
  const auto lr = log_softmax(ref_bias);
  const double manual = 0.3 * ((2 * lp[4] + lp[5]) - (2 * lr[4] + lr[5]));
  CHECK_THAT(dpo_implicit_reward(policy, nullptr, cfg, prompt, response),
             WithinAbs(manual, 1e-12));
  // About 0.3 * ln(0.8 * 0.8 * 0.2 / 0.125).
  CHECK_THAT(manual, WithinAbs(0.3 * std::log(0.8 * 0.8 * 0.2 / 0.125), 1e-12));
}

TEST_CASE("dpo loss at policy == reference is ln 2", "[objectives][dpo]") {
  const model::Vocab v = tiny::letters();
  const model::ModelConfig c = tiny::config(v.size());
  const data::PromptRenderer r(v, 14, 8);
  const auto pairs = tiny::preference_batch();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    model::ModelParams p = tiny::random_params(c, seed);
    DpoConfig cfg;
    cfg.beta = 0.1 * static_cast<double>(seed);
    cfg.reference = &p;
    for (std::size_t n = 1; n <= pairs.size(); ++n) {
      autograd::Graph g;
      const model::BoundModel m(g, p, nullptr);
      const double loss =
          dpo_loss(m, cfg, std::span(pairs).first(n), r).value().item();
      CHECK_THAT(loss, WithinAbs(std::numbers::ln2, 1e-9));
    }
  }
}

TEST_CASE("dpo pair loss closed forms", "[objectives][dpo]") {
  autograd::Graph g;
  const Var w = g.constant(Tensor::scalar(-2.0));
  const Var l = g.constant(Tensor::scalar(-4.0));
  // Policy margin 2, reference margin 1, beta 1: reward margin 1.
  const ReferenceLogprobs ref{-3.0, -4.0};
  CHECK_THAT(dpo_pair_loss(w, l, ref, 1.0).value().item(), WithinAbs(0.313262, 1e-6));
  CHECK_THAT(dpo_pair_loss(w, l, ref, 1.0).value().item(),
             WithinAbs(std::log1p(std::exp(-1.0)), 1e-15));
  double prev = 1.0;
  for (double big : {10.0, 100.0, 1000.0}) {
    const Var wb = g.constant(Tensor::scalar(big));
    const double loss = dpo_pair_loss(wb, l, ReferenceLogprobs{}, 1.0).value().item();
    CHECK(loss < prev);
    CHECK(loss >= 0.0);
    prev = loss;
  }
  CHECK(prev < 1e-300);
}

TEST_CASE("dpo loss rejects bad batches", "[objectives][dpo]") {
  const model::Vocab v = tiny::letters();
  model::ModelParams p = tiny::random_params(tiny::config(v.size()), 3);
  const data::PromptRenderer r(v, 14, 8);
  DpoConfig cfg;
  cfg.reference = &p;
  autograd::Graph g;
  const model::BoundModel m(g, p, nullptr);
  CHECK_THROWS_AS(dpo_loss(m, cfg, std::vector<data::PreferencePair>{}, r), InputError);
  const std::vector<data::PreferencePair> same = {{"ab", "cd", "cd"}};
  CHECK_THROWS_AS(dpo_loss(m, cfg, same, r), ValidationError);
}

TEST_CASE("dpo gradient at policy == reference is linear in beta", "[objectives][dpo]") {
  const model::Vocab v = tiny::letters();
  const model::ModelConfig c = tiny::config(v.size());
  const data::PromptRenderer r(v, 14, 8);
  const auto pairs = tiny::preference_batch();
  const model::ModelParams ref = tiny::random_params(c, 4);
  auto grads = [&](double beta) {
    model::ModelParams p = ref;
    p.set_requires_grad(true);
    DpoConfig cfg;
    cfg.beta = beta;
    cfg.reference = &ref;
    autograd::Graph g;
    const model::BoundModel m(g, p, nullptr);
    g.backward(dpo_loss(m, cfg, pairs, r));
    std::vector<double> out;
    for (const auto& nt : p.named()) out.insert(out.end(), nt.tensor->grad().begin(), nt.tensor->grad().end());
    return out;
  };
  const auto g1 = grads(0.1);
  const auto g2 = grads(0.2);
  double worst = 0.0;
  double norm = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    norm = std::max(norm, std::abs(g1[i]));
    if (std::abs(g1[i]) > 1e-12) worst = std::max(worst, std::abs(g2[i] / g1[i] - 2.0) / 2.0);
  }
  CHECK(norm > 1e-6);
  CHECK(worst < 1e-6);
}

TEST_CASE("a small dpo step widens the preference margin", "[objectives][dpo]") {
  const model::Vocab v = tiny::letters();
  const model::ModelConfig c = tiny::config(v.size());
  const data::PromptRenderer r(v, 14, 8);
  const auto pairs = tiny::preference_batch();
  const model::ModelParams ref = tiny::random_params(c, 5);
  model::LoraConfig lc;
  lc.dropout = 0.0;
  model::LoraAdapter a = model::attach_lora(ref, lc, 6);
  a.set_requires_grad(true);
  DpoConfig cfg;
  cfg.reference = &ref;
  const double before = margin_under(ref, &a, pairs, r);
  {
    // Frozen base, trainable adapter.
    model::ModelParams base = ref;
    base.set_requires_grad(false);
    autograd::Graph g;
    const model::BoundModel m(g, base, &a);
    g.backward(dpo_loss(m, cfg, pairs, r));
  }
  const double lr = 1e-3;
  for (auto& nt : a.named()) {
    auto grad = nt.tensor->grad();
    for (std::size_t i = 0; i < nt.tensor->numel(); ++i) (*nt.tensor)[i] -= lr * grad[i];
  }
  const double after = margin_under(ref, &a, pairs, r);
  CHECK(after > before);
}

TEST_CASE("losses pass finite-difference checks", "[objectives][gradcheck]") {
  for (fidelity::Loss loss : {fidelity::Loss::kCpt, fidelity::Loss::kSft, fidelity::Loss::kDpo}) {
    const auto report = fidelity::check(loss, 1);
    CHECK(report.checked == 200);
    CHECK(report.pass_fraction() >= 0.99);
  }
}
