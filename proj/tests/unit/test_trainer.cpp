// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "common/tiny.hpp"
#include "qilin/checkpoint.hpp"
#include "qilin/errors.hpp"
#include "qilin/io.hpp"
#include "qilin/objectives.hpp"
#include "qilin/trainer.hpp"

using namespace qilin;
using namespace qilin::trainer;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelState tiny_state(std::uint64_t seed = 1) {
  ModelState s;
  s.vocab = tiny::letters();
  s.params = model::ModelParams::init(tiny::config(s.vocab.size(), 8, 1, 2, 24), seed);
  return s;
}

data::Dataset cpt_data(std::size_t docs = 50) {
  data::Dataset ds;
  ds.schema = data::Schema::kCpt;
  Rng rng(77);
  const std::vector<std::string> words = {"abc", "def", "ghi", "jkl", "abd"};
  for (std::size_t i = 0; i < docs; ++i) {
    std::string d;
    for (int w = 0; w < 4; ++w) d += words[rng.below(words.size())];
    ds.texts.push_back(d);
  }
  return ds;
}

data::Dataset sft_data() {
  data::Dataset ds;
  ds.schema = data::Schema::kSft;
  ds.sft = tiny::sft_batch();
  return ds;
}

data::Dataset dpo_data() {
  data::Dataset ds;
  ds.schema = data::Schema::kDpo;
  ds.dpo = tiny::preference_batch();
  return ds;
}

StageConfig small(Stage stage) {
  StageConfig c = StageConfig::defaults(stage);
  c.block_size = 12;
  c.max_source_length = 14;
  c.max_target_length = 8;
  c.epochs = 2;
  c.learning_rate = 5e-3;
  c.lora.rank = 2;
  c.seed = 5;
  return c;
}

bool same_params(const model::ModelParams& a, const model::ModelParams& b) {
  const auto x = a.named();
  const auto y = b.named();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].tensor->values() != y[i].tensor->values()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("stage defaults", "[trainer][config]") {
  const StageConfig cpt = StageConfig::defaults(Stage::kCpt);
  CHECK(cpt.learning_rate == 2e-4);
  CHECK(cpt.warmup_ratio == 0.05);
  CHECK(cpt.weight_decay == 0.01);
  CHECK(cpt.epochs == 3);
  const StageConfig sft = StageConfig::defaults(Stage::kSft);
  CHECK(sft.learning_rate == 2e-5);
  CHECK(sft.weight_decay == 0.05);
  CHECK(sft.max_source_length == 256);
  CHECK(sft.max_target_length == 256);
  CHECK(sft.lora.rank == 8);
  CHECK(sft.lora.alpha == 32.0);
  CHECK(sft.lora.dropout == 0.05);
  CHECK(StageConfig::defaults(Stage::kDpo).lora.alpha == 16.0);
  CHECK(StageConfig::defaults(Stage::kDpo).beta == 0.1);

  StageConfig bad = cpt;
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cpt;
  bad.warmup_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("learning rate schedule", "[trainer][lr]") {
  const StageConfig cfg = StageConfig::defaults(Stage::kCpt);
  CHECK(lr_at(cfg, 0, 1000) == 0.0);
  CHECK(warmup_steps(cfg, 1000) == 50);
  CHECK(lr_at(cfg, 50, 1000) == 2e-4);
  CHECK_THAT(lr_at(cfg, 25, 1000), WithinRel(0.5 * 2e-4, 1e-15));
  CHECK(lr_at(cfg, 1000, 1000) == 2e-4);
  double prev = 0.0;
  for (std::size_t s = 0; s <= 1000; ++s) {
    const double lr = lr_at(cfg, s, 1000);
    CHECK(lr >= prev);
    if (s >= 50) CHECK(lr == 2e-4);
    prev = lr;
  }
  // ceil: 0.05 * 30 = 1.5 -> 2 warmup steps.
  CHECK(warmup_steps(cfg, 30) == 2);
  CHECK_THROWS_AS(lr_at(cfg, 0, 0), ConfigError);
  CHECK_THROWS_AS(lr_at(cfg, 11, 10), InputError);
}

TEST_CASE("adamw steps", "[trainer][optim]") {
  SECTION("zero gradient, zero decay") {
    Tensor w = Tensor::vector({1.5, -2.0});
    w.zero_grad();
    std::vector<model::NamedTensor> ps = {{"w", &w}};
    OptimState st = make_optim_state(ps);
    optim_step(ps, st, 0.1, 0.0);
    CHECK(w.values() == std::vector<double>{1.5, -2.0});
    CHECK(st.step == 1);
  }
  SECTION("first step is about -lr * sign(g)") {
    for (double g : {0.3, 4.0, -0.01}) {
      Tensor w = Tensor::scalar(1.0);
      w.zero_grad();
      w.grad()[0] = g;
      std::vector<model::NamedTensor> ps = {{"w", &w}};
      OptimState st = make_optim_state(ps);
      optim_step(ps, st, 1e-3, 0.0);
      // m_hat = g, v_hat = g^2: the step is lr * g / (|g| + eps).
      const double expect = 1.0 - 1e-3 * g / (std::abs(g) + 1e-8);
      CHECK_THAT(w[0], WithinAbs(expect, 1e-15));
      CHECK_THAT(w[0] - 1.0, WithinAbs(-1e-3 * (g > 0 ? 1 : -1), 1e-9));
    }
  }
  SECTION("decay shrinks with zero gradient") {
    Tensor w = Tensor::vector({2.0, -3.0});
    w.zero_grad();
    std::vector<model::NamedTensor> ps = {{"w", &w}};
    OptimState st = make_optim_state(ps);
    optim_step(ps, st, 0.1, 0.5);
    CHECK(std::abs(w[0]) < 2.0);
    CHECK(std::abs(w[1]) < 3.0);
    CHECK_THAT(w[0], WithinAbs(2.0 * (1 - 0.05), 1e-15));
  }
  SECTION("NaN gradient names the tensor") {
    Tensor w = Tensor::scalar(1.0);
    w.zero_grad();
    w.grad()[0] = NAN;
    std::vector<model::NamedTensor> ps = {{"layers.0.attn.wq", &w}};
    OptimState st = make_optim_state(ps);
    CHECK_THROWS_MATCHES(optim_step(ps, st, 0.1, 0.0), EvaluationError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("layers.0.attn.wq")));
  }
  SECTION("global norm clipping") {
    Tensor a = Tensor::vector({3.0});
    Tensor b = Tensor::vector({4.0});
    a.zero_grad();
    b.zero_grad();
    a.grad()[0] = 3.0;
    b.grad()[0] = 4.0;
    std::vector<model::NamedTensor> ps = {{"a", &a}, {"b", &b}};
    CHECK(clip_grad_norm(ps, 1.0) == 5.0);
    CHECK_THAT(a.grad()[0], WithinAbs(0.6, 1e-15));
    CHECK_THAT(b.grad()[0], WithinAbs(0.8, 1e-15));
  }
}

TEST_CASE("zero epochs leave the state alone", "[trainer][stage]") {
  const ModelState s = tiny_state();
  StageConfig cfg = small(Stage::kCpt);
  cfg.epochs = 0;
  const StageResult r = run_stage(s, cfg, cpt_data());
  CHECK(r.log.empty());
  CHECK(same_params(r.state.params, s.params));
  CHECK_FALSE(r.state.adapter.has_value());
}

TEST_CASE("schema mismatch is rejected before any step", "[trainer][stage]") {
  const ModelState s = tiny_state();
  int steps = 0;
  const StepCallback count = [&](const MetricsRow&) { ++steps; };
  CHECK_THROWS_AS(run_stage(s, small(Stage::kCpt), sft_data(), count), ConfigError);
  CHECK_THROWS_AS(run_stage(s, small(Stage::kSft), dpo_data(), count), ConfigError);
  CHECK_THROWS_AS(run_stage(s, small(Stage::kDpo), cpt_data(), count), ConfigError);
  CHECK(steps == 0);
}

TEST_CASE("cpt training lowers the loss", "[trainer][stage]") {
  const ModelState s = tiny_state(2);
  StageConfig cfg = small(Stage::kCpt);
  cfg.learning_rate = 3e-3;
  cfg.epochs = 4;  // 50 docs of 13 tokens -> 54 blocks of 12 per epoch
  const data::Dataset ds = cpt_data();
  const StageResult r = run_stage(s, cfg, ds);
  REQUIRE(r.log.size() >= 200);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) first += r.log[i].loss;
  for (std::size_t i = r.log.size() - 20; i < r.log.size(); ++i) last += r.log[i].loss;
  CHECK(last < first);
  CHECK(r.log.front().stage == "cpt");
  CHECK(r.log.front().step == 1);
  CHECK(r.state.step == r.log.size());
  // Logged lr follows the schedule.
  for (const auto& row : r.log) CHECK(row.lr == lr_at(cfg, row.step, r.log.size()));
}

TEST_CASE("sft and dpo train only the adapter", "[trainer][stage]") {
  const ModelState s = tiny_state(3);
  const StageResult sft = run_stage(s, small(Stage::kSft), sft_data());
  REQUIRE(sft.state.adapter.has_value());
  CHECK(same_params(sft.state.params, s.params));
  CHECK_FALSE(sft.log.empty());

  const StageResult dpo = run_stage(sft.state, small(Stage::kDpo), dpo_data());
  REQUIRE(dpo.state.adapter.has_value());
  // The incoming adapter is folded in; the base stays fixed during dpo.
  const model::ModelParams merged = model::merge_lora(sft.state.params, *sft.state.adapter);
  CHECK(same_params(dpo.state.params, merged));
}

TEST_CASE("dpo reference is frozen", "[trainer][stage]") {
  const ModelState s = tiny_state(4);
  StageConfig cfg = small(Stage::kDpo);
  cfg.epochs = 3;
  const StageResult r = run_stage(s, cfg, dpo_data());
  REQUIRE(r.reference_before.size() == 3);
  REQUIRE(r.reference_after.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.reference_before[i].preferred == r.reference_after[i].preferred);
    CHECK(r.reference_before[i].rejected == r.reference_after[i].rejected);
  }
  // At step one policy == reference, so the first loss is ln 2.
  CHECK_THAT(r.log.front().loss, WithinAbs(std::log(2.0), 1e-9));
}

TEST_CASE("runs are deterministic", "[trainer][stage]") {
  const ModelState s = tiny_state(5);
  StageConfig cfg = small(Stage::kCpt);
  cfg.epochs = 1;
  const StageResult a = run_stage(s, cfg, cpt_data(20));
  const StageResult b = run_stage(s, cfg, cpt_data(20));
  CHECK(serialize_checkpoint(a.state) == serialize_checkpoint(b.state));
  CHECK(metrics_csv(a.log) == metrics_csv(b.log));
  cfg.seed = 6;
  const StageResult c = run_stage(s, cfg, cpt_data(20));
  CHECK(metrics_csv(a.log) != metrics_csv(c.log));
}

TEST_CASE("metrics csv", "[trainer]") {
  const std::vector<MetricsRow> rows = {{1, "cpt", 0.1, 2.5}};
  const std::string csv = metrics_csv(rows);
  CHECK(csv.starts_with("step,stage,lr,loss\n"));
  CHECK(csv.find("1,cpt,0.10000000000000001,2.5") != std::string::npos);
}

TEST_CASE("checkpoint round trip", "[trainer][checkpoint]") {
  ModelState s = tiny_state(6);
  model::LoraConfig lc;
  lc.rank = 2;
  s.adapter = model::attach_lora(s.params, lc, 3);
  tiny::fill_lora_b(*s.adapter, 4);
  s.stage = "sft";
  s.step = 17;
  s.seed = 99;
  const auto dir = std::filesystem::temp_directory_path() / "qilin_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.ckpt";
  save_checkpoint(s, path);
  const ModelState back = load_checkpoint(path);
  CHECK(same_params(back.params, s.params));
  CHECK(back.params.config == s.params.config);
  REQUIRE(back.adapter.has_value());
  CHECK(back.adapter->config == s.adapter->config);
  for (const auto& [name, pair] : s.adapter->pairs) {
    CHECK(back.adapter->pairs.at(name).a.values() == pair.a.values());
    CHECK(back.adapter->pairs.at(name).b.values() == pair.b.values());
  }
  CHECK(back.vocab == s.vocab);
  CHECK(back.stage == "sft");
  CHECK(back.step == 17);
  CHECK(back.seed == 99);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(s));

  Rng rng(1);
  const data::PackedBlock block{tiny::random_ids(rng, 16, 0, 20)};
  CHECK(objectives::cpt_loss(back.params, &*back.adapter, block) ==
        objectives::cpt_loss(s.params, &*s.adapter, block));
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected", "[trainer][checkpoint]") {
  const std::string bytes = serialize_checkpoint(tiny_state(7));
  CHECK(bytes.starts_with("QLNM"));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);

  // Truncation at every region.
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{20},
                          bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(parse_checkpoint(std::string_view(bytes).substr(0, cut)), IntegrityError);
  }
  // Single flipped byte anywhere.
  Rng rng(8);
  for (int i = 0; i < 25; ++i) {
    std::string bad = bytes;
    bad[rng.below(bad.size())] ^= 0x20;
    CHECK_THROWS_AS(parse_checkpoint(bad), IntegrityError);
  }
  std::string version = bytes;
  version[4] = 9;
  CHECK_THROWS_MATCHES(parse_checkpoint(version), IntegrityError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("version")));
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_MATCHES(parse_checkpoint(magic), IntegrityError,
                       Catch::Matchers::MessageMatches(ContainsSubstring("offset")));

  const auto dir = std::filesystem::temp_directory_path() / "qilin_test_ckpt_bad";
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "t.ckpt", std::string_view(bytes).substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), IntegrityError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cpt checkpoint initializes sft", "[trainer][checkpoint]") {
  const ModelState s = tiny_state(8);
  StageConfig cfg = small(Stage::kCpt);
  cfg.epochs = 1;
  const StageResult cpt = run_stage(s, cfg, cpt_data(10));
  const ModelState loaded = parse_checkpoint(serialize_checkpoint(cpt.state));
  CHECK(loaded.stage == "cpt");
  const StageResult sft = run_stage(loaded, small(Stage::kSft), sft_data());
  CHECK(sft.state.stage == "sft");
  CHECK(same_params(sft.state.params, cpt.state.params));
}
