// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON file describing paths, model shape, the three
// stage configs, dedup and evaluation settings and the global seed.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qilin/dedup.hpp"
#include "qilin/model.hpp"
#include "qilin/synth.hpp"
#include "qilin/trainer.hpp"

namespace qilin::config {

struct Paths {
  std::filesystem::path data;
  std::filesystem::path checkpoints;
  std::filesystem::path reports;
  // Optional source-tagged raw JSONL; the synthetic corpus is generated
  // when empty.
  std::filesystem::path raw;
};

struct EvalSettings {
  std::size_t few_shot_k = 5;
  std::size_t max_new_tokens = 64;
  // Training instructions checked for exact-match recall; 0 means all.
  std::size_t exact_match_items = 0;
};

struct RunConfig {
  Paths paths;
  // vocab_size is filled from the built vocabulary.
  model::ModelConfig model;
  trainer::StageConfig cpt = trainer::StageConfig::defaults(trainer::Stage::kCpt);
  trainer::StageConfig sft = trainer::StageConfig::defaults(trainer::Stage::kSft);
  trainer::StageConfig dpo = trainer::StageConfig::defaults(trainer::Stage::kDpo);
  data::DedupOptions dedup;
  synth::SynthOptions synth;
  EvalSettings eval;
  std::uint64_t seed = 1234;

  const trainer::StageConfig& stage(trainer::Stage s) const;
  trainer::StageConfig& stage(trainer::Stage s);
};

// Default model for run configs: the desk shape with a 512-token context so
// the default source and target lengths fit.
model::ModelConfig default_model_config();

struct ConfigResult {
  std::optional<RunConfig> config;
  // "key.path: message" for every violation; config is empty when nonempty.
  std::vector<std::string> errors;
  // Unknown keys.
  std::vector<std::string> warnings;
};

// Every invariant is checked; nothing is returned unless all pass. A
// missing required key (paths.data, paths.checkpoints, paths.reports) is
// reported by name. Relative paths resolve against base_dir.
ConfigResult parse_config(const nlohmann::json& j,
                          const std::filesystem::path& base_dir = {});
ConfigResult validate_config(const std::filesystem::path& path);

// Applies QILIN_SEED when set: the global seed and every stage seed derive
// from it. Returns false on a malformed value.
bool apply_seed_override(RunConfig& cfg, const char* env_value);
void set_seed(RunConfig& cfg, std::uint64_t seed);

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace qilin::config
