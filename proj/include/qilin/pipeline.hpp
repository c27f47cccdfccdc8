// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end plumbing shared by the command line tool and the acceptance
// suite: corpus building, stage training, evaluation and generation.
//
// Data directory layout written by build:
//   cpt.jsonl sft.jsonl dpo.jsonl heldout.jsonl
//   eval_mcq.jsonl eval_dialogue.jsonl vocab.txt stats.txt dedup_report.txt
// Checkpoints: <checkpoints>/<stage>.ckpt. Reports: <reports>/...

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qilin/config.hpp"
#include "qilin/data.hpp"
#include "qilin/dedup.hpp"
#include "qilin/evalkit.hpp"
#include "qilin/render.hpp"
#include "qilin/trainer.hpp"
#include "qilin/vocab.hpp"

namespace qilin::pipeline {

struct BuiltData {
  data::Dataset cpt;
  data::Dataset sft;
  data::Dataset dpo;
  data::Dataset heldout;
  std::vector<eval::McqItem> mcq;
  std::vector<eval::DialogueItem> dialogue;
  model::Vocab vocab;
  data::DedupReport dedup;
  std::string stats;
};

// Turns a raw corpus into the stage datasets: KG entities linearized,
// encyclopedia text, QA rendered as "问：q\n答：a" and dialogues flattened
// form the deduplicated CPT set; QA, exam, dialogue and instruction records
// are standardized into the SFT set.
BuiltData build_from_raw(const synth::RawCorpus& raw,
                         const data::DedupOptions& dedup);
// Reads paths.raw when set, otherwise generates the synthetic corpus.
BuiltData build_data(const config::RunConfig& cfg);
void write_data(const BuiltData& d, const std::filesystem::path& dir);
// Throws InputError when a file is missing or has rejected lines.
BuiltData load_data(const std::filesystem::path& dir);

std::filesystem::path checkpoint_path(const config::RunConfig& cfg,
                                      trainer::Stage stage);

// Random initialization sized for vocab.
trainer::ModelState initial_state(const config::RunConfig& cfg,
                                  const model::Vocab& vocab);

// Greedy completion of a rendered prompt, decoded without specials.
std::string generate_text(const trainer::ModelState& state,
                          const data::PromptRenderer& renderer,
                          const std::string& prompt_text,
                          std::size_t max_new_tokens);

data::PromptRenderer renderer_for(const config::RunConfig& cfg,
                                  const model::Vocab& vocab);

std::vector<data::PackedBlock> heldout_blocks(const config::RunConfig& cfg,
                                              const BuiltData& d);
double heldout_perplexity(const trainer::ModelState& state,
                          const config::RunConfig& cfg, const BuiltData& d);

// Fraction of the first n (0 = all) SFT training examples whose greedy
// completion equals the output exactly.
double train_exact_match(const trainer::ModelState& state,
                         const config::RunConfig& cfg, const BuiltData& d,
                         std::size_t n);

eval::FewShotSpec few_shot_spec(const config::RunConfig& cfg, const BuiltData& d);

eval::EvalReport evaluate_mcq(const trainer::ModelState& state,
                              const config::RunConfig& cfg, const BuiltData& d,
                              std::vector<eval::McqItem>* scored = nullptr);
// Dialogue generation metrics plus extras: perplexity on held-out text,
// preferred_win_rate and mean_margin over the preference pairs, and
// train_exact_match.
eval::EvalReport evaluate_dialogue(const trainer::ModelState& state,
                                   const config::RunConfig& cfg,
                                   const BuiltData& d,
                                   std::vector<eval::DialogueItem>* scored = nullptr);

using Logger = std::function<void(const std::string&)>;

// Subcommand bodies. Every output goes through an atomic write.
void run_data_build(const config::RunConfig& cfg, const Logger& log);
data::DedupReport run_data_dedup(const std::filesystem::path& input,
                                 const std::filesystem::path& output,
                                 const data::DedupOptions& options);
// init defaults to random weights for cpt and the previous stage's
// checkpoint for sft and dpo.
trainer::StageResult run_train(const config::RunConfig& cfg, trainer::Stage stage,
                               const std::optional<std::filesystem::path>& init,
                               const Logger& log);
// checkpoint defaults to the dpo checkpoint. Reports are written as
// <reports>/<tag>_<mcq|dialogue>.{json,txt} with tag the checkpoint stem.
eval::EvalReport run_eval(const config::RunConfig& cfg, bool mcq,
                          const std::optional<std::filesystem::path>& checkpoint,
                          const Logger& log);

}  // namespace qilin::pipeline
