// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Bundled synthetic medical corpus: templated disease facts rendered as
// knowledge-graph entities, encyclopedia text, QA pairs, dialogues, exam
// questions and preference pairs with degraded rejected answers.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qilin/data.hpp"
#include "qilin/evalkit.hpp"

namespace qilin::synth {

struct Disease {
  std::string name;
  std::string cause;
  std::vector<std::string> symptoms;
  std::string check;
  std::string department;
  std::string drug;
  std::string diet;
};

struct SynthOptions {
  std::size_t diseases = 12;
  std::uint64_t seed = 7;
};

struct RawCorpus {
  std::vector<Disease> diseases;
  std::vector<data::KgEntity> kg;
  std::vector<std::string> texts;  // encyclopedia passages
  std::vector<data::QaRecord> qa;
  std::vector<data::DialogueRecord> dialogues;
  std::vector<data::ExamRecord> exams;
  std::vector<data::SftExample> instructions;
  std::vector<data::PreferencePair> preferences;
  // Paraphrased passages never used for training.
  std::vector<std::string> heldout_texts;
  std::vector<eval::McqItem> eval_mcq;
  std::vector<eval::DialogueItem> eval_dialogue;
};

// Shared tail of every encyclopedia passage; long enough for the default
// dedup span so repeated copies get removed.
extern const char* const kDisclaimer;

// Deterministic for a given seed. Throws ConfigError when more diseases are
// requested than the name tables can form.
RawCorpus generate(const SynthOptions& options);

// One source-tagged JSON record per item: kg, text, qa, dialogue, exam,
// instruction, preference, heldout, eval_mcq, eval_dialogue. Disease tables are not
// written.
std::vector<nlohmann::json> to_raw_records(const RawCorpus& corpus);
// Inverse of to_raw_records. Throws InputError naming the record index on
// an unknown source tag or a malformed record.
RawCorpus from_raw_records(std::span<const nlohmann::json> records);

}  // namespace qilin::synth
