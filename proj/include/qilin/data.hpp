// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Record types and the corpus-construction steps: knowledge-graph
// linearisation, dialogue flattening, instruction standardisation, block
// packing and JSONL dataset loading.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "qilin/vocab.hpp"

namespace qilin::data {

using nlohmann::json;

struct QaRecord {
  std::string question;
  std::string answer;
};

// Relation labels an entity may carry, in their declared output order.
enum class Relation {
  kCause,
  kSymptom,
  kCheck,
  kDepartment,
  kDrug,
  kComplication,
  kDiet,
};

std::string_view relation_key(Relation r);      // "cause", "symptom", ...
std::string_view relation_display(Relation r);  // "病因", "症状", ...
std::optional<Relation> parse_relation(std::string_view key);

struct KgEntity {
  std::string name;
  std::vector<std::pair<Relation, std::string>> relations;
};

enum class KgTemplate {
  // "X的症状：s1、s2。X的推荐用药：d1。"
  kSentence,
  // "X\n症状：s1、s2\n推荐用药：d1"
  kHeader,
};

enum class Speaker { kPatient, kDoctor };

struct DialogueRecord {
  std::vector<std::pair<Speaker, std::string>> turns;
};

struct ExamRecord {
  std::string question;
  // Option letter (A-E) -> option text.
  std::map<char, std::string> options;
  // Correct letters in ascending order, e.g. "B" or "AC".
  std::string answer;
  std::string explanation;
};

struct SftExample {
  std::string instruction;
  std::string input;
  std::vector<std::pair<std::string, std::string>> history;
  std::string output;

  bool operator==(const SftExample&) const = default;
};

struct PreferencePair {
  std::string prompt;
  std::string preferred;
  std::string rejected;

  bool operator==(const PreferencePair&) const = default;
};

struct PackedBlock {
  std::vector<int> tokens;
};

// --- validation -----------------------------------------------------------
// Each throws ValidationError describing the violated invariant.

void validate(const QaRecord& r);
void validate(const KgEntity& e);
void validate(const DialogueRecord& d);
void validate(const ExamRecord& r);
void validate(const SftExample& ex);
void validate(const PreferencePair& p);

// --- knowledge graph ------------------------------------------------------

struct LinearizeStats {
  std::size_t entities = 0;
  std::size_t empty_entities = 0;
};

// Relations are grouped by label in declared order with values sorted
// within a label, so the output does not depend on input order. An entity
// without relations yields "name。" and bumps stats->empty_entities.
std::string linearize_kg(const KgEntity& entity, KgTemplate tmpl,
                         LinearizeStats* stats = nullptr);

// --- dialogue -------------------------------------------------------------

std::string_view speaker_tag(Speaker s);  // "患者：" / "医生："

// Turns joined as "患者：...\n医生：...", one line per turn.
std::string flatten_dialogue_text(const DialogueRecord& d);
// One example per doctor turn; earlier exchanges become history.
std::vector<SftExample> flatten_dialogue_sft(const DialogueRecord& d);

// --- instruction standardisation ------------------------------------------

SftExample standardize(const QaRecord& r);
SftExample standardize(const ExamRecord& r);
// The final doctor turn with all earlier exchanges as history.
SftExample standardize(const DialogueRecord& d);
SftExample standardize(const SftExample& ex);

struct Rejection {
  std::size_t line = 0;  // 1-based; 0 when not read from a file
  std::string reason;
};

struct StandardizeLog {
  std::vector<Rejection> rejected;
};

// Dispatches on the "source" field ("qa", "exam", "dialogue",
// "instruction"), or on the field set when it is absent. Unknown or invalid
// records are logged and yield nullopt.
std::optional<SftExample> standardize_instruction(const json& raw,
                                                  StandardizeLog& log,
                                                  std::size_t line = 0);

// --- packing ----------------------------------------------------------------

// Encodes each doc followed by EOS and cuts the stream into consecutive
// blocks of block_size tokens; the trailing partial block is dropped.
std::vector<PackedBlock> pack_blocks(std::span<const std::string> docs,
                                     const model::Vocab& vocab,
                                     std::size_t block_size);

// --- JSONL ------------------------------------------------------------------

enum class Schema { kCpt, kSft, kDpo };

std::string_view schema_name(Schema s);
std::optional<Schema> parse_schema(std::string_view name);

json to_json(const SftExample& ex);
json to_json(const PreferencePair& p);
SftExample sft_from_json(const json& j);
PreferencePair dpo_from_json(const json& j);
json raw_to_json(const QaRecord& r);
json raw_to_json(const ExamRecord& r);
json raw_to_json(const DialogueRecord& d);
json raw_to_json(const KgEntity& e);
ExamRecord exam_from_json(const json& j);
DialogueRecord dialogue_from_json(const json& j);
KgEntity kg_from_json(const json& j);

struct DatasetStats {
  std::size_t count = 0;
  std::size_t token_count = 0;
  std::size_t bytes = 0;
};

struct Dataset {
  Schema schema = Schema::kCpt;
  std::vector<std::string> texts;              // cpt
  std::vector<SftExample> sft;                 // sft
  std::vector<PreferencePair> dpo;             // dpo
  DatasetStats stats;
  std::vector<Rejection> rejections;
};

// Character count of the text fields of a record, i.e. its length under
// the character tokenizer.
std::size_t token_count(const SftExample& ex);
std::size_t token_count(const PreferencePair& p);

// Throws InputError when the file cannot be read. Malformed lines and
// invariant violations are collected in Dataset::rejections with their
// line numbers.
Dataset load_dataset(const std::filesystem::path& path, Schema schema);
Dataset parse_dataset(std::string_view contents, Schema schema);

std::string write_jsonl(std::span<const json> records);
void save_jsonl(const std::filesystem::path& path, std::span<const json> records);

// Rows: name, samples, tokens, size.
std::string stats_table(
    std::span<const std::pair<std::string, DatasetStats>> rows);

}  // namespace qilin::data
