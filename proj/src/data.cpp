// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/data.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "qilin/errors.hpp"
#include "qilin/io.hpp"
#include "qilin/utf8.hpp"

namespace qilin::data {
namespace {

constexpr Relation kAllRelations[] = {
    Relation::kCause,      Relation::kSymptom, Relation::kCheck,
    Relation::kDepartment, Relation::kDrug,    Relation::kComplication,
    Relation::kDiet,
};

bool blank(std::string_view s) { return trim(s).empty(); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) {
      out += sep;
    }
    out += parts[i];
  }
  return out;
}

std::string get_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) {
    throw ValidationError(std::string("missing field \"") + key + "\"");
  }
  if (!it->is_string()) {
    throw ValidationError(std::string("field \"") + key + "\" is not a string");
  }
  return it->get<std::string>();
}

std::string get_optional_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    return {};
  }
  if (!it->is_string()) {
    throw ValidationError(std::string("field \"") + key + "\" is not a string");
  }
  return it->get<std::string>();
}

std::vector<std::pair<std::string, std::string>> get_history(const json& j) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto it = j.find("history");
  if (it == j.end() || it->is_null()) {
    return out;
  }
  if (!it->is_array()) {
    throw ValidationError("field \"history\" is not an array");
  }
  for (const json& pair : *it) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() ||
        !pair[1].is_string()) {
      throw ValidationError("history entries must be [prompt, response]");
    }
    out.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
  }
  return out;
}

// Normalises an answer given as "AC", "A,C", ["A","C"] into sorted letters.
std::string normalize_letters(const json& j) {
  std::string letters;
  const auto take = [&](const std::string& s) {
    for (char c : s) {
      if (c >= 'A' && c <= 'E') {
        letters.push_back(c);
      }
    }
  };
  if (j.is_string()) {
    take(j.get<std::string>());
  } else if (j.is_array()) {
    for (const json& e : j) {
      if (e.is_string()) {
        take(e.get<std::string>());
      }
    }
  } else {
    throw ValidationError("answer must be a string or array of letters");
  }
  std::sort(letters.begin(), letters.end());
  letters.erase(std::unique(letters.begin(), letters.end()), letters.end());
  return letters;
}

}  // namespace

// --- relations ----------------------------------------------------------

std::string_view relation_key(Relation r) {
  switch (r) {
    case Relation::kCause: return "cause";
    case Relation::kSymptom: return "symptom";
    case Relation::kCheck: return "check";
    case Relation::kDepartment: return "department";
    case Relation::kDrug: return "drug";
    case Relation::kComplication: return "complication";
    case Relation::kDiet: return "diet";
  }
  return "unknown";
}

std::string_view relation_display(Relation r) {
  switch (r) {
    case Relation::kCause: return "病因";
    case Relation::kSymptom: return "症状";
    case Relation::kCheck: return "检查";
    case Relation::kDepartment: return "就诊科室";
    case Relation::kDrug: return "推荐用药";
    case Relation::kComplication: return "并发症";
    case Relation::kDiet: return "饮食建议";
  }
  return "";
}

std::optional<Relation> parse_relation(std::string_view key) {
  for (Relation r : kAllRelations) {
    if (relation_key(r) == key) {
      return r;
    }
  }
  return std::nullopt;
}

// --- validation -----------------------------------------------------------

void validate(const QaRecord& r) {
  if (blank(r.question) || blank(r.answer)) {
    throw ValidationError("qa record needs a nonempty question and answer");
  }
}

void validate(const KgEntity& e) {
  if (blank(e.name)) {
    throw ValidationError("kg entity name is empty");
  }
  for (const auto& [rel, value] : e.relations) {
    if (blank(value)) {
      throw ValidationError("kg entity " + e.name + " has an empty " +
                            std::string(relation_key(rel)) + " value");
    }
  }
}

void validate(const DialogueRecord& d) {
  if (d.turns.size() < 2) {
    throw ValidationError("dialogue needs at least 2 turns, got " +
                          std::to_string(d.turns.size()));
  }
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const Speaker expected = i % 2 == 0 ? Speaker::kPatient : Speaker::kDoctor;
    if (d.turns[i].first != expected) {
      throw ValidationError("dialogue turn " + std::to_string(i) +
                            " breaks patient/doctor alternation");
    }
    if (blank(d.turns[i].second)) {
      throw ValidationError("dialogue turn " + std::to_string(i) + " is empty");
    }
  }
}

void validate(const ExamRecord& r) {
  if (blank(r.question)) {
    throw ValidationError("exam question is empty");
  }
  if (r.options.size() < 2) {
    throw ValidationError("exam record needs at least 2 options");
  }
  if (r.answer.empty()) {
    throw ValidationError("exam record has no answer letter");
  }
  for (char c : r.answer) {
    if (!r.options.contains(c)) {
      throw ValidationError(std::string("exam answer letter ") + c +
                            " is not an option");
    }
  }
}

void validate(const SftExample& ex) {
  if (blank(ex.instruction)) {
    throw ValidationError("sft example has an empty instruction");
  }
  if (blank(ex.output)) {
    throw ValidationError("sft example has an empty output");
  }
}

void validate(const PreferencePair& p) {
  if (blank(p.prompt) || blank(p.preferred) || blank(p.rejected)) {
    throw ValidationError("preference pair fields must be nonempty");
  }
  if (p.preferred == p.rejected) {
    throw ValidationError("preferred and rejected responses are identical");
  }
}

// --- knowledge graph ------------------------------------------------------

std::string linearize_kg(const KgEntity& entity, KgTemplate tmpl,
                         LinearizeStats* stats) {
  validate(entity);
  if (stats != nullptr) {
    ++stats->entities;
  }
  const std::string name = trim(entity.name);
  if (entity.relations.empty()) {
    if (stats != nullptr) {
      ++stats->empty_entities;
    }
    return name + "。";
  }
  std::map<Relation, std::vector<std::string>> grouped;
  for (const auto& [rel, value] : entity.relations) {
    grouped[rel].push_back(trim(value));
  }
  std::string out;
  if (tmpl == KgTemplate::kHeader) {
    out = name;
  }
  for (auto& [rel, values] : grouped) {
    std::sort(values.begin(), values.end());
    if (tmpl == KgTemplate::kSentence) {
      out += name + "的" + std::string(relation_display(rel)) + "：" +
             join(values, "、") + "。";
    } else {
      out += "\n" + std::string(relation_display(rel)) + "：" +
             join(values, "、");
    }
  }
  return out;
}

// --- dialogue -------------------------------------------------------------

std::string_view speaker_tag(Speaker s) {
  return s == Speaker::kPatient ? "患者：" : "医生：";
}

std::string flatten_dialogue_text(const DialogueRecord& d) {
  validate(d);
  std::string out;
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    if (i > 0) {
      out += "\n";
    }
    out += std::string(speaker_tag(d.turns[i].first)) + d.turns[i].second;
  }
  return out;
}

std::vector<SftExample> flatten_dialogue_sft(const DialogueRecord& d) {
  validate(d);
  std::vector<SftExample> out;
  std::vector<std::pair<std::string, std::string>> history;
  for (std::size_t i = 1; i < d.turns.size(); i += 2) {
    SftExample ex;
    ex.instruction = trim(d.turns[i - 1].second);
    ex.output = trim(d.turns[i].second);
    ex.history = history;
    out.push_back(ex);
    history.emplace_back(ex.instruction, ex.output);
  }
  return out;
}

// --- standardisation --------------------------------------------------------

SftExample standardize(const QaRecord& r) {
  validate(r);
  SftExample ex;
  ex.instruction = trim(r.question);
  ex.output = trim(r.answer);
  return ex;
}

SftExample standardize(const ExamRecord& r) {
  validate(r);
  SftExample ex;
  ex.instruction = trim(r.question);
  for (const auto& [letter, text] : r.options) {
    ex.instruction += "\n" + std::string(1, letter) + ". " + trim(text);
  }
  ex.output = "答案：" + r.answer + "。";
  const std::string expl = trim(r.explanation);
  if (!expl.empty()) {
    ex.output += expl;
  }
  return ex;
}

SftExample standardize(const DialogueRecord& d) {
  std::vector<SftExample> all = flatten_dialogue_sft(d);
  return all.back();
}

SftExample standardize(const SftExample& ex) {
  SftExample out;
  out.instruction = trim(ex.instruction);
  out.input = trim(ex.input);
  for (const auto& [p, r] : ex.history) {
    out.history.emplace_back(trim(p), trim(r));
  }
  out.output = trim(ex.output);
  validate(out);
  return out;
}

std::optional<SftExample> standardize_instruction(const json& raw,
                                                  StandardizeLog& log,
                                                  std::size_t line) {
  try {
    if (!raw.is_object()) {
      throw ValidationError("record is not a JSON object");
    }
    std::string source = get_optional_string(raw, "source");
    if (source.empty()) {
      if (raw.contains("instruction") && raw.contains("output")) {
        source = "instruction";
      } else if (raw.contains("turns")) {
        source = "dialogue";
      } else if (raw.contains("question") && raw.contains("options")) {
        source = "exam";
      } else if (raw.contains("question") && raw.contains("answer")) {
        source = "qa";
      }
    }
    if (source == "qa") {
      return standardize(
          QaRecord{get_string(raw, "question"), get_string(raw, "answer")});
    }
    if (source == "exam") {
      return standardize(exam_from_json(raw));
    }
    if (source == "dialogue") {
      return standardize(dialogue_from_json(raw));
    }
    if (source == "instruction") {
      return standardize(sft_from_json(raw));
    }
    throw ValidationError(source.empty() ? "unrecognised record schema"
                                         : "unknown source '" + source + "'");
  } catch (const Error& e) {
    log.rejected.push_back({line, e.what()});
  } catch (const json::exception& e) {
    log.rejected.push_back({line, e.what()});
  }
  return std::nullopt;
}

// --- packing ----------------------------------------------------------------

std::vector<PackedBlock> pack_blocks(std::span<const std::string> docs,
                                     const model::Vocab& vocab,
                                     std::size_t block_size) {
  if (block_size < 2) {
    throw ConfigError("block_size must be >= 2, got " +
                      std::to_string(block_size));
  }
  std::vector<int> stream;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    try {
      const std::vector<int> ids = vocab.encode(docs[i]);
      stream.insert(stream.end(), ids.begin(), ids.end());
    } catch (const InputError& e) {
      throw InputError("document " + std::to_string(i) + ": " + e.what());
    }
    stream.push_back(model::Vocab::kEos);
  }
  std::vector<PackedBlock> blocks;
  for (std::size_t start = 0; start + block_size <= stream.size();
       start += block_size) {
    blocks.push_back({std::vector<int>(
        stream.begin() + static_cast<std::ptrdiff_t>(start),
        stream.begin() + static_cast<std::ptrdiff_t>(start + block_size))});
  }
  return blocks;
}

// --- JSON -----------------------------------------------------------------

std::string_view schema_name(Schema s) {
  switch (s) {
    case Schema::kCpt: return "cpt";
    case Schema::kSft: return "sft";
    case Schema::kDpo: return "dpo";
  }
  return "";
}

std::optional<Schema> parse_schema(std::string_view name) {
  if (name == "cpt") return Schema::kCpt;
  if (name == "sft") return Schema::kSft;
  if (name == "dpo") return Schema::kDpo;
  return std::nullopt;
}

json to_json(const SftExample& ex) {
  json history = json::array();
  for (const auto& [p, r] : ex.history) {
    history.push_back(json::array({p, r}));
  }
  return json{{"instruction", ex.instruction},
              {"input", ex.input},
              {"history", history},
              {"output", ex.output}};
}

json to_json(const PreferencePair& p) {
  return json{{"prompt", p.prompt},
              {"chosen", p.preferred},
              {"rejected", p.rejected}};
}

SftExample sft_from_json(const json& j) {
  SftExample ex;
  ex.instruction = get_string(j, "instruction");
  ex.input = get_optional_string(j, "input");
  ex.history = get_history(j);
  ex.output = get_string(j, "output");
  return ex;
}

PreferencePair dpo_from_json(const json& j) {
  return {get_string(j, "prompt"), get_string(j, "chosen"),
          get_string(j, "rejected")};
}

json raw_to_json(const QaRecord& r) {
  return json{{"source", "qa"}, {"question", r.question}, {"answer", r.answer}};
}

json raw_to_json(const ExamRecord& r) {
  json options = json::object();
  for (const auto& [letter, text] : r.options) {
    options[std::string(1, letter)] = text;
  }
  return json{{"source", "exam"},
              {"question", r.question},
              {"options", options},
              {"answer", r.answer},
              {"explanation", r.explanation}};
}

json raw_to_json(const DialogueRecord& d) {
  json turns = json::array();
  for (const auto& [speaker, text] : d.turns) {
    turns.push_back(json::array(
        {speaker == Speaker::kPatient ? "patient" : "doctor", text}));
  }
  return json{{"source", "dialogue"}, {"turns", turns}};
}

json raw_to_json(const KgEntity& e) {
  json rels = json::array();
  for (const auto& [rel, value] : e.relations) {
    rels.push_back(json::array({std::string(relation_key(rel)), value}));
  }
  return json{{"source", "kg"}, {"name", e.name}, {"relations", rels}};
}

ExamRecord exam_from_json(const json& j) {
  ExamRecord r;
  r.question = get_string(j, "question");
  const auto opts = j.find("options");
  if (opts == j.end() || !opts->is_object()) {
    throw ValidationError("exam record needs an \"options\" object");
  }
  for (const auto& [key, value] : opts->items()) {
    if (key.size() != 1 || key[0] < 'A' || key[0] > 'E' || !value.is_string()) {
      throw ValidationError("exam option keys must be letters A-E");
    }
    r.options[key[0]] = value.get<std::string>();
  }
  const auto ans = j.find("answer");
  if (ans == j.end()) {
    throw ValidationError("missing field \"answer\"");
  }
  r.answer = normalize_letters(*ans);
  r.explanation = get_optional_string(j, "explanation");
  validate(r);
  return r;
}

DialogueRecord dialogue_from_json(const json& j) {
  const auto it = j.find("turns");
  if (it == j.end() || !it->is_array()) {
    throw ValidationError("dialogue record needs a \"turns\" array");
  }
  DialogueRecord d;
  for (const json& turn : *it) {
    if (!turn.is_array() || turn.size() != 2 || !turn[0].is_string() ||
        !turn[1].is_string()) {
      throw ValidationError("dialogue turns must be [speaker, text]");
    }
    const std::string who = turn[0].get<std::string>();
    Speaker s;
    if (who == "patient") {
      s = Speaker::kPatient;
    } else if (who == "doctor") {
      s = Speaker::kDoctor;
    } else {
      throw ValidationError("unknown speaker '" + who + "'");
    }
    d.turns.emplace_back(s, turn[1].get<std::string>());
  }
  validate(d);
  return d;
}

KgEntity kg_from_json(const json& j) {
  KgEntity e;
  e.name = get_string(j, "name");
  const auto it = j.find("relations");
  if (it != j.end()) {
    if (!it->is_array()) {
      throw ValidationError("kg \"relations\" must be an array");
    }
    for (const json& rel : *it) {
      if (!rel.is_array() || rel.size() != 2 || !rel[0].is_string() ||
          !rel[1].is_string()) {
        throw ValidationError("kg relations must be [label, value]");
      }
      const auto label = parse_relation(rel[0].get<std::string>());
      if (!label) {
        throw ValidationError("undeclared relation label '" +
                              rel[0].get<std::string>() + "'");
      }
      e.relations.emplace_back(*label, rel[1].get<std::string>());
    }
  }
  validate(e);
  return e;
}

// --- datasets ---------------------------------------------------------------

std::size_t token_count(const SftExample& ex) {
  std::size_t n = utf8_length(ex.instruction) + utf8_length(ex.input) +
                  utf8_length(ex.output);
  for (const auto& [p, r] : ex.history) {
    n += utf8_length(p) + utf8_length(r);
  }
  return n;
}

std::size_t token_count(const PreferencePair& p) {
  return utf8_length(p.prompt) + utf8_length(p.preferred) +
         utf8_length(p.rejected);
}

Dataset parse_dataset(std::string_view contents, Schema schema) {
  Dataset ds;
  ds.schema = schema;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < contents.size()) {
    std::size_t end = contents.find('\n', start);
    if (end == std::string_view::npos) {
      end = contents.size();
    }
    const std::string_view line = contents.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    try {
      const json j = json::parse(line);
      if (!j.is_object()) {
        throw ValidationError("line is not a JSON object");
      }
      switch (schema) {
        case Schema::kCpt: {
          std::string text = get_string(j, "text");
          if (blank(text)) {
            throw ValidationError("cpt record has empty text");
          }
          ds.stats.token_count += utf8_length(text);
          ds.texts.push_back(std::move(text));
          break;
        }
        case Schema::kSft: {
          SftExample ex = sft_from_json(j);
          validate(ex);
          ds.stats.token_count += token_count(ex);
          ds.sft.push_back(std::move(ex));
          break;
        }
        case Schema::kDpo: {
          PreferencePair p = dpo_from_json(j);
          validate(p);
          ds.stats.token_count += token_count(p);
          ds.dpo.push_back(std::move(p));
          break;
        }
      }
      ++ds.stats.count;
      ds.stats.bytes += line.size() + 1;
    } catch (const json::exception& e) {
      ds.rejections.push_back({line_no, std::string("malformed JSON: ") + e.what()});
    } catch (const Error& e) {
      ds.rejections.push_back({line_no, e.what()});
    }
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, Schema schema) {
  return parse_dataset(read_file(path), schema);
}

std::string write_jsonl(std::span<const json> records) {
  std::string out;
  for (const json& r : records) {
    out += r.dump();
    out.push_back('\n');
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path,
                std::span<const json> records) {
  write_file_atomic(path, write_jsonl(records));
}

std::string stats_table(
    std::span<const std::pair<std::string, DatasetStats>> rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-16s %10s %12s %12s\n", "subset",
                "# samples", "# tokens", "size");
  out << buf;
  for (const auto& [name, s] : rows) {
    const double kb = static_cast<double>(s.bytes) / 1024.0;
    std::snprintf(buf, sizeof(buf), "%-16s %10zu %12zu %10.1fKB\n",
                  name.c_str(), s.count, s.token_count, kb);
    out << buf;
  }
  return out.str();
}

}  // namespace qilin::data
