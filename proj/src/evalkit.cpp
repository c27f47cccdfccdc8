// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "qilin/errors.hpp"
#include "qilin/objectives.hpp"
#include "qilin/utf8.hpp"

namespace qilin::eval {

using nlohmann::json;

namespace {

constexpr double kBleuEpsilon = 1e-9;

bool is_separator(char32_t c) {
  return c == U'、' || c == U',' || c == U'，' || c == U'/' || c == U' ' ||
         c == U'　' || c == U'\t';
}

std::map<std::u32string_view, std::size_t> ngram_counts(std::u32string_view s,
                                                        std::size_t n) {
  std::map<std::u32string_view, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[s.substr(i, n)];
  }
  return counts;
}

std::size_t clipped_overlap(std::u32string_view cand, std::u32string_view ref,
                            std::size_t n) {
  const auto c = ngram_counts(cand, n);
  const auto r = ngram_counts(ref, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : c) {
    const auto it = r.find(gram);
    if (it != r.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap == 0.0 || cand_total == 0.0 || ref_total == 0.0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a == 0) throw InputError("metric needs at least one item");
  if (a != b) {
    throw InputError("gold and prediction lists differ in length: " +
                     std::to_string(a) + " vs " + std::to_string(b));
  }
}

std::vector<LetterSet> predictions(std::span<const McqItem> items) {
  std::vector<LetterSet> out;
  out.reserve(items.size());
  for (const McqItem& it : items) {
    out.push_back(extract_choice(it.generated, option_letters(it)));
  }
  return out;
}

std::vector<LetterSet> golds(std::span<const McqItem> items) {
  std::vector<LetterSet> out;
  for (const McqItem& it : items) out.push_back(it.gold);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

LetterSet extract_choice(std::string_view generated, std::string_view valid) {
  const std::u32string text = utf8_decode(generated);
  const auto ok = [&](char32_t c) {
    return c < 128 && valid.find(static_cast<char>(c)) != std::string_view::npos;
  };
  std::set<char> letters;
  std::size_t i = 0;
  while (i < text.size() && !ok(text[i])) ++i;
  for (; i < text.size(); ++i) {
    if (ok(text[i])) {
      letters.insert(static_cast<char>(text[i]));
    } else if (!is_separator(text[i])) {
      break;
    }
  }
  return LetterSet(letters.begin(), letters.end());
}

void validate(const McqItem& item) {
  if (item.options.size() < 2) {
    throw ValidationError("mcq item " + item.id + " has fewer than 2 options");
  }
  for (const auto& [letter, text] : item.options) {
    if (letter < 'A' || letter > 'E') {
      throw ValidationError("mcq item " + item.id + " has option letter outside A-E");
    }
  }
  if (item.gold.empty()) {
    throw ValidationError("mcq item " + item.id + " has no gold answer");
  }
  for (char g : item.gold) {
    if (!item.options.contains(g)) {
      throw ValidationError("mcq item " + item.id + " gold letter " +
                            std::string(1, g) + " is not an option");
    }
  }
}

std::string option_letters(const McqItem& item) {
  std::string s;
  for (const auto& [letter, text] : item.options) s.push_back(letter);
  return s;
}

double accuracy(std::span<const LetterSet> gold, std::span<const LetterSet> pred) {
  check_lengths(gold.size(), pred.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double weighted_f1(std::span<const LetterSet> gold, std::span<const LetterSet> pred) {
  check_lengths(gold.size(), pred.size());
  std::map<LetterSet, std::size_t> support;
  for (const LetterSet& g : gold) ++support[g];
  double total = 0.0;
  for (const auto& [label, count] : support) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i] == label;
      const bool p = pred[i] == label;
      if (g && p) ++tp;
      if (!g && p) ++fp;
      if (g && !p) ++fn;
    }
    const double score = 2.0 * static_cast<double>(tp) /
                         static_cast<double>(2 * tp + fp + fn);
    total += score * static_cast<double>(count);
  }
  return total / static_cast<double>(gold.size());
}

double accuracy(std::span<const McqItem> items) {
  return accuracy(golds(items), predictions(items));
}

double weighted_f1(std::span<const McqItem> items) {
  return weighted_f1(golds(items), predictions(items));
}

double bleu_n(std::u32string_view candidate, std::u32string_view reference,
              std::size_t n) {
  if (n == 0) throw InputError("bleu_n: n must be >= 1");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double total = candidate.size() >= k
                             ? static_cast<double>(candidate.size() - k + 1)
                             : 0.0;
    const double matches =
        static_cast<double>(clipped_overlap(candidate, reference, k));
    const double p = total == 0.0 ? kBleuEpsilon
                                   : (matches == 0.0 ? kBleuEpsilon : matches) / total;
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = std::min(1.0, std::exp(1.0 - r / c));
  return bp * std::exp(log_sum / static_cast<double>(n));
}

double bleu_n(std::string_view candidate, std::string_view reference,
              std::size_t n) {
  return bleu_n(utf8_decode(candidate), utf8_decode(reference), n);
}

double rouge_n(std::u32string_view candidate, std::u32string_view reference,
               std::size_t n) {
  if (n == 0) throw InputError("rouge_n: n must be >= 1");
  if (reference.empty()) throw InputError("rouge: empty reference");
  const auto total = [n](std::u32string_view s) {
    return s.size() >= n ? static_cast<double>(s.size() - n + 1) : 0.0;
  };
  return f1(static_cast<double>(clipped_overlap(candidate, reference, n)),
            total(candidate), total(reference));
}

double rouge_n(std::string_view candidate, std::string_view reference,
               std::size_t n) {
  return rouge_n(utf8_decode(candidate), utf8_decode(reference), n);
}

std::size_t lcs_length(std::u32string_view a, std::u32string_view b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::u32string_view candidate, std::u32string_view reference) {
  if (reference.empty()) throw InputError("rouge: empty reference");
  return f1(static_cast<double>(lcs_length(candidate, reference)),
            static_cast<double>(candidate.size()),
            static_cast<double>(reference.size()));
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(utf8_decode(candidate), utf8_decode(reference));
}

double perplexity(const model::ModelParams& params,
                  const model::LoraAdapter* adapter,
                  std::span<const data::PackedBlock> blocks) {
  if (blocks.empty()) throw InputError("perplexity: no blocks");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const data::PackedBlock& b : blocks) {
    const std::size_t t = b.tokens.size() - 1;
    nll += objectives::cpt_loss(params, adapter, b) * static_cast<double>(t);
    tokens += t;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

void FewShotSpec::validate() const {
  if (k != exemplars.size()) {
    throw ConfigError("few-shot k is " + std::to_string(k) + " but " +
                      std::to_string(exemplars.size()) + " exemplars given");
  }
}

std::string build_few_shot_prompt(const FewShotSpec& spec,
                                  std::string_view question,
                                  std::size_t max_chars) {
  spec.validate();
  std::string out;
  for (const auto& [q, a] : spec.exemplars) {
    out += spec.question_tag + q + "\n" + spec.answer_tag + a + spec.separator;
  }
  out += spec.question_tag;
  out += question;
  out += "\n" + spec.answer_tag;
  if (max_chars != 0) {
    const std::size_t len = utf8_length(out);
    if (len > max_chars) {
      throw LengthError("few-shot prompt has " + std::to_string(len) +
                        " characters, limit is " + std::to_string(max_chars));
    }
  }
  return out;
}

std::string mcq_question_text(const McqItem& item) {
  std::string out = item.question;
  for (const auto& [letter, text] : item.options) {
    out += "\n";
    out.push_back(letter);
    out += ". " + text;
  }
  return out;
}

json to_json(const EvalReport& r) {
  json j = {{"accuracy", 100.0 * r.accuracy}, {"weighted_f1", 100.0 * r.weighted_f1},
            {"bleu1", 100.0 * r.bleu1},       {"bleu4", 100.0 * r.bleu4},
            {"rouge1", 100.0 * r.rouge1},     {"rouge2", 100.0 * r.rouge2},
            {"rougeL", 100.0 * r.rougeL},     {"n_items", r.n_items}};
  json extras = json::object();
  for (const auto& [k, v] : r.extras) extras[k] = v;
  j["extras"] = extras;
  return j;
}

std::string format_table(const EvalReport& r, std::string_view title) {
  std::ostringstream out;
  out << title << " (n=" << r.n_items << ")\n";
  const std::pair<const char*, double> rows[] = {
      {"Accuracy", r.accuracy}, {"Weighted F1", r.weighted_f1},
      {"BLEU-1", r.bleu1},      {"BLEU-4", r.bleu4},
      {"ROUGE-1", r.rouge1},    {"ROUGE-2", r.rouge2},
      {"ROUGE-L", r.rougeL}};
  for (const auto& [name, v] : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %-20s %8s\n", name, fmt(100.0 * v).c_str());
    out << buf;
  }
  for (const auto& [name, v] : r.extras) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %-20s %8.4f\n", name.c_str(), v);
    out << buf;
  }
  return out.str();
}

EvalReport score_mcq(std::span<const McqItem> items) {
  if (items.empty()) throw InputError("score_mcq: no items");
  for (const McqItem& it : items) validate(it);
  EvalReport r;
  r.n_items = items.size();
  r.accuracy = accuracy(items);
  r.weighted_f1 = weighted_f1(items);
  std::size_t with_ref = 0;
  for (const McqItem& it : items) {
    if (it.reference.empty()) continue;
    ++with_ref;
    r.bleu1 += bleu_n(it.generated, it.reference, 1);
    r.bleu4 += bleu_n(it.generated, it.reference, 4);
    r.rouge1 += rouge_n(it.generated, it.reference, 1);
    r.rouge2 += rouge_n(it.generated, it.reference, 2);
    r.rougeL += rouge_l(it.generated, it.reference);
  }
  if (with_ref > 0) {
    const double d = static_cast<double>(with_ref);
    r.bleu1 /= d;
    r.bleu4 /= d;
    r.rouge1 /= d;
    r.rouge2 /= d;
    r.rougeL /= d;
  }
  return r;
}

EvalReport score_dialogue(std::span<const DialogueItem> items) {
  if (items.empty()) throw InputError("score_dialogue: no items");
  EvalReport r;
  r.n_items = items.size();
  std::size_t exact = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const DialogueItem& it = items[i];
    if (it.reference.empty()) {
      throw InputError("dialogue item " + std::to_string(i) + " has an empty reference");
    }
    r.bleu1 += bleu_n(it.generated, it.reference, 1);
    r.bleu4 += bleu_n(it.generated, it.reference, 4);
    r.rouge1 += rouge_n(it.generated, it.reference, 1);
    r.rouge2 += rouge_n(it.generated, it.reference, 2);
    r.rougeL += rouge_l(it.generated, it.reference);
    if (it.generated == it.reference) ++exact;
  }
  const double d = static_cast<double>(items.size());
  r.bleu1 /= d;
  r.bleu4 /= d;
  r.rouge1 /= d;
  r.rouge2 /= d;
  r.rougeL /= d;
  r.accuracy = static_cast<double>(exact) / d;
  r.extras["exact_match"] = r.accuracy;
  return r;
}

EvalReport evaluate_mcq(const TextGenerator& generate,
                        std::span<const McqItem> items,
                        const FewShotSpec& spec, std::size_t max_chars,
                        std::vector<McqItem>* scored) {
  if (items.empty()) throw InputError("evaluate_mcq: no items");
  std::vector<McqItem> out(items.begin(), items.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    try {
      validate(out[i]);
      out[i].generated = generate(
          build_few_shot_prompt(spec, mcq_question_text(out[i]), max_chars));
    } catch (const std::exception& e) {
      throw EvaluationError("mcq item " + std::to_string(i) + ": " + e.what());
    }
  }
  EvalReport r = score_mcq(out);
  if (scored != nullptr) *scored = std::move(out);
  return r;
}

EvalReport evaluate_dialogue(const TextGenerator& generate,
                             std::span<const DialogueItem> items,
                             std::vector<DialogueItem>* scored) {
  if (items.empty()) throw InputError("evaluate_dialogue: no items");
  std::vector<DialogueItem> out(items.begin(), items.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    try {
      out[i].generated = generate(out[i].prompt);
    } catch (const std::exception& e) {
      throw EvaluationError("dialogue item " + std::to_string(i) + ": " + e.what());
    }
  }
  EvalReport r = score_dialogue(out);
  if (scored != nullptr) *scored = std::move(out);
  return r;
}

std::vector<McqItem> parse_mcq_jsonl(std::string_view contents) {
  std::vector<McqItem> items;
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      McqItem it;
      if (j.contains("id")) {
        it.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
      }
      it.question = j.at("question").get<std::string>();
      for (const auto& [k, v] : j.at("options").items()) {
        if (k.size() != 1) throw ValidationError("option key '" + k + "'");
        it.options[k[0]] = v.get<std::string>();
      }
      std::string gold = j.at("gold").get<std::string>();
      std::sort(gold.begin(), gold.end());
      gold.erase(std::unique(gold.begin(), gold.end()), gold.end());
      it.gold = gold;
      it.generated = j.value("generated", std::string());
      it.reference = j.value("reference", std::string());
      validate(it);
      items.push_back(std::move(it));
    } catch (const std::exception& e) {
      throw InputError("mcq fixture line " + std::to_string(n) + ": " + e.what());
    }
  }
  return items;
}

std::vector<DialogueItem> parse_dialogue_jsonl(std::string_view contents) {
  std::vector<DialogueItem> items;
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      items.push_back({j.at("prompt").get<std::string>(),
                       j.at("reference").get<std::string>(),
                       j.value("generated", std::string())});
    } catch (const std::exception& e) {
      throw InputError("dialogue fixture line " + std::to_string(n) + ": " + e.what());
    }
  }
  return items;
}

json to_json(const McqItem& item) {
  json options = json::object();
  for (const auto& [k, v] : item.options) options[std::string(1, k)] = v;
  json j = {{"id", item.id},
            {"question", item.question},
            {"options", options},
            {"gold", item.gold},
            {"generated", item.generated}};
  if (!item.reference.empty()) j["reference"] = item.reference;
  return j;
}

json to_json(const DialogueItem& item) {
  return {{"prompt", item.prompt},
          {"reference", item.reference},
          {"generated", item.generated}};
}

}  // namespace qilin::eval
