// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics and harnesses. Text metrics tokenize by Unicode
// character and score a single reference per candidate.

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qilin/data.hpp"
#include "qilin/model.hpp"

namespace qilin::eval {

// Letters A-E in ascending order, no duplicates, e.g. "AC".
using LetterSet = std::string;

// First maximal run of letters from valid in text, skipping the separators
// "、", ",", "，", "/" and spaces inside the run. Empty when there is none.
LetterSet extract_choice(std::string_view generated,
                         std::string_view valid = "ABCDE");

struct McqItem {
  std::string id;
  std::string question;
  std::map<char, std::string> options;
  LetterSet gold;
  std::string generated;
  // Optional reference answer text scored with BLEU/ROUGE.
  std::string reference;
};

// Throws ValidationError: fewer than 2 options, letters outside A-E, or gold
// letters that are not options.
void validate(const McqItem& item);
std::string option_letters(const McqItem& item);

// Exact set match. Throws InputError on empty or unequal-length input.
double accuracy(std::span<const LetterSet> gold, std::span<const LetterSet> pred);
// Support-weighted mean of one-vs-rest F1 over the distinct gold sets.
double weighted_f1(std::span<const LetterSet> gold, std::span<const LetterSet> pred);
// Both score extract_choice(generated, option letters) against gold.
double accuracy(std::span<const McqItem> items);
double weighted_f1(std::span<const McqItem> items);

// Geometric mean of clipped k-gram precisions for k = 1..n, a zero match
// count replaced by 1e-9, times min(1, exp(1 - r/c)). 0 for an empty
// candidate. Throws InputError when n is 0.
double bleu_n(std::u32string_view candidate, std::u32string_view reference,
              std::size_t n);
double bleu_n(std::string_view candidate, std::string_view reference,
              std::size_t n);
// F1 of clipped n-gram overlap. Throws InputError on an empty reference.
double rouge_n(std::u32string_view candidate, std::u32string_view reference,
               std::size_t n);
double rouge_n(std::string_view candidate, std::string_view reference,
               std::size_t n);
// F1 from the longest common subsequence length.
double rouge_l(std::u32string_view candidate, std::u32string_view reference);
double rouge_l(std::string_view candidate, std::string_view reference);
std::size_t lcs_length(std::u32string_view a, std::u32string_view b);

// exp of the token-mean next-token NLL over every block. Throws InputError
// on an empty block list.
double perplexity(const model::ModelParams& params,
                  const model::LoraAdapter* adapter,
                  std::span<const data::PackedBlock> blocks);

struct FewShotSpec {
  std::size_t k = 0;
  std::vector<std::pair<std::string, std::string>> exemplars;
  // Appended after every exemplar answer.
  std::string separator = "\n";
  std::string question_tag = "Q:";
  std::string answer_tag = "A:";

  void validate() const;
};

// "<Q>q1\n<A>a1<sep>...<Q>question\n<A>". Throws LengthError when max_chars
// is nonzero and the prompt has more characters.
std::string build_few_shot_prompt(const FewShotSpec& spec,
                                  std::string_view question,
                                  std::size_t max_chars = 0);
// Question followed by one "X. option" line per option.
std::string mcq_question_text(const McqItem& item);

struct EvalReport {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
  std::size_t n_items = 0;
  // Unscaled auxiliary numbers such as perplexity or preferred_win_rate.
  std::map<std::string, double> extras;
};

// Metric fields x100 plus n_items and the extras as they are.
nlohmann::json to_json(const EvalReport& r);
// Two-column table with Accuracy, Weighted F1, BLEU-1, BLEU-4, ROUGE-1,
// ROUGE-2, ROUGE-L (x100) and the extras.
std::string format_table(const EvalReport& r, std::string_view title);

struct DialogueItem {
  std::string prompt;
  std::string reference;
  std::string generated;
};

// Scores already generated text. Throws InputError on empty input.
EvalReport score_mcq(std::span<const McqItem> items);
EvalReport score_dialogue(std::span<const DialogueItem> items);

using TextGenerator = std::function<std::string(const std::string& prompt)>;

// Fills generated for every item (copies) and scores them. Generation
// errors are rethrown as EvaluationError naming the item index.
EvalReport evaluate_mcq(const TextGenerator& generate,
                        std::span<const McqItem> items,
                        const FewShotSpec& spec, std::size_t max_chars = 0,
                        std::vector<McqItem>* scored = nullptr);
EvalReport evaluate_dialogue(const TextGenerator& generate,
                             std::span<const DialogueItem> items,
                             std::vector<DialogueItem>* scored = nullptr);

// Prediction fixtures: {"id", "question", "options", "gold", "generated"}
// and {"prompt", "reference", "generated"} per line.
std::vector<McqItem> parse_mcq_jsonl(std::string_view contents);
std::vector<DialogueItem> parse_dialogue_jsonl(std::string_view contents);
nlohmann::json to_json(const McqItem& item);
nlohmann::json to_json(const DialogueItem& item);

}  // namespace qilin::eval
