// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rendering of standardized instructions into model token sequences.
//
//   问：<history prompt 1>\n答：<history response 1>\n
//   ...
//   问：<instruction>[\n<input>]\n答：
//
// The rendered prompt is prefixed with BOS; the response is the output
// followed by EOS.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "qilin/data.hpp"
#include "qilin/vocab.hpp"

namespace qilin::data {

struct RenderedPair {
  std::vector<int> prompt;
  std::vector<int> response;
};

class PromptRenderer {
 public:
  PromptRenderer(const model::Vocab& vocab, std::size_t max_source_length,
                 std::size_t max_target_length);

  static std::string prompt_text(const SftExample& ex);
  static std::string prompt_text(const std::string& instruction);

  // Prompt tokens beyond max_source_length are cut from the front (BOS is
  // kept); response tokens beyond max_target_length are cut from the end.
  RenderedPair render(const SftExample& ex) const;
  RenderedPair render(const PreferencePair& pair, bool preferred) const;
  std::vector<int> render_prompt(const std::string& prompt_text) const;
  std::vector<int> render_response(const std::string& response) const;

  const model::Vocab& vocab() const { return *vocab_; }
  std::size_t max_source_length() const { return max_source_; }
  std::size_t max_target_length() const { return max_target_; }

 private:
  const model::Vocab* vocab_;
  std::size_t max_source_;
  std::size_t max_target_;
};

}  // namespace qilin::data
