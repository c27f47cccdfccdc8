// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/render.hpp"

#include <algorithm>

#include "qilin/errors.hpp"

namespace qilin::data {

PromptRenderer::PromptRenderer(const model::Vocab& vocab,
                               std::size_t max_source_length,
                               std::size_t max_target_length)
    : vocab_(&vocab),
      max_source_(max_source_length),
      max_target_(max_target_length) {
  if (max_source_ < 2 || max_target_ < 1) {
    throw ConfigError("max_source_length must be >= 2 and max_target_length "
                      ">= 1");
  }
}

std::string PromptRenderer::prompt_text(const SftExample& ex) {
  std::string out;
  for (const auto& [p, r] : ex.history) {
    out += "问：" + p + "\n答：" + r + "\n";
  }
  out += "问：" + ex.instruction;
  if (!ex.input.empty()) {
    out += "\n" + ex.input;
  }
  out += "\n答：";
  return out;
}

std::string PromptRenderer::prompt_text(const std::string& instruction) {
  return "问：" + instruction + "\n答：";
}

std::vector<int> PromptRenderer::render_prompt(
    const std::string& prompt_text) const {
  const std::vector<int> body = vocab_->encode(prompt_text);
  std::vector<int> ids;
  ids.push_back(model::Vocab::kBos);
  const std::size_t keep = std::min(body.size(), max_source_ - 1);
  ids.insert(ids.end(), body.end() - static_cast<std::ptrdiff_t>(keep),
             body.end());
  return ids;
}

std::vector<int> PromptRenderer::render_response(
    const std::string& response) const {
  std::vector<int> ids = vocab_->encode(response);
  ids.push_back(model::Vocab::kEos);
  if (ids.size() > max_target_) {
    ids.resize(max_target_);
  }
  return ids;
}

RenderedPair PromptRenderer::render(const SftExample& ex) const {
  return {render_prompt(prompt_text(ex)), render_response(ex.output)};
}

RenderedPair PromptRenderer::render(const PreferencePair& pair,
                                    bool preferred) const {
  return {render_prompt(prompt_text(pair.prompt)),
          render_response(preferred ? pair.preferred : pair.rejected)};
}

}  // namespace qilin::data
