// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "qilin/errors.hpp"
#include "qilin/io.hpp"
#include "qilin/utf8.hpp"

namespace qilin::model {
namespace {

constexpr std::string_view kSpecialNames[] = {"<bos>", "<eos>", "<pad>",
                                              "<sep>"};

std::string escape_symbol(char32_t c) {
  switch (c) {
    case U'\n': return "\\n";
    case U'\t': return "\\t";
    case U'\r': return "\\r";
    case U'\\': return "\\\\";
    default: return utf8_encode(c);
  }
}

char32_t unescape_symbol(std::string_view line, std::size_t line_no) {
  if (line == "\\n") return U'\n';
  if (line == "\\t") return U'\t';
  if (line == "\\r") return U'\r';
  if (line == "\\\\") return U'\\';
  const std::u32string cps = utf8_decode(line);
  if (cps.size() != 1) {
    throw IntegrityError("vocab line " + std::to_string(line_no + 1) +
                         ": expected one symbol, got '" + std::string(line) +
                         "'");
  }
  return cps[0];
}

}  // namespace

Vocab::Vocab() = default;

Vocab Vocab::from_chars(std::vector<char32_t> chars) {
  std::sort(chars.begin(), chars.end());
  chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
  Vocab v;
  v.chars_ = std::move(chars);
  for (std::size_t i = 0; i < v.chars_.size(); ++i) {
    v.id_of_[v.chars_[i]] = kNumSpecials + static_cast<int>(i);
  }
  return v;
}

Vocab Vocab::build(std::span<const std::string> corpus) {
  if (corpus.empty()) {
    throw InputError("build_vocab: empty corpus");
  }
  std::set<char32_t> seen;
  for (const std::string& text : corpus) {
    for (char32_t c : utf8_decode(text)) {
      seen.insert(c);
    }
  }
  return from_chars({seen.begin(), seen.end()});
}

int Vocab::id_of(char32_t c) const {
  const auto it = id_of_.find(c);
  if (it == id_of_.end()) {
    throw InputError("character U+" + std::to_string(static_cast<unsigned>(c)) +
                     " is not in the vocabulary");
  }
  return it->second;
}

std::string Vocab::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size()) {
    throw IndexError("token id " + std::to_string(id) + " outside [0, " +
                     std::to_string(size()) + ")");
  }
  if (id < kNumSpecials) {
    return std::string(kSpecialNames[id]);
  }
  return utf8_encode(chars_[static_cast<std::size_t>(id - kNumSpecials)]);
}

std::vector<int> Vocab::encode(std::string_view text) const {
  const std::u32string cps = utf8_decode(text);
  std::vector<int> ids;
  ids.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const auto it = id_of_.find(cps[i]);
    if (it == id_of_.end()) {
      throw InputError("unknown character '" + utf8_encode(cps[i]) +
                       "' at offset " + std::to_string(i));
    }
    ids.push_back(it->second);
  }
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= size()) {
      throw IndexError("token id " + std::to_string(id) + " outside [0, " +
                       std::to_string(size()) + ")");
    }
    if (id >= kNumSpecials) {
      utf8_append(out, chars_[static_cast<std::size_t>(id - kNumSpecials)]);
    }
  }
  return out;
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::string_view name : kSpecialNames) {
    out.append(name);
    out.push_back('\n');
  }
  for (char32_t c : chars_) {
    out += escape_symbol(c);
    out.push_back('\n');
  }
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  if (lines.size() < kNumSpecials) {
    throw IntegrityError("vocab file has fewer than 4 lines");
  }
  for (int i = 0; i < kNumSpecials; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kSpecialNames[i]) {
      throw IntegrityError("vocab line " + std::to_string(i + 1) +
                           ": expected " + std::string(kSpecialNames[i]));
    }
  }
  std::vector<char32_t> chars;
  for (std::size_t i = kNumSpecials; i < lines.size(); ++i) {
    chars.push_back(unescape_symbol(lines[i], i));
  }
  if (!std::is_sorted(chars.begin(), chars.end()) ||
      std::adjacent_find(chars.begin(), chars.end()) != chars.end()) {
    throw IntegrityError("vocab symbols are not in strictly ascending order");
  }
  return from_chars(std::move(chars));
}

void Vocab::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

}  // namespace qilin::model
