// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qilin::model {

// Character-level vocabulary. Ids 0-3 are the special symbols; characters
// follow in ascending code-point order.
class Vocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kSep = 3;
  static constexpr int kNumSpecials = 4;

  Vocab();

  // Every distinct Unicode scalar of the corpus. Throws InputError on an
  // empty corpus.
  static Vocab build(std::span<const std::string> corpus);
  static Vocab from_chars(std::vector<char32_t> chars);

  std::size_t size() const { return kNumSpecials + chars_.size(); }
  bool contains(char32_t c) const { return id_of_.contains(c); }
  int id_of(char32_t c) const;
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
  // Printable form: "<bos>", "<eos>", "<pad>", "<sep>" or the UTF-8 char.
  std::string symbol(int id) const;
  const std::vector<char32_t>& chars() const { return chars_; }

  // Throws InputError naming the first unknown character and its offset.
  std::vector<int> encode(std::string_view text) const;
  // Special ids decode to nothing. Throws IndexError on out-of-range ids.
  std::string decode(std::span<const int> ids) const;

  // One symbol per line, line number == id. Newline, tab, carriage return
  // and backslash are written as \n, \t, \r and \\.
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return chars_ == other.chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> id_of_;
};

}  // namespace qilin::model
