// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

namespace qilin {

// Decodes UTF-8 into Unicode scalar values. Throws InputError on malformed
// input, naming the byte offset.
std::u32string utf8_decode(std::string_view text);

void utf8_append(std::string& out, char32_t cp);
std::string utf8_encode(std::u32string_view cps);
std::string utf8_encode(char32_t cp);

// Number of Unicode scalars in a UTF-8 string.
std::size_t utf8_length(std::string_view text);

// Trims ASCII and ideographic whitespace from both ends.
std::string trim(std::string_view text);

}  // namespace qilin
