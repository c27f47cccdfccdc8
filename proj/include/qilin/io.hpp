// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace qilin {

// Whole-file read. Throws InputError when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over path, so readers
// never observe a partially written file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

}  // namespace qilin
