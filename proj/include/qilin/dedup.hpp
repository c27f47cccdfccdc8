// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exact-substring deduplication over a character-token corpus.
//
// A span of min_span tokens is a duplicate when the same span starts at an
// earlier position of the corpus (earlier document, or earlier in the same
// document). Every duplicate span is cut out, so the earliest occurrence
// survives. Spans never cross document boundaries. Cutting can join
// fragments into new repeats, so passes repeat until one removes nothing;
// the result therefore contains no repeated span of min_span or more tokens
// and a second run is a no-op. After each pass, documents that lost tokens
// and fell below min_residual tokens are dropped.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace qilin::data {

enum class DedupMethod {
  // Hash set of every min_span window, scanned in corpus order.
  kWindowHash,
  // Suffix array + LCP over the separator-joined corpus.
  kSuffixArray,
};

struct DedupOptions {
  std::size_t min_span = 50;
  std::size_t min_residual = 10;
  DedupMethod method = DedupMethod::kWindowHash;
};

// Removed token range [begin, end) in the original document's coordinates.
struct RemovedSpan {
  std::size_t doc = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct DedupReport {
  std::vector<RemovedSpan> spans;
  std::vector<std::size_t> dropped_docs;
  std::size_t input_tokens = 0;
  std::size_t removed_tokens = 0;
  std::size_t passes = 0;
};

template <typename Doc>
struct DedupOutput {
  std::vector<Doc> kept;
  // Original index of each kept document.
  std::vector<std::size_t> kept_ids;
  DedupReport report;
};

using TokenDoc = std::u32string;

// Throws ConfigError when min_span < 2.
DedupOutput<TokenDoc> dedup_tokens(std::span<const TokenDoc> docs,
                                   const DedupOptions& options = {});

// UTF-8 documents, tokenised per Unicode scalar.
DedupOutput<std::string> dedup_corpus(std::span<const std::string> docs,
                                      const DedupOptions& options = {});

// For each position of each document: true when the min_span window
// starting there repeats an earlier one. Exposed for the two detectors'
// cross-check.
std::vector<std::vector<bool>> duplicate_window_starts(
    std::span<const TokenDoc> docs, std::size_t min_span, DedupMethod method);

// Suffix array of an integer sequence by prefix doubling.
std::vector<std::size_t> suffix_array(std::span<const std::uint32_t> text);
// Kasai LCP: lcp[i] = common prefix of suffixes sa[i-1] and sa[i]; lcp[0]=0.
std::vector<std::size_t> lcp_array(std::span<const std::uint32_t> text,
                                   std::span<const std::size_t> sa);

std::string format_report(const DedupReport& report);

}  // namespace qilin::data
