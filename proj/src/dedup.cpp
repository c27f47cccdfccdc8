// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/dedup.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <string_view>
#include <unordered_set>

#include "qilin/errors.hpp"
#include "qilin/utf8.hpp"

namespace qilin::data {
namespace {

// Larger than any Unicode scalar, so separators never match text.
constexpr std::uint32_t kSeparatorBase = 0x110000;

std::vector<std::vector<bool>> hash_detector(std::span<const TokenDoc> docs,
                                             std::size_t k) {
  std::vector<std::vector<bool>> marks(docs.size());
  std::unordered_set<std::u32string_view> seen;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const std::u32string_view doc(docs[d]);
    marks[d].assign(doc.size(), false);
    if (doc.size() < k) {
      continue;
    }
    for (std::size_t i = 0; i + k <= doc.size(); ++i) {
      if (!seen.insert(doc.substr(i, k)).second) {
        marks[d][i] = true;
      }
    }
  }
  return marks;
}

std::vector<std::vector<bool>> suffix_array_detector(
    std::span<const TokenDoc> docs, std::size_t k) {
  std::vector<std::uint32_t> text;
  std::vector<std::size_t> doc_of;
  std::vector<std::size_t> offset_of;
  std::vector<std::vector<bool>> marks(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    marks[d].assign(docs[d].size(), false);
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      text.push_back(static_cast<std::uint32_t>(docs[d][i]));
      doc_of.push_back(d);
      offset_of.push_back(i);
    }
    text.push_back(kSeparatorBase + static_cast<std::uint32_t>(d));
    doc_of.push_back(d);
    offset_of.push_back(docs[d].size());
  }
  if (text.empty()) {
    return marks;
  }
  const std::vector<std::size_t> sa = suffix_array(text);
  const std::vector<std::size_t> lcp = lcp_array(text, sa);
  std::size_t start = 0;
  while (start < sa.size()) {
    std::size_t end = start + 1;
    while (end < sa.size() && lcp[end] >= k) {
      ++end;
    }
    if (end - start > 1) {
      const std::size_t first = *std::min_element(
          sa.begin() + static_cast<std::ptrdiff_t>(start),
          sa.begin() + static_cast<std::ptrdiff_t>(end));
      for (std::size_t i = start; i < end; ++i) {
        if (sa[i] != first) {
          marks[doc_of[sa[i]]][offset_of[sa[i]]] = true;
        }
      }
    }
    start = end;
  }
  return marks;
}

}  // namespace

std::vector<std::size_t> suffix_array(std::span<const std::uint32_t> text) {
  const std::size_t n = text.size();
  std::vector<std::size_t> sa(n);
  std::vector<std::size_t> rank(n);
  std::vector<std::size_t> tmp(n);
  std::iota(sa.begin(), sa.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    rank[i] = text[i];
  }
  for (std::size_t len = 1;; len <<= 1) {
    // Key is (rank[i], rank[i+len] or "none" sorting first).
    const auto key2 = [&](std::size_t i) {
      return i + len < n ? rank[i + len] + 1 : 0;
    };
    const auto less = [&](std::size_t a, std::size_t b) {
      if (rank[a] != rank[b]) {
        return rank[a] < rank[b];
      }
      return key2(a) < key2(b);
    };
    std::sort(sa.begin(), sa.end(), less);
    tmp[sa[0]] = 0;
    for (std::size_t i = 1; i < n; ++i) {
      tmp[sa[i]] = tmp[sa[i - 1]] + (less(sa[i - 1], sa[i]) ? 1 : 0);
    }
    rank.swap(tmp);
    if (rank[sa[n - 1]] == n - 1 || len >= n) {
      break;
    }
  }
  return sa;
}

std::vector<std::size_t> lcp_array(std::span<const std::uint32_t> text,
                                   std::span<const std::size_t> sa) {
  const std::size_t n = text.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    rank[sa[i]] = i;
  }
  std::vector<std::size_t> lcp(n, 0);
  std::size_t h = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rank[i] == 0) {
      h = 0;
      continue;
    }
    const std::size_t j = sa[rank[i] - 1];
    while (i + h < n && j + h < n && text[i + h] == text[j + h]) {
      ++h;
    }
    lcp[rank[i]] = h;
    if (h > 0) {
      --h;
    }
  }
  return lcp;
}

std::vector<std::vector<bool>> duplicate_window_starts(
    std::span<const TokenDoc> docs, std::size_t min_span, DedupMethod method) {
  if (min_span < 2) {
    throw ConfigError("min_span must be >= 2, got " + std::to_string(min_span));
  }
  return method == DedupMethod::kWindowHash
             ? hash_detector(docs, min_span)
             : suffix_array_detector(docs, min_span);
}

DedupOutput<TokenDoc> dedup_tokens(std::span<const TokenDoc> docs,
                                   const DedupOptions& options) {
  if (options.min_span < 2) {
    throw ConfigError("min_span must be >= 2, got " +
                      std::to_string(options.min_span));
  }
  const std::size_t k = options.min_span;
  const std::size_t n_docs = docs.size();
  std::vector<TokenDoc> current(docs.begin(), docs.end());
  std::vector<std::vector<std::size_t>> origin(n_docs);
  std::vector<bool> alive(n_docs, true);
  DedupReport report;
  for (std::size_t d = 0; d < n_docs; ++d) {
    origin[d].resize(docs[d].size());
    std::iota(origin[d].begin(), origin[d].end(), std::size_t{0});
    report.input_tokens += docs[d].size();
  }

  while (true) {
    ++report.passes;
    std::vector<std::size_t> active;
    std::vector<TokenDoc> views;
    for (std::size_t d = 0; d < n_docs; ++d) {
      if (alive[d]) {
        active.push_back(d);
        views.push_back(current[d]);
      }
    }
    const auto marks = duplicate_window_starts(views, k, options.method);
    bool removed_any = false;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t d = active[a];
      const std::size_t len = current[d].size();
      std::vector<bool> cut(len, false);
      bool touched = false;
      for (std::size_t i = 0; i < len; ++i) {
        if (marks[a][i]) {
          std::fill(cut.begin() + static_cast<std::ptrdiff_t>(i),
                    cut.begin() + static_cast<std::ptrdiff_t>(i + k), true);
          touched = true;
        }
      }
      if (!touched) {
        continue;
      }
      removed_any = true;
      TokenDoc next;
      std::vector<std::size_t> next_origin;
      for (std::size_t i = 0; i < len; ++i) {
        if (!cut[i]) {
          next.push_back(current[d][i]);
          next_origin.push_back(origin[d][i]);
        }
      }
      current[d] = std::move(next);
      origin[d] = std::move(next_origin);
      if (current[d].size() < options.min_residual || current[d].empty()) {
        alive[d] = false;
        report.dropped_docs.push_back(d);
      }
    }
    if (!removed_any) {
      break;
    }
  }
  std::sort(report.dropped_docs.begin(), report.dropped_docs.end());

  DedupOutput<TokenDoc> out;
  for (std::size_t d = 0; d < n_docs; ++d) {
    std::vector<bool> kept(docs[d].size(), false);
    if (alive[d]) {
      for (std::size_t o : origin[d]) {
        kept[o] = true;
      }
      out.kept.push_back(current[d]);
      out.kept_ids.push_back(d);
    }
    std::size_t i = 0;
    while (i < kept.size()) {
      if (kept[i]) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < kept.size() && !kept[j]) {
        ++j;
      }
      report.spans.push_back({d, i, j});
      report.removed_tokens += j - i;
      i = j;
    }
  }
  out.report = std::move(report);
  return out;
}

DedupOutput<std::string> dedup_corpus(std::span<const std::string> docs,
                                      const DedupOptions& options) {
  std::vector<TokenDoc> tokens;
  tokens.reserve(docs.size());
  for (const std::string& d : docs) {
    tokens.push_back(utf8_decode(d));
  }
  DedupOutput<TokenDoc> t = dedup_tokens(tokens, options);
  DedupOutput<std::string> out;
  out.kept_ids = std::move(t.kept_ids);
  out.report = std::move(t.report);
  for (const TokenDoc& d : t.kept) {
    out.kept.push_back(utf8_encode(d));
  }
  return out;
}

std::string format_report(const DedupReport& report) {
  std::ostringstream out;
  out << "input_tokens " << report.input_tokens << "\n"
      << "removed_tokens " << report.removed_tokens << "\n"
      << "passes " << report.passes << "\n"
      << "dropped_docs " << report.dropped_docs.size() << "\n";
  for (std::size_t d : report.dropped_docs) {
    out << "dropped " << d << "\n";
  }
  for (const RemovedSpan& s : report.spans) {
    out << "span " << s.doc << " " << s.begin << " " << s.end << "\n";
  }
  return out.str();
}

}  // namespace qilin::data
