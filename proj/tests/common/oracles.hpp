// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Slow reference implementations used to cross-check the library. Written
// straight from the metric definitions with naive loops; nothing here calls
// into qilin.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

// Occurrences of needle (length n) in s, counted by scanning every offset.
inline std::size_t count_at(const std::u32string& s, const std::u32string& needle) {
  std::size_t c = 0;
  if (needle.size() > s.size()) return 0;
  for (std::size_t i = 0; i + needle.size() <= s.size(); ++i) {
    bool same = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (s[i + j] != needle[j]) {
        same = false;
        break;
      }
    }
    if (same) ++c;
  }
  return c;
}

// Sum over distinct candidate n-grams of min(count in cand, count in ref).
inline double clipped(const std::u32string& cand, const std::u32string& ref,
                      std::size_t n) {
  std::vector<std::u32string> seen;
  double total = 0.0;
  if (cand.size() < n) return 0.0;
  for (std::size_t i = 0; i + n <= cand.size(); ++i) {
    std::u32string g = cand.substr(i, n);
    if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
    seen.push_back(g);
    total += static_cast<double>(std::min(count_at(cand, g), count_at(ref, g)));
  }
  return total;
}

inline double ngram_total(const std::u32string& s, std::size_t n) {
  return s.size() >= n ? static_cast<double>(s.size() - n + 1) : 0.0;
}

// Product of smoothed precisions raised to 1/n, times the brevity penalty.
inline double bleu(const std::u32string& cand, const std::u32string& ref,
                   std::size_t n) {
  if (cand.empty()) return 0.0;
  double prod = 1.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double tot = ngram_total(cand, k);
    double m = clipped(cand, ref, k);
    double p;
    if (tot == 0.0) {
      p = 1e-9;
    } else {
      if (m == 0.0) m = 1e-9;
      p = m / tot;
    }
    prod *= p;
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::pow(prod, 1.0 / static_cast<double>(n));
}

inline double f1_from(double overlap, double cand_total, double ref_total) {
  if (cand_total == 0.0 || ref_total == 0.0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

inline double rouge_n(const std::u32string& cand, const std::u32string& ref,
                      std::size_t n) {
  return f1_from(clipped(cand, ref, n), ngram_total(cand, n), ngram_total(ref, n));
}

// True when sub is a subsequence of s.
inline bool is_subsequence(const std::u32string& sub, const std::u32string& s) {
  std::size_t j = 0;
  for (char32_t c : s) {
    if (j < sub.size() && sub[j] == c) ++j;
  }
  return j == sub.size();
}

// Exhaustive over subsets of a for short inputs, memoized recursion
// otherwise.
inline std::size_t lcs(const std::u32string& a, const std::u32string& b) {
  if (a.size() <= 12) {
    std::size_t best = 0;
    const std::size_t n = a.size();
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
      std::u32string sub;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (std::size_t{1} << i)) sub.push_back(a[i]);
      }
      if (sub.size() > best && is_subsequence(sub, b)) best = sub.size();
    }
    return best;
  }
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  auto rec = [&](auto&& self, std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    const auto key = std::make_pair(i, j);
    const auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    std::size_t v;
    if (a[i] == b[j]) {
      v = 1 + self(self, i + 1, j + 1);
    } else {
      v = std::max(self(self, i + 1, j), self(self, i, j + 1));
    }
    memo[key] = v;
    return v;
  };
  return rec(rec, 0, 0);
}

inline double rouge_l(const std::u32string& cand, const std::u32string& ref) {
  return f1_from(static_cast<double>(lcs(cand, ref)),
                 static_cast<double>(cand.size()), static_cast<double>(ref.size()));
}

inline double accuracy(const std::vector<std::string>& gold,
                       const std::vector<std::string>& pred) {
  double hit = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += gold[i] == pred[i] ? 1.0 : 0.0;
  return hit / static_cast<double>(gold.size());
}

// Per gold label: precision and recall from scratch, F1 = 2PR/(P+R),
// weighted by the label's share of the gold list.
inline double weighted_f1(const std::vector<std::string>& gold,
                          const std::vector<std::string>& pred) {
  std::vector<std::string> labels;
  for (const auto& g : gold) {
    if (std::find(labels.begin(), labels.end(), g) == labels.end()) labels.push_back(g);
  }
  double sum = 0.0;
  for (const auto& label : labels) {
    double tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == label) predicted += 1;
      if (gold[i] == label) actual += 1;
      if (pred[i] == label && gold[i] == label) tp += 1;
    }
    const double p = predicted == 0 ? 0.0 : tp / predicted;
    const double r = actual == 0 ? 0.0 : tp / actual;
    const double f = p + r == 0.0 ? 0.0 : 2 * p * r / (p + r);
    sum += f * actual;
  }
  return sum / static_cast<double>(gold.size());
}

// Number of pairs of distinct window starts (never crossing a document
// end) whose min_span windows are equal, found by comparing every pair.
inline std::size_t duplicate_window_pairs(const std::vector<std::u32string>& docs,
                                          std::size_t k) {
  std::vector<const char32_t*> starts;
  for (const auto& d : docs) {
    if (d.size() < k) continue;
    for (std::size_t i = 0; i + k <= d.size(); ++i) starts.push_back(d.data() + i);
  }
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    for (std::size_t j = i + 1; j < starts.size(); ++j) {
      const char32_t* a = starts[i];
      const char32_t* b = starts[j];
      std::size_t t = 0;
      while (t < k && a[t] == b[t]) ++t;
      if (t == k) ++pairs;
    }
  }
  return pairs;
}

}  // namespace oracle
