#pragma once

// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "sidlab/corpus.hpp"

namespace oracle {

inline void for_each_sequence(const std::vector<std::string>& alphabet, std::size_t len,
                              const std::function<void(const std::vector<std::string>&)>& fn) {
  std::vector<std::size_t> idx(len, 0);
  std::vector<std::string> seq(len);
  while (true) {
    for (std::size_t i = 0; i < len; ++i) seq[i] = alphabet[idx[i]];
    fn(seq);
    std::size_t k = 0;
    while (k < len && ++idx[k] == alphabet.size()) idx[k++] = 0;
    if (k == len) return;
  }
}

inline bool has_label(const std::string& tag, const std::string& label) {
  return tag == "B-" + label || tag == "I-" + label;
}

// Enumerates every (start, end, label) and keeps the maximal consistent ones.
inline std::set<std::tuple<std::size_t, std::size_t, std::string>> span_set(const std::vector<std::string>& tags) {
  std::set<std::string> labels;
  for (const auto& t : tags) {
    if (t != "O") labels.insert(t.substr(2));
  }
  std::set<std::tuple<std::size_t, std::size_t, std::string>> out;
  const std::size_t n = tags.size();
  for (const auto& label : labels) {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t e = s; e < n; ++e) {
        bool inside = has_label(tags[s], label);
        for (std::size_t k = s + 1; k <= e && inside; ++k) inside = tags[k] == "I-" + label;
        if (!inside) continue;
        const bool starts = tags[s] == "B-" + label || s == 0 || !has_label(tags[s - 1], label);
        const bool ends = e + 1 == n || tags[e + 1] != "I-" + label;
        if (starts && ends) out.emplace(s, e, label);
      }
    }
  }
  return out;
}

inline std::vector<sidlab::SlotSpan> decode_bio(const std::vector<std::string>& tags) {
  std::vector<sidlab::SlotSpan> out;
  for (const auto& [s, e, l] : span_set(tags)) out.push_back({s, e, l});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  return out;
}

struct Counts {
  double tp = 0, fp = 0, fn = 0;
};

inline Counts count(const std::vector<std::vector<std::string>>& gold, const std::vector<std::vector<std::string>>& pred) {
  Counts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto g = span_set(gold[i]);
    auto p = span_set(pred[i]);
    for (const auto& x : p) (g.count(x) ? c.tp : c.fp) += 1;
    for (const auto& x : g) {
      if (!p.count(x)) c.fn += 1;
    }
  }
  return c;
}

struct Prf {
  double p, r, f;
};

inline Prf prf(const Counts& c) {
  if (c.tp + c.fp + c.fn == 0) return {1, 1, 1};
  const double p = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0;
  const double r = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0;
  return {p, r, p + r > 0 ? 2 * p * r / (p + r) : 0};
}

inline double fully_correct(const std::vector<std::vector<std::string>>& gold_tags, const std::vector<std::string>& gold_intent,
                            const std::vector<std::vector<std::string>>& pred_tags, const std::vector<std::string>& pred_intent) {
  if (gold_tags.empty()) return 1;
  double ok = 0;
  for (std::size_t i = 0; i < gold_tags.size(); ++i) {
    if (gold_intent[i] == pred_intent[i] && span_set(gold_tags[i]) == span_set(pred_tags[i])) ok += 1;
  }
  return ok / static_cast<double>(gold_tags.size());
}

// Full-matrix edit distance.
template <class S>
std::size_t levenshtein(const S& a, const S& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
    }
  }
  return d[n][m];
}

inline double sample_stdev(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace oracle
