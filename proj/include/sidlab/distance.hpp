#pragma once

// Translation-similarity analysis: 1 - Levenshtein distance / length of the
// longer sequence, at word level over whole sentences and at character level
// over slot values.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <ranges>
#include <string>
#include <utility>
#include <vector>

#include "sidlab/corpus.hpp"
#include "sidlab/error.hpp"
#include "sidlab/text.hpp"

namespace sidlab {

// Unit-cost edit distance, two-row DP.
template <std::ranges::random_access_range A, std::ranges::random_access_range B>
std::size_t levenshtein(const A& a, const B& b) {
  const auto n = static_cast<std::size_t>(std::ranges::size(a));
  const auto m = static_cast<std::size_t>(std::ranges::size(b));
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  auto ai = std::ranges::begin(a);
  for (std::size_t i = 1; i <= n; ++i, ++ai) {
    cur[0] = i;
    auto bj = std::ranges::begin(b);
    for (std::size_t j = 1; j <= m; ++j, ++bj) {
      const std::size_t sub = prev[j - 1] + (*ai == *bj ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

template <std::ranges::random_access_range A, std::ranges::random_access_range B>
double normalized_similarity(const A& a, const B& b) {
  const auto longer = std::max<std::size_t>(std::ranges::size(a), std::ranges::size(b));
  if (longer == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longer);
}

enum class CaseMode { sensitive, insensitive };
enum class Level { sentence_words, slot_chars };

struct SimilarityMode {
  Level level = Level::sentence_words;
  CaseMode case_mode = CaseMode::sensitive;

  friend bool operator==(const SimilarityMode&, const SimilarityMode&) = default;
};

inline std::string to_string(SimilarityMode m) {
  std::string s = m.level == Level::sentence_words ? "sentence_words" : "slot_chars";
  s += m.case_mode == CaseMode::sensitive ? "/case_sensitive" : "/case_insensitive";
  return s;
}

inline std::vector<SimilarityMode> all_similarity_modes() {
  return {{Level::slot_chars, CaseMode::sensitive},
          {Level::slot_chars, CaseMode::insensitive},
          {Level::sentence_words, CaseMode::sensitive},
          {Level::sentence_words, CaseMode::insensitive}};
}

inline double sentence_similarity(const Sentence& a, const Sentence& b, CaseMode mode) {
  auto words = [mode](const Sentence& s) {
    std::vector<std::string> w;
    w.reserve(s.size());
    for (const auto& t : s.tokens) w.push_back(mode == CaseMode::insensitive ? t.lowercased : t.surface);
    return w;
  };
  return normalized_similarity(words(a), words(b));
}

// Slot label -> its tokens joined by single spaces, in token order. B/I
// prefixes are ignored, so two separate spans of one label are joined too.
inline std::map<std::string, std::string> slot_values(const Sentence& s, CaseMode mode) {
  if (!s.slot_tags) throw Error(Errc::MissingSlotTags, "sentence has no slot tags");
  if (s.slot_tags->size() != s.size()) throw Error(Errc::LengthMismatch, "slot tags do not match tokens");
  std::map<std::string, std::string> values;
  for (std::size_t i = 0; i < s.size(); ++i) {
    BioTag tag = parse_bio_tag((*s.slot_tags)[i]);
    if (tag.kind == BioTag::Kind::outside) continue;
    const auto& tok = s.tokens[i];
    std::string& v = values[std::string(tag.label)];
    if (!v.empty()) v += ' ';
    v += mode == CaseMode::insensitive ? tok.lowercased : tok.surface;
  }
  return values;
}

// Per shared label character-level similarities, in label order.
inline std::vector<double> shared_slot_similarities(const Sentence& a, const Sentence& b, CaseMode mode) {
  auto va = slot_values(a, mode);
  auto vb = slot_values(b, mode);
  std::vector<double> out;
  for (const auto& [label, value] : va) {
    auto it = vb.find(label);
    if (it == vb.end()) continue;
    out.push_back(normalized_similarity(text::code_points(value), text::code_points(it->second)));
  }
  return out;
}

// Mean over labels present in both sentences; empty when none is shared.
inline std::optional<double> slot_similarity(const Sentence& a, const Sentence& b, CaseMode mode) {
  auto sims = shared_slot_similarities(a, b, mode);
  if (sims.empty()) return std::nullopt;
  double sum = 0.0;
  for (double s : sims) sum += s;
  return sum / static_cast<double>(sims.size());
}

struct AlignedCorpora {
  std::vector<std::pair<std::string, Dataset>> variants;  // language tag, SID dataset

  void add(std::string tag, Dataset d) { variants.emplace_back(std::move(tag), std::move(d)); }
};

// How slot similarities are averaged over a corpus pair: first per sentence
// then over sentences, or pooled over every shared-label pair.
enum class SlotAggregation { per_sentence, pooled };

struct SimilarityMatrix {
  std::vector<std::string> labels;
  SimilarityMode mode;
  // values[i][j] for i <= j; the diagonal is materialized as 1.
  std::vector<std::vector<std::optional<double>>> values;

  std::optional<double> at(std::string_view a, std::string_view b) const {
    auto ia = std::find(labels.begin(), labels.end(), a);
    auto ib = std::find(labels.begin(), labels.end(), b);
    if (ia == labels.end() || ib == labels.end()) return std::nullopt;
    auto i = static_cast<std::size_t>(ia - labels.begin());
    auto j = static_cast<std::size_t>(ib - labels.begin());
    if (i > j) std::swap(i, j);
    return values[i][j];
  }
};

inline std::optional<double> corpus_pair_similarity(const Dataset& a, const Dataset& b, SimilarityMode mode,
                                                    SlotAggregation aggregation = SlotAggregation::per_sentence) {
  if (a.size() != b.size()) {
    throw Error(Errc::MisalignedCorpora, "'" + a.name + "' has " + std::to_string(a.size()) + " sentences, '" + b.name +
                                             "' has " + std::to_string(b.size()));
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& sa = a.sentences[i];
    const auto& sb = b.sentences[i];
    if (mode.level == Level::sentence_words) {
      sum += sentence_similarity(sa, sb, mode.case_mode);
      ++count;
    } else if (aggregation == SlotAggregation::per_sentence) {
      if (auto s = slot_similarity(sa, sb, mode.case_mode)) {
        sum += *s;
        ++count;
      }
    } else {
      for (double s : shared_slot_similarities(sa, sb, mode.case_mode)) {
        sum += s;
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

inline SimilarityMatrix corpus_similarity(const AlignedCorpora& corpora, SimilarityMode mode,
                                          SlotAggregation aggregation = SlotAggregation::per_sentence) {
  const auto& vs = corpora.variants;
  for (std::size_t i = 1; i < vs.size(); ++i) {
    if (vs[i].second.size() != vs[0].second.size()) {
      throw Error(Errc::MisalignedCorpora, vs[i].first + " has " + std::to_string(vs[i].second.size()) +
                                               " sentences but " + vs[0].first + " has " +
                                               std::to_string(vs[0].second.size()));
    }
  }
  SimilarityMatrix m;
  m.mode = mode;
  for (const auto& [tag, d] : vs) m.labels.push_back(tag);
  m.values.assign(vs.size(), std::vector<std::optional<double>>(vs.size()));
  for (std::size_t i = 0; i < vs.size(); ++i) {
    m.values[i][i] = 1.0;
    for (std::size_t j = i + 1; j < vs.size(); ++j) {
      m.values[i][j] = corpus_pair_similarity(vs[i].second, vs[j].second, mode, aggregation);
    }
  }
  return m;
}

}  // namespace sidlab
