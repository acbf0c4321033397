#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sidlab/corpus.hpp"
#include "sidlab/error.hpp"

namespace sidlab {

struct SidPrediction {
  std::vector<std::string> slot_tags;
  std::string intent;
};

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricReport {
  double slot_precision = 0.0;
  double slot_recall = 0.0;
  double slot_f1 = 0.0;
  double intent_accuracy = 0.0;
  double fully_correct = 0.0;
  std::size_t n_sentences = 0;
};

// Auxiliary-task dev metrics; a field is empty when that task was not trained.
struct AuxReport {
  std::optional<double> las;
  std::optional<double> pos_accuracy;
  std::optional<double> ner_span_f1;
  std::optional<double> mlm_perplexity;
};

struct SeedAggregate {
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation, 0 for a single run
  std::size_t n_runs = 0;
};

struct SpanCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  SpanCounts& operator+=(const SpanCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

// Both sides empty scores 1; a single empty side scores 0 for the ratio it
// makes undefined.
inline PrecisionRecallF1 prf_from_counts(const SpanCounts& c) {
  if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0, 1.0};
  PrecisionRecallF1 r;
  r.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  r.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

inline SpanCounts count_spans(std::span<const std::string> gold_tags, std::span<const std::string> pred_tags) {
  if (gold_tags.size() != pred_tags.size()) {
    throw Error(Errc::LengthMismatch, "gold has " + std::to_string(gold_tags.size()) + " tags, prediction " +
                                          std::to_string(pred_tags.size()));
  }
  auto gold = decode_bio(gold_tags);
  auto pred = decode_bio(pred_tags);
  std::set<SlotSpan> gold_set(gold.begin(), gold.end());
  SpanCounts c;
  for (const auto& p : pred) {
    if (gold_set.count(p)) {
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = gold.size() - c.tp;
  return c;
}

namespace detail {

inline void check_lengths(std::size_t gold, std::size_t pred) {
  if (gold != pred) {
    throw Error(Errc::LengthMismatch,
                std::to_string(gold) + " gold sentences but " + std::to_string(pred) + " predictions");
  }
}

inline const std::vector<std::string>& gold_slots(const Sentence& s) {
  if (!s.slot_tags) throw Error(Errc::MissingSlotTags, "gold sentence has no slot tags");
  return *s.slot_tags;
}

}  // namespace detail

inline PrecisionRecallF1 strict_slot_f1(std::span<const Sentence> gold, std::span<const SidPrediction> pred) {
  detail::check_lengths(gold.size(), pred.size());
  SpanCounts total;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    total += count_spans(detail::gold_slots(gold[i]), pred[i].slot_tags);
  }
  return prf_from_counts(total);
}

// Strict span F1 over arbitrary parallel tag sequences (NER dev scoring).
inline PrecisionRecallF1 span_f1(std::span<const std::vector<std::string>> gold,
                                 std::span<const std::vector<std::string>> pred) {
  detail::check_lengths(gold.size(), pred.size());
  SpanCounts total;
  for (std::size_t i = 0; i < gold.size(); ++i) total += count_spans(gold[i], pred[i]);
  return prf_from_counts(total);
}

inline double intent_accuracy(std::span<const Sentence> gold, std::span<const SidPrediction> pred) {
  detail::check_lengths(gold.size(), pred.size());
  if (gold.empty()) return 1.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].intent && *gold[i].intent == pred[i].intent) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

// Intent correct and decoded span sets identical.
inline double fully_correct(std::span<const Sentence> gold, std::span<const SidPrediction> pred) {
  detail::check_lengths(gold.size(), pred.size());
  if (gold.empty()) return 1.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& gtags = detail::gold_slots(gold[i]);
    if (gtags.size() != pred[i].slot_tags.size()) throw Error(Errc::LengthMismatch, "slot tag count differs");
    if (!gold[i].intent || *gold[i].intent != pred[i].intent) continue;
    if (decode_bio(gtags) == decode_bio(pred[i].slot_tags)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

inline MetricReport score_sid(std::span<const Sentence> gold, std::span<const SidPrediction> pred) {
  MetricReport r;
  auto prf = strict_slot_f1(gold, pred);
  r.slot_precision = prf.precision;
  r.slot_recall = prf.recall;
  r.slot_f1 = prf.f1;
  r.intent_accuracy = intent_accuracy(gold, pred);
  r.fully_correct = fully_correct(gold, pred);
  r.n_sentences = gold.size();
  return r;
}

struct DependencyPrediction {
  std::vector<std::size_t> heads;
  std::vector<std::string> deprels;
};

// Fraction of tokens whose head and relation are both right.
inline double las(std::span<const Sentence> gold, std::span<const DependencyPrediction> pred) {
  detail::check_lengths(gold.size(), pred.size());
  std::size_t tokens = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& g = gold[i];
    if (!g.heads || !g.deprels) throw Error(Errc::MissingBinding, "gold sentence lacks dependency annotation");
    const std::size_t n = g.size();
    if (pred[i].heads.size() != n || pred[i].deprels.size() != n) {
      throw Error(Errc::LengthMismatch, "dependency prediction length differs from sentence length");
    }
    for (std::size_t t = 0; t < n; ++t) {
      ++tokens;
      if ((*g.heads)[t] == pred[i].heads[t] && (*g.deprels)[t] == pred[i].deprels[t]) ++correct;
    }
  }
  return tokens == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(tokens);
}

// Token-level accuracy over parallel tag sequences.
inline double tag_accuracy(std::span<const std::vector<std::string>> gold,
                           std::span<const std::vector<std::string>> pred) {
  detail::check_lengths(gold.size(), pred.size());
  std::size_t tokens = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != pred[i].size()) throw Error(Errc::LengthMismatch, "tag sequence length differs");
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      ++tokens;
      if (gold[i][t] == pred[i][t]) ++correct;
    }
  }
  return tokens == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(tokens);
}

inline double pos_accuracy(std::span<const Sentence> gold, std::span<const std::vector<std::string>> pred) {
  std::vector<std::vector<std::string>> g;
  g.reserve(gold.size());
  for (const auto& s : gold) {
    if (!s.pos_tags) throw Error(Errc::MissingBinding, "gold sentence lacks POS tags");
    g.push_back(*s.pos_tags);
  }
  return tag_accuracy(g, pred);
}

inline double masked_perplexity(double total_nll, std::size_t n_masked) {
  if (n_masked == 0) throw Error(Errc::NoMaskedTokens, "perplexity needs at least one masked token");
  return std::exp(total_nll / static_cast<double>(n_masked));
}

inline SeedAggregate aggregate_seeds(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::EmptyDataset, "no runs to aggregate");
  SeedAggregate a;
  a.n_runs = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stdev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

}  // namespace sidlab
