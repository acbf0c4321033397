#pragma once

// Report emitters. The TSV report is the machine-readable record; Markdown
// tables are rendered from it and contain no numbers that cannot be
// recomputed from the TSV.
//
// report.tsv layout (tab-separated):
//   # sidlab report v1
//   # config<TAB>key<TAB>value         one per config entry, in file order
//   # warning<TAB>text
//   section<TAB>dataset<TAB>seed<TAB>metric<TAB>value
//   run        per (eval dataset, seed) SID metrics
//   aux        per seed auxiliary dev metrics (dataset "-")
//   aggregate  per eval dataset; seed column is "mean", "stdev" or "n_runs"
// Values are shortest round-trip decimal representations.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sidlab/distance.hpp"
#include "sidlab/error.hpp"
#include "sidlab/metrics.hpp"
#include "sidlab/schedule.hpp"
#include "sidlab/text.hpp"

namespace sidlab {

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(Errc::InvalidConfig, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

// Percentage with one decimal, e.g. 0.7354 -> "73.5".
inline std::string format_percent(double ratio) {
  char buf[32];
  double v = std::round(ratio * 1000.0) / 10.0;
  if (v == 0.0) v = 0.0;  // no "-0.0"
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// Signed percentage-point difference with one decimal; zero renders "0.0".
inline std::string format_delta(double diff_ratio) {
  double v = std::round(diff_ratio * 1000.0) / 10.0;
  if (v == 0.0) return "0.0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f", v);
  return buf;
}

inline std::string format_mean_std(const SeedAggregate& a) {
  return format_percent(a.mean) + "±" + format_percent(a.stdev);
}

// report.tsv ---------------------------------------------------------------------

inline void write_report_tsv(std::ostream& out, const ExperimentReport& r) {
  out << "# sidlab report v1\n";
  for (const auto& [k, v] : r.config_echo) out << "# config\t" << k << '\t' << v << '\n';
  for (const auto& w : r.warnings) out << "# warning\t" << w << '\n';
  out << "section\tdataset\tseed\tmetric\tvalue\n";
  for (const auto& run : r.runs) {
    for (const auto& [name, m] : run.eval) {
      for (const auto& metric : sid_metric_names()) {
        out << "run\t" << name << '\t' << run.seed << '\t' << metric << '\t' << format_number(metric_value(m, metric))
            << '\n';
      }
      out << "run\t" << name << '\t' << run.seed << "\tn_sentences\t" << m.n_sentences << '\n';
    }
  }
  for (const auto& run : r.runs) {
    auto aux = [&](std::string_view metric, const std::optional<double>& v) {
      if (v) out << "aux\t-\t" << run.seed << '\t' << metric << '\t' << format_number(*v) << '\n';
    };
    aux("las", run.aux.las);
    aux("pos_accuracy", run.aux.pos_accuracy);
    aux("ner_span_f1", run.aux.ner_span_f1);
    aux("mlm_perplexity", run.aux.mlm_perplexity);
  }
  for (const auto& name : r.eval_names) {
    auto it = r.aggregates.find(name);
    if (it == r.aggregates.end()) continue;
    for (const auto& metric : sid_metric_names()) {
      auto a = it->second.find(metric);
      if (a == it->second.end()) continue;
      out << "aggregate\t" << name << "\tmean\t" << metric << '\t' << format_number(a->second.mean) << '\n';
      out << "aggregate\t" << name << "\tstdev\t" << metric << '\t' << format_number(a->second.stdev) << '\n';
      out << "aggregate\t" << name << "\tn_runs\t" << metric << '\t' << a->second.n_runs << '\n';
    }
  }
}

// Wall-clock seconds per (seed, stage); kept apart from report.tsv, which is
// byte-for-byte reproducible.
inline void write_timing_tsv(std::ostream& out, const ExperimentReport& r) {
  out << "seed\tstage\ttasks\tepochs\tbest_epoch\tsteps\tseconds\n";
  for (const auto& run : r.runs) {
    for (std::size_t k = 0; k < run.stages.size(); ++k) {
      const auto& s = run.stages[k];
      std::string tasks;
      for (const auto& t : s.stage.tasks) tasks += (tasks.empty() ? "" : "×") + t;
      out << run.seed << '\t' << k << '\t' << tasks << '\t' << s.epochs.size() << '\t' << s.best_epoch + 1 << '\t'
          << s.steps.size() << '\t' << format_number(s.seconds) << '\n';
    }
  }
}

inline ExperimentReport read_report_tsv(std::istream& in) {
  ExperimentReport r;
  std::map<std::uint64_t, std::size_t> run_index;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  auto eval_slot = [&](SeedRun& run, const std::string& name) -> MetricReport& {
    for (auto& [n, m] : run.eval) {
      if (n == name) return m;
    }
    run.eval.emplace_back(name, MetricReport{});
    return run.eval.back().second;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = text::split(line, '\t');
    if (line[0] == '#') {
      if (f[0] == "# config" && f.size() == 3) r.config_echo.emplace_back(std::string(f[1]), std::string(f[2]));
      if (f[0] == "# warning" && f.size() == 2) r.warnings.emplace_back(f[1]);
      continue;
    }
    if (!header_seen) {
      if (line != "section\tdataset\tseed\tmetric\tvalue") {
        throw ParseError(Errc::BadColumnCount, 0, line_no, "missing report header");
      }
      header_seen = true;
      continue;
    }
    if (f.size() != 5) throw ParseError(Errc::BadColumnCount, 0, line_no, "report rows have 5 fields");
    const std::string section(f[0]), dataset(f[1]), seed(f[2]), metric(f[3]);
    if (section == "run" || section == "aux") {
      const auto s = static_cast<std::uint64_t>(parse_number(seed));
      auto [it, inserted] = run_index.try_emplace(s, r.runs.size());
      if (inserted) {
        r.runs.emplace_back();
        r.runs.back().seed = s;
      }
      SeedRun& run = r.runs[it->second];
      const double v = parse_number(f[4]);
      if (section == "aux") {
        if (metric == "las") run.aux.las = v;
        if (metric == "pos_accuracy") run.aux.pos_accuracy = v;
        if (metric == "ner_span_f1") run.aux.ner_span_f1 = v;
        if (metric == "mlm_perplexity") run.aux.mlm_perplexity = v;
        continue;
      }
      if (std::find(r.eval_names.begin(), r.eval_names.end(), dataset) == r.eval_names.end()) {
        r.eval_names.push_back(dataset);
      }
      MetricReport& m = eval_slot(run, dataset);
      if (metric == "slot_precision") m.slot_precision = v;
      else if (metric == "slot_recall") m.slot_recall = v;
      else if (metric == "slot_f1") m.slot_f1 = v;
      else if (metric == "intent_accuracy") m.intent_accuracy = v;
      else if (metric == "fully_correct") m.fully_correct = v;
      else if (metric == "n_sentences") m.n_sentences = static_cast<std::size_t>(v);
    } else if (section == "aggregate") {
      if (std::find(r.eval_names.begin(), r.eval_names.end(), dataset) == r.eval_names.end()) {
        r.eval_names.push_back(dataset);
      }
      SeedAggregate& a = r.aggregates[dataset][metric];
      const double v = parse_number(f[4]);
      if (seed == "mean") a.mean = v;
      else if (seed == "stdev") a.stdev = v;
      else if (seed == "n_runs") a.n_runs = static_cast<std::size_t>(v);
    } else {
      throw ParseError(Errc::BadColumnCount, 0, line_no, "unknown report section '" + section + "'");
    }
  }
  if (!header_seen) throw ParseError(Errc::BadColumnCount, 0, line_no, "not a report file");
  return r;
}

inline std::string config_value(const ExperimentReport& r, std::string_view key) {
  for (const auto& [k, v] : r.config_echo) {
    if (k == key) return v;
  }
  return {};
}

// Markdown for one report: a mean±std row per eval dataset.
inline void write_report_markdown(std::ostream& out, const ExperimentReport& r) {
  out << "# Experiment `" << config_value(r, "schedule") << "`\n\n";
  std::size_t n_runs = r.runs.size();
  out << "Mean ± standard deviation over " << n_runs << (n_runs == 1 ? " run" : " runs") << ", in percent.\n\n";
  for (const auto& w : r.warnings) out << "> warning: " << w << "\n\n";
  out << "| dataset |";
  for (const auto& m : sid_metric_names()) out << ' ' << m << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < sid_metric_names().size(); ++i) out << "---|";
  out << '\n';
  for (const auto& name : r.eval_names) {
    out << "| " << name << " |";
    for (const auto& m : sid_metric_names()) {
      auto it = r.aggregates.find(name);
      if (it == r.aggregates.end() || !it->second.count(m)) {
        out << " n/a |";
      } else {
        out << ' ' << format_mean_std(it->second.at(m)) << " |";
      }
    }
    out << '\n';
  }
  bool any_aux = false;
  for (const auto& run : r.runs) {
    any_aux = any_aux || run.aux.las || run.aux.pos_accuracy || run.aux.ner_span_f1 || run.aux.mlm_perplexity;
  }
  if (!any_aux) return;
  out << "\nAuxiliary dev scores per seed (LAS, POS, NER in percent; masked-token perplexity).\n\n";
  out << "| seed | LAS | POS | NER | PPL |\n|---|---|---|---|---|\n";
  auto pct = [](const std::optional<double>& v) { return v ? format_percent(*v) : std::string("n/a"); };
  for (const auto& run : r.runs) {
    char ppl[32] = "n/a";
    if (run.aux.mlm_perplexity) std::snprintf(ppl, sizeof ppl, "%.1f", *run.aux.mlm_perplexity);
    out << "| " << run.seed << " | " << pct(run.aux.las) << " | " << pct(run.aux.pos_accuracy) << " | "
        << pct(run.aux.ner_span_f1) << " | " << ppl << " |\n";
  }
}

// Comparison tables ----------------------------------------------------------------

inline const std::vector<std::string>& table_metrics() {
  static const std::vector<std::string> names{"slot_f1", "intent_accuracy", "fully_correct"};
  return names;
}

struct NamedReport {
  std::string name;
  ExperimentReport report;
};

struct DeltaRow {
  std::string setup;
  std::string metric;
  std::vector<std::optional<double>> per_dataset;  // ratio differences, dataset order
  std::optional<double> average;                    // over datasets present in both
};

struct DeltaTable {
  std::string baseline;
  std::vector<std::string> datasets;
  std::vector<DeltaRow> rows;
};

inline std::vector<std::string> union_datasets(const std::vector<NamedReport>& reports) {
  std::vector<std::string> out;
  for (const auto& nr : reports) {
    for (const auto& d : nr.report.eval_names) {
      if (std::find(out.begin(), out.end(), d) == out.end()) out.push_back(d);
    }
  }
  return out;
}

inline std::optional<SeedAggregate> find_aggregate(const ExperimentReport& r, const std::string& dataset,
                                                   const std::string& metric) {
  auto it = r.aggregates.find(dataset);
  if (it == r.aggregates.end()) return std::nullopt;
  auto m = it->second.find(metric);
  if (m == it->second.end()) return std::nullopt;
  return m->second;
}

inline DeltaTable delta_table(const std::vector<NamedReport>& reports, const std::string& baseline) {
  const NamedReport* base = nullptr;
  for (const auto& nr : reports) {
    if (nr.name == baseline) base = &nr;
  }
  if (!base) throw Error(Errc::InvalidConfig, "baseline '" + baseline + "' is not among the reports");
  DeltaTable t;
  t.baseline = baseline;
  t.datasets = union_datasets(reports);
  for (const auto& metric : table_metrics()) {
    for (const auto& nr : reports) {
      DeltaRow row{nr.name, metric, {}, std::nullopt};
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& d : t.datasets) {
        auto a = find_aggregate(nr.report, d, metric);
        auto b = find_aggregate(base->report, d, metric);
        if (a && b) {
          row.per_dataset.push_back(a->mean - b->mean);
          sum += a->mean - b->mean;
          ++count;
        } else {
          row.per_dataset.push_back(std::nullopt);
        }
      }
      if (count) row.average = sum / static_cast<double>(count);
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

enum class TableFormat { markdown, tsv };

inline void render_tables(std::ostream& out, const std::vector<NamedReport>& reports, const std::string& baseline,
                          TableFormat format) {
  const DeltaTable delta = delta_table(reports, baseline);
  const auto& datasets = delta.datasets;
  if (format == TableFormat::tsv) {
    out << "table\tsetup\tmetric\tdataset\tvalue\n";
    for (const auto& metric : table_metrics()) {
      for (const auto& nr : reports) {
        for (const auto& d : datasets) {
          auto a = find_aggregate(nr.report, d, metric);
          out << "score\t" << nr.name << '\t' << metric << '\t' << d << '\t' << (a ? format_mean_std(*a) : "n/a")
              << '\n';
        }
      }
    }
    for (const auto& row : delta.rows) {
      for (std::size_t i = 0; i < datasets.size(); ++i) {
        out << "delta\t" << row.setup << '\t' << row.metric << '\t' << datasets[i] << '\t'
            << (row.per_dataset[i] ? format_delta(*row.per_dataset[i]) : "n/a") << '\n';
      }
      out << "delta\t" << row.setup << '\t' << row.metric << "\taverage\t"
          << (row.average ? format_delta(*row.average) : "n/a") << '\n';
    }
    return;
  }
  auto header = [&](std::string_view first, bool with_avg) {
    out << "| " << first << " |";
    for (const auto& d : datasets) out << ' ' << d << " |";
    if (with_avg) out << " average |";
    out << "\n|---|";
    for (std::size_t i = 0; i < datasets.size() + (with_avg ? 1 : 0); ++i) out << "---:|";
    out << '\n';
  };
  for (const auto& metric : table_metrics()) {
    out << "## " << metric << " (mean±std, %)\n\n";
    header("setup", false);
    for (const auto& nr : reports) {
      out << "| " << nr.name << " |";
      for (const auto& d : datasets) {
        auto a = find_aggregate(nr.report, d, metric);
        out << ' ' << (a ? format_mean_std(*a) : "n/a") << " |";
      }
      out << '\n';
    }
    out << '\n';
  }
  out << "## Differences to baseline `" << baseline << "` (percentage points)\n\n";
  for (const auto& metric : table_metrics()) {
    out << "### " << metric << "\n\n";
    header("setup", true);
    for (const auto& row : delta.rows) {
      if (row.metric != metric) continue;
      out << "| " << row.setup << " |";
      for (const auto& v : row.per_dataset) out << ' ' << (v ? format_delta(*v) : "n/a") << " |";
      out << ' ' << (row.average ? format_delta(*row.average) : "n/a") << " |\n";
    }
    out << '\n';
  }
}

// Similarity matrices ---------------------------------------------------------------

inline void write_similarity_tsv(std::ostream& out, const SimilarityMatrix& m) {
  out << "# mode: " << to_string(m.mode) << '\n';
  for (const auto& l : m.labels) out << '\t' << l;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    out << m.labels[i];
    for (std::size_t j = 0; j < m.labels.size(); ++j) {
      out << '\t';
      if (j < i || !m.values[i][j]) continue;
      std::snprintf(buf, sizeof buf, "%.4f", *m.values[i][j]);
      out << buf;
    }
    out << '\n';
  }
}

inline void write_similarity_markdown(std::ostream& out, const SimilarityMatrix& m) {
  out << "### " << to_string(m.mode) << "\n\n|  |";
  for (std::size_t j = 1; j < m.labels.size(); ++j) out << ' ' << m.labels[j] << " |";
  out << "\n|---|";
  for (std::size_t j = 1; j < m.labels.size(); ++j) out << "---:|";
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i + 1 < m.labels.size(); ++i) {
    out << "| " << m.labels[i] << " |";
    for (std::size_t j = 1; j < m.labels.size(); ++j) {
      if (j <= i || !m.values[i][j]) {
        out << "  |";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.2f", *m.values[i][j]);
      out << ' ' << buf << " |";
    }
    out << '\n';
  }
}

}  // namespace sidlab
