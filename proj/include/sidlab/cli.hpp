#pragma once

// Command-line front end: validate, train, eval, dist, report.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sidlab/checkpoint.hpp"
#include "sidlab/config.hpp"
#include "sidlab/corpus.hpp"
#include "sidlab/distance.hpp"
#include "sidlab/metrics.hpp"
#include "sidlab/report.hpp"
#include "sidlab/schedule.hpp"

namespace sidlab::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::InvalidConfig:
    case Errc::EmptyStage:
    case Errc::EmptySchedule:
    case Errc::ScheduleSyntax:
    case Errc::UnknownTask:
    case Errc::MissingBinding:
    case Errc::InvalidModelConfig: return kUsage;
    default: return kData;
  }
}

namespace fs = std::filesystem;

// name=path, or a bare path named after its file stem.
inline std::pair<std::string, std::string> split_named_path(const std::string& arg) {
  auto eq = arg.find('=');
  if (eq != std::string::npos && eq > 0) return {arg.substr(0, eq), arg.substr(eq + 1)};
  return {fs::path(arg).stem().string(), arg};
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write '" + path.string() + "'");
  out << content;
}

// validate -------------------------------------------------------------------

struct BioIssues {
  std::size_t malformed = 0;  // not O / B-x / I-x
  std::size_t repaired = 0;   // I-x without an open x span
};

inline BioIssues bio_issues(const std::vector<std::string>& tags) {
  BioIssues issues;
  std::optional<std::string> open;
  for (const auto& tag : tags) {
    try {
      BioTag t = parse_bio_tag(tag);
      if (t.kind == BioTag::Kind::inside && (!open || *open != t.label)) ++issues.repaired;
      if (t.kind == BioTag::Kind::outside) {
        open.reset();
      } else {
        open = std::string(t.label);
      }
    } catch (const Error&) {
      ++issues.malformed;
      open.reset();
    }
  }
  return issues;
}

inline int cmd_validate(const std::vector<std::string>& paths, TaskKind kind, std::ostream& out, std::ostream& err) {
  int status = kOk;
  for (const auto& path : paths) {
    Dataset d;
    try {
      d = read_dataset(path, kind);
    } catch (const Error& e) {
      err << path << ": error: " << e.what() << '\n';
      status = kData;
      continue;
    }
    std::size_t tokens = 0;
    std::map<std::string, std::set<std::string>> inventories;
    BioIssues issues;
    for (const auto& s : d.sentences) {
      tokens += s.size();
      auto collect = [&](const char* name, const std::optional<std::vector<std::string>>& tags) {
        if (!tags) return;
        for (const auto& t : *tags) inventories[name].insert(t);
      };
      collect("slot_tags", s.slot_tags);
      collect("pos_tags", s.pos_tags);
      collect("deprels", s.deprels);
      collect("ner_tags", s.ner_tags);
      if (s.intent) inventories["intents"].insert(*s.intent);
      for (const auto* tags : {&s.slot_tags, &s.ner_tags}) {
        if (!*tags) continue;
        BioIssues b = bio_issues(**tags);
        issues.malformed += b.malformed;
        issues.repaired += b.repaired;
      }
    }
    out << path << "\tformat=" << to_string(kind) << "\tsentences=" << d.size() << "\ttokens=" << tokens << '\n';
    for (const auto& [name, labels] : inventories) {
      out << "  " << name << " (" << labels.size() << "):";
      for (const auto& l : labels) out << ' ' << l;
      out << '\n';
    }
    if (kind == TaskKind::sid || kind == TaskKind::ner) {
      out << "  bio_malformed=" << issues.malformed << "\tbio_repaired=" << issues.repaired << '\n';
    }
    if (d.empty()) err << path << ": warning: no sentences\n";
    if (issues.repaired) err << path << ": warning: " << issues.repaired << " I- tags start a span\n";
    if (issues.malformed) {
      err << path << ": error: " << issues.malformed << " tags are not O, B-<label> or I-<label>\n";
      status = kData;
    }
  }
  return status;
}

// train ------------------------------------------------------------------------

struct TrainOptions {
  std::string config_path;
  std::string out_dir;
  bool force = false;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

inline int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  const fs::path dir(opt.out_dir);
  if (fs::exists(dir) && !fs::is_empty(dir) && !opt.force) {
    err << "error: output directory '" << opt.out_dir << "' is not empty (use --force to overwrite)\n";
    return kUsage;
  }
  RunConfig config = load_run_config(opt.config_path);
  if (opt.seed) {
    config.seeds = {*opt.seed};
    for (auto& [k, v] : config.echo) {
      if (k == "seeds") v = "[" + std::to_string(*opt.seed) + "]";
    }
  }
  fs::create_directories(dir);
  ProgressFn progress;
  if (!opt.quiet) progress = [&err](const std::string& line) { err << line << '\n'; };
  std::vector<ModelState> models;
  ExperimentReport report = run_schedule(config, &models, progress);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';

  std::ostringstream tsv, md, timing;
  write_report_tsv(tsv, report);
  write_report_markdown(md, report);
  write_timing_tsv(timing, report);
  write_file(dir / "report.tsv", tsv.str());
  write_file(dir / "report.md", md.str());
  write_file(dir / "timing.tsv", timing.str());
  for (std::size_t i = 0; i < models.size(); ++i) {
    save_model(models[i], (dir / ("seed-" + std::to_string(report.runs[i].seed) + ".ckpt")).string());
  }
  out << md.str();
  return kOk;
}

// eval -------------------------------------------------------------------------

inline void write_metric_rows(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows,
                              TableFormat format) {
  if (format == TableFormat::tsv) {
    out << "dataset\tn_sentences\tslot_precision\tslot_recall\tslot_f1\tintent_accuracy\tfully_correct\n";
    for (const auto& [name, r] : rows) {
      out << name << '\t' << r.n_sentences << '\t' << format_number(r.slot_precision) << '\t'
          << format_number(r.slot_recall) << '\t' << format_number(r.slot_f1) << '\t'
          << format_number(r.intent_accuracy) << '\t' << format_number(r.fully_correct) << '\n';
    }
    return;
  }
  out << "| dataset | n | slot P | slot R | slot F1 | intent acc | fully correct |\n|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& [name, r] : rows) {
    out << "| " << name << " | " << r.n_sentences << " | " << format_percent(r.slot_precision) << " | "
        << format_percent(r.slot_recall) << " | " << format_percent(r.slot_f1) << " | "
        << format_percent(r.intent_accuracy) << " | " << format_percent(r.fully_correct) << " |\n";
  }
}

struct EvalOptions {
  std::string model_path;
  std::vector<std::string> datasets;
  std::string gold_path;
  std::string pred_path;
  std::string task;  // SID task inside the checkpoint; first one found if empty
  TableFormat format = TableFormat::tsv;
};

inline std::vector<SidPrediction> predictions_from(const Dataset& d) {
  std::vector<SidPrediction> out;
  out.reserve(d.size());
  for (const auto& s : d.sentences) out.push_back({s.slot_tags.value_or(std::vector<std::string>{}), s.intent.value_or("")});
  return out;
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::string, MetricReport>> rows;
  if (!opt.pred_path.empty() || !opt.gold_path.empty()) {
    if (opt.pred_path.empty() || opt.gold_path.empty()) {
      err << "error: --gold and --pred go together\n";
      return kUsage;
    }
    Dataset gold = read_dataset(opt.gold_path, TaskKind::sid);
    Dataset pred = read_dataset(opt.pred_path, TaskKind::sid);
    rows.emplace_back(split_named_path(opt.gold_path).first, score_sid(gold.sentences, predictions_from(pred)));
  } else {
    if (opt.model_path.empty() || opt.datasets.empty()) {
      err << "error: eval needs --model and dataset files, or --gold and --pred\n";
      return kUsage;
    }
    ModelState m = load_model(opt.model_path);
    std::string task = opt.task;
    if (task.empty()) {
      auto found = find_sid_task(m);
      if (!found) {
        err << "error: checkpoint has no SID heads\n";
        return kUsage;
      }
      task = *found;
    }
    for (const auto& arg : opt.datasets) {
      auto [name, path] = split_named_path(arg);
      Dataset d = read_dataset(path, TaskKind::sid, name);
      std::vector<SidPrediction> pred;
      for (const auto& s : d.sentences) pred.push_back(predict_sid(m, s, task));
      rows.emplace_back(name, score_sid(d.sentences, pred));
    }
  }
  write_metric_rows(out, rows, opt.format);
  return kOk;
}

// dist -------------------------------------------------------------------------

struct DistOptions {
  std::vector<std::string> corpora;  // tag=path
  std::vector<std::string> modes;    // empty = all four
  std::string out_dir;
  SlotAggregation aggregation = SlotAggregation::per_sentence;
  TableFormat format = TableFormat::tsv;
};

inline std::vector<SimilarityMode> parse_modes(const std::vector<std::string>& names) {
  if (names.empty()) return all_similarity_modes();
  std::vector<SimilarityMode> out;
  for (const auto& n : names) {
    bool matched = false;
    for (const auto& m : all_similarity_modes()) {
      const std::string full = to_string(m);
      const std::string level = full.substr(0, full.find('/'));
      if (n == "all" || n == full || n == level) {
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
        matched = true;
      }
    }
    if (!matched) throw Error(Errc::InvalidConfig, "unknown similarity mode '" + n + "'");
  }
  return out;
}

inline std::string mode_file_stem(SimilarityMode m) {
  std::string s = to_string(m);
  std::replace(s.begin(), s.end(), '/', '.');
  return "similarity." + s;
}

inline int cmd_dist(const DistOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.corpora.size() < 2) {
    err << "error: dist needs at least two aligned corpora (tag=path)\n";
    return kUsage;
  }
  const auto modes = parse_modes(opt.modes);
  AlignedCorpora corpora;
  for (const auto& arg : opt.corpora) {
    auto [tag, path] = split_named_path(arg);
    corpora.add(tag, read_dataset(path, TaskKind::sid, tag, tag));
  }
  if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);
  for (const auto& mode : modes) {
    SimilarityMatrix m = corpus_similarity(corpora, mode, opt.aggregation);
    std::ostringstream s;
    if (opt.format == TableFormat::tsv) {
      write_similarity_tsv(s, m);
    } else {
      write_similarity_markdown(s, m);
    }
    if (opt.out_dir.empty()) {
      out << s.str() << '\n';
    } else {
      write_file(fs::path(opt.out_dir) / (mode_file_stem(mode) + (opt.format == TableFormat::tsv ? ".tsv" : ".md")),
                 s.str());
    }
  }
  return kOk;
}

// report -----------------------------------------------------------------------

struct ReportOptions {
  std::vector<std::string> reports;  // [name=]path to report.tsv or its directory
  std::string baseline;
  std::string out_path;
  TableFormat format = TableFormat::markdown;
};

inline int cmd_report(const ReportOptions& opt, std::ostream& out, std::ostream& err) {
  std::vector<NamedReport> reports;
  for (const auto& arg : opt.reports) {
    auto eq = arg.find('=');
    std::string name = eq == std::string::npos ? "" : arg.substr(0, eq);
    fs::path path = eq == std::string::npos ? arg : arg.substr(eq + 1);
    if (fs::is_directory(path)) path /= "report.tsv";
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
    ExperimentReport r = read_report_tsv(in);
    if (name.empty()) name = config_value(r, "schedule");
    if (name.empty()) name = path.parent_path().filename().string();
    reports.push_back({name, std::move(r)});
  }
  if (reports.empty()) {
    err << "error: report needs at least one report.tsv\n";
    return kUsage;
  }
  const std::string baseline = opt.baseline.empty() ? reports.front().name : opt.baseline;
  std::ostringstream s;
  render_tables(s, reports, baseline, opt.format);
  if (opt.out_path.empty()) {
    out << s.str();
  } else {
    write_file(opt.out_path, s.str());
  }
  return kOk;
}

// dispatch ---------------------------------------------------------------------

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sidlab: slot and intent detection transfer experiments"};
  app.require_subcommand(1);
  std::map<std::string, TableFormat> formats{{"tsv", TableFormat::tsv}, {"md", TableFormat::markdown}};
  std::map<std::string, TaskKind> kinds{{"sid", TaskKind::sid}, {"xsid", TaskKind::sid}, {"conllu", TaskKind::ud},
                                        {"ud", TaskKind::ud},   {"ner", TaskKind::ner},  {"text", TaskKind::mlm},
                                        {"mlm", TaskKind::mlm}};

  auto* validate = app.add_subcommand("validate", "parse corpus files and report counts and label inventories");
  std::vector<std::string> validate_paths;
  std::string validate_kind = "sid";
  validate->add_option("--format", validate_kind, "sid, conllu, ner or text")
      ->check(CLI::IsMember(kinds, CLI::ignore_case));
  validate->add_option("files", validate_paths, "corpus files")->required();

  auto* train = app.add_subcommand("train", "run a training schedule and write reports and checkpoints");
  TrainOptions train_opt;
  train->add_option("--config", train_opt.config_path, "run configuration (YAML)")->required();
  train->add_option("--out", train_opt.out_dir, "output directory")->required();
  train->add_flag("--force", train_opt.force, "overwrite a non-empty output directory");
  train->add_option("--seed", train_opt.seed, "run only this seed");
  train->add_flag("--quiet", train_opt.quiet, "no per-epoch progress");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on SID files, or a prediction file against gold");
  EvalOptions eval_opt;
  std::string eval_format = "tsv";
  eval->add_option("--model", eval_opt.model_path, "checkpoint file");
  eval->add_option("--task", eval_opt.task, "SID task name inside the checkpoint");
  eval->add_option("--gold", eval_opt.gold_path, "gold SID file");
  eval->add_option("--pred", eval_opt.pred_path, "predicted SID file");
  eval->add_option("--format", eval_format, "tsv or md")->check(CLI::IsMember(formats));
  eval->add_option("datasets", eval_opt.datasets, "[name=]path SID files");

  auto* dist = app.add_subcommand("dist", "pairwise similarity matrices of aligned SID translations");
  DistOptions dist_opt;
  std::string dist_format = "tsv";
  std::string aggregation = "per_sentence";
  dist->add_option("corpora", dist_opt.corpora, "tag=path SID files, sentence-aligned")->required();
  dist->add_option("--mode", dist_opt.modes, "slot_chars, sentence_words, <level>/case_(in)sensitive or all; repeat or comma-separate")
      ->allow_extra_args(false)
      ->delimiter(',');
  dist->add_option("--out", dist_opt.out_dir, "directory for one file per mode (default: stdout)");
  dist->add_option("--slot-aggregation", aggregation, "per_sentence or pooled")
      ->check(CLI::IsMember({"per_sentence", "pooled"}));
  dist->add_option("--format", dist_format, "tsv or md")->check(CLI::IsMember(formats));

  auto* report = app.add_subcommand("report", "render comparison tables from report.tsv files");
  ReportOptions report_opt;
  std::string report_format = "md";
  report->add_option("reports", report_opt.reports, "[name=]report.tsv or run directory")->required();
  report->add_option("--baseline", report_opt.baseline, "setup name of the baseline (default: first)");
  report->add_option("--out", report_opt.out_path, "output file (default: stdout)");
  report->add_option("--format", report_format, "md or tsv")->check(CLI::IsMember(formats));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*validate) return cmd_validate(validate_paths, kinds.at(lower(validate_kind)), out, err);
    if (*train) return cmd_train(train_opt, out, err);
    if (*eval) {
      eval_opt.format = formats.at(eval_format);
      return cmd_eval(eval_opt, out, err);
    }
    if (*dist) {
      dist_opt.format = formats.at(dist_format);
      dist_opt.aggregation = aggregation == "pooled" ? SlotAggregation::pooled : SlotAggregation::per_sentence;
      return cmd_dist(dist_opt, out, err);
    }
    if (*report) {
      report_opt.format = formats.at(report_format);
      return cmd_report(report_opt, out, err);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}

}  // namespace sidlab::cli
