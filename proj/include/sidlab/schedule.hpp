#pragma once

// Training schedules in `×`/`→` notation and their execution.
//
//   schedule := stage ("→" stage)*
//   stage    := task ("×" task)*
//
// `->` and a free-standing `x` are ASCII aliases; whitespace is ignored.
// Tasks within a stage train jointly: every step takes one batch from one
// task, tasks take turns round-robin, and an epoch lasts until the task with
// the most batches has seen all of them (smaller tasks wrap around). Each task
// therefore gets the same number of steps per epoch. Between stages the heads
// of tasks that do not continue are removed; the encoder carries over.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sidlab/corpus.hpp"
#include "sidlab/error.hpp"
#include "sidlab/metrics.hpp"
#include "sidlab/model.hpp"

namespace sidlab {

struct Stage {
  std::vector<std::string> tasks;

  bool contains(const std::string& t) const { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); }
  friend bool operator==(const Stage&, const Stage&) = default;
};

struct Schedule {
  std::vector<Stage> stages;
  friend bool operator==(const Schedule&, const Schedule&) = default;
};

namespace detail {

enum class SchedTok { arrow, times, ident };

inline bool is_ident_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.' ||
         c == '-';
}

}  // namespace detail

inline Schedule parse_schedule(std::string_view text) {
  using detail::SchedTok;
  std::vector<std::pair<SchedTok, std::string>> toks;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
    } else if (text.substr(i, 3) == "→") {
      toks.emplace_back(SchedTok::arrow, "");
      i += 3;
    } else if (text.substr(i, 2) == "->") {
      toks.emplace_back(SchedTok::arrow, "");
      i += 2;
    } else if (text.substr(i, 2) == "×") {
      toks.emplace_back(SchedTok::times, "");
      i += 2;
    } else if (detail::is_ident_char(c)) {
      std::size_t j = i;
      while (j < text.size() && detail::is_ident_char(text[j]) && text.substr(j, 2) != "->") ++j;
      std::string ident(text.substr(i, j - i));
      toks.emplace_back(ident == "x" ? SchedTok::times : SchedTok::ident, ident);
      i = j;
    } else {
      throw Error(Errc::ScheduleSyntax, "unexpected character at offset " + std::to_string(i) + " in '" +
                                            std::string(text) + "'");
    }
  }
  if (toks.empty()) throw Error(Errc::EmptySchedule, "schedule text is empty");

  Schedule s;
  Stage stage;
  bool expect_task = true;
  auto fail_empty = [&]() { throw Error(Errc::EmptyStage, "empty stage or task slot in '" + std::string(text) + "'"); };
  for (const auto& [kind, value] : toks) {
    switch (kind) {
      case SchedTok::ident:
        if (!expect_task) throw Error(Errc::ScheduleSyntax, "missing operator before '" + value + "'");
        if (stage.contains(value)) throw Error(Errc::ScheduleSyntax, "task '" + value + "' repeated within a stage");
        stage.tasks.push_back(value);
        expect_task = false;
        break;
      case SchedTok::times:
        if (expect_task) fail_empty();
        expect_task = true;
        break;
      case SchedTok::arrow:
        if (expect_task) fail_empty();
        s.stages.push_back(std::move(stage));
        stage = Stage{};
        expect_task = true;
        break;
    }
  }
  if (expect_task) fail_empty();
  s.stages.push_back(std::move(stage));
  return s;
}

inline std::string render_schedule(const Schedule& s) {
  std::string out;
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    if (i) out += "→";
    for (std::size_t j = 0; j < s.stages[i].tasks.size(); ++j) {
      if (j) out += "×";
      out += s.stages[i].tasks[j];
    }
  }
  return out;
}

struct TaskBinding {
  std::string name;
  TaskKind kind = TaskKind::sid;
  Dataset train;
  Dataset dev;
};

using Bindings = std::map<std::string, TaskBinding>;

struct TrainConfig {
  std::size_t max_epochs = 20;
  std::size_t batch_size = 8;
  AdamConfig adam;
  double mask_prob = 0.15;
  bool mlm_split_per_epoch = true;
};

// The part of an MLM dataset used in one epoch. With splitting enabled the
// data is cut into consecutive slices of ceil(n / max_epochs) sentences and
// epochs cycle through them; otherwise every epoch sees everything.
inline Dataset mlm_epoch_slice(const Dataset& d, std::size_t epoch, const TrainConfig& config) {
  if (!config.mlm_split_per_epoch || d.empty()) return d;
  const std::size_t n = d.size();
  const std::size_t epochs = std::max<std::size_t>(config.max_epochs, 1);
  const std::size_t slice = (n + epochs - 1) / epochs;
  const std::size_t n_slices = (n + slice - 1) / slice;
  const std::size_t begin = (epoch % n_slices) * slice;
  const std::size_t end = std::min(n, begin + slice);
  Dataset out{d.name, d.language_tag, d.task_kind, {}};
  out.sentences.assign(d.sentences.begin() + static_cast<std::ptrdiff_t>(begin),
                       d.sentences.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

inline const TaskBinding& binding_for(const Bindings& bindings, const std::string& task) {
  auto it = bindings.find(task);
  if (it == bindings.end()) throw Error(Errc::MissingBinding, "no data bound to task '" + task + "'");
  return it->second;
}

// Creates the heads of every stage task that the model does not have yet.
inline void ensure_heads(ModelState& m, const Stage& stage, const Bindings& bindings) {
  for (const auto& task : stage.tasks) {
    const TaskBinding& b = binding_for(bindings, task);
    for (const auto& spec : heads_for_task(task, b.kind)) {
      if (m.has_head(spec.name)) continue;
      add_head(m, spec, task, build_label_vocab(b.train, spec.role));
    }
  }
}

// Moves a model from one stage to the next: heads of tasks absent from `to`
// are dropped, new heads are initialized from the model's seed stream and the
// optimizer restarts. A transition to an identical stage changes nothing.
inline ModelState transition(ModelState m, const Stage& from, const Stage& to, const Bindings& bindings) {
  const std::set<std::string> a(from.tasks.begin(), from.tasks.end());
  const std::set<std::string> b(to.tasks.begin(), to.tasks.end());
  if (a == b) return m;
  std::vector<std::string> drop;
  for (const auto& [name, info] : m.heads) {
    if (!b.count(info.task)) drop.push_back(name);
  }
  for (const auto& name : drop) remove_head(m, name);
  ensure_heads(m, to, bindings);
  reset_optimizer(m);
  return m;
}

// Dev evaluation ---------------------------------------------------------------

struct TaskScores {
  std::map<std::string, double> metrics;
  double selection = 0.0;  // contribution to the model-selection score
};

inline constexpr std::uint64_t kDevMaskSeed = 0x6d6c6d2d646576ULL;

inline TaskScores evaluate_task(const ModelState& m, const std::string& task, TaskKind kind, const Dataset& dev,
                                const TrainConfig& config) {
  TaskScores out;
  if (dev.empty()) return out;
  switch (kind) {
    case TaskKind::sid: {
      std::vector<SidPrediction> pred;
      for (const auto& s : dev.sentences) pred.push_back(predict_sid(m, s, task));
      MetricReport r = score_sid(dev.sentences, pred);
      out.metrics = {{"slot_f1", r.slot_f1}, {"intent_accuracy", r.intent_accuracy}, {"fully_correct", r.fully_correct}};
      out.selection = r.slot_f1 + r.intent_accuracy;
      break;
    }
    case TaskKind::ud: {
      std::vector<DependencyPrediction> deps;
      std::vector<std::vector<std::string>> pos;
      for (const auto& s : dev.sentences) {
        auto p = predict(m, s, task);
        deps.push_back(std::move(*p.dependencies));
        pos.push_back(std::move(*p.tags));
      }
      const double l = las(dev.sentences, deps);
      const double a = pos_accuracy(dev.sentences, pos);
      out.metrics = {{"las", l}, {"pos_accuracy", a}};
      out.selection = l + a;
      break;
    }
    case TaskKind::ner: {
      std::vector<std::vector<std::string>> gold, pred;
      for (const auto& s : dev.sentences) {
        gold.push_back(*s.ner_tags);
        pred.push_back(*predict(m, s, task).tags);
      }
      const double f = span_f1(gold, pred).f1;
      out.metrics = {{"ner_span_f1", f}};
      out.selection = f;
      break;
    }
    case TaskKind::mlm: {
      const std::string head = task + ".lm";
      double nll = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < dev.size(); ++i) {
        auto ms = mask_tokens(dev.sentences[i], m.tokens, config.mask_prob, kDevMaskSeed + i);
        auto [l, c] = masked_nll(m, ms, head);
        nll += l;
        count += c;
      }
      if (count == 0) break;
      const double ppl = masked_perplexity(nll, count);
      out.metrics = {{"mlm_perplexity", ppl}};
      out.selection = -std::log(ppl);
      break;
    }
  }
  return out;
}

// Stage execution ----------------------------------------------------------------

struct StepRecord {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  std::string task;
  double loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::map<std::string, TaskScores> dev;
  double selection = 0.0;
};

struct StageResult {
  Stage stage;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::vector<StepRecord> steps;
  double seconds = 0.0;

  std::map<std::string, std::size_t> steps_per_task(std::size_t epoch) const {
    std::map<std::string, std::size_t> out;
    for (const auto& s : steps) {
      if (s.epoch == epoch) ++out[s.task];
    }
    return out;
  }
};

using ProgressFn = std::function<void(const std::string&)>;

inline std::pair<ModelState, StageResult> run_stage(ModelState m, const Stage& stage, const Bindings& bindings,
                                                    const TrainConfig& config, std::size_t stage_index = 0,
                                                    const ProgressFn& progress = {}) {
  const auto started = std::chrono::steady_clock::now();
  if (stage.tasks.empty()) throw Error(Errc::EmptyStage, "stage has no tasks");
  if (config.max_epochs == 0) throw Error(Errc::InvalidConfig, "max_epochs must be at least 1");
  if (config.batch_size == 0) throw Error(Errc::InvalidConfig, "batch_size must be at least 1");
  std::vector<const TaskBinding*> tasks;
  for (const auto& t : stage.tasks) {
    const TaskBinding& b = binding_for(bindings, t);
    if (b.train.empty()) throw Error(Errc::NoTrainableData, "task '" + t + "' has no training sentences");
    tasks.push_back(&b);
  }
  ensure_heads(m, stage, bindings);
  // Without dev data there is nothing to select on and the last epoch wins.
  bool has_dev = false;
  for (const TaskBinding* b : tasks) has_dev = has_dev || !b->dev.empty();

  StageResult result;
  result.stage = stage;
  std::optional<std::map<std::string, Matrix>> best_params;
  double best_score = -std::numeric_limits<double>::infinity();
  Gradients grads = zero_gradients(m);

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::vector<std::vector<std::vector<const Sentence*>>> batches(tasks.size());
    std::vector<Dataset> epoch_data(tasks.size());
    std::size_t n_steps = 0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const TaskBinding& b = *tasks[t];
      epoch_data[t] = b.kind == TaskKind::mlm ? mlm_epoch_slice(b.train, epoch, config) : b.train;
      std::vector<std::size_t> order(epoch_data[t].size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      m.rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
        std::vector<const Sentence*> batch;
        for (std::size_t k = i; k < std::min(order.size(), i + config.batch_size); ++k) {
          batch.push_back(&epoch_data[t].sentences[order[k]]);
        }
        batches[t].push_back(std::move(batch));
      }
      n_steps = std::max(n_steps, batches[t].size());
    }

    for (std::size_t step = 0; step < n_steps; ++step) {
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        const TaskBinding& b = *tasks[t];
        const auto& chosen = batches[t][step % batches[t].size()];
        Batch batch{b.name, b.kind, {}, {}};
        for (const Sentence* s : chosen) batch.sentences.push_back(*s);
        if (b.kind == TaskKind::mlm) {
          std::size_t selected = 0;
          for (const auto& s : batch.sentences) {
            batch.masked.push_back(mask_tokens(s, m.tokens, config.mask_prob, m.rng.fork_seed()));
            selected += batch.masked.back().positions.size();
          }
          // An empty draw still takes its step, on one forced mask.
          if (selected == 0) {
            const std::size_t k = m.rng.below(batch.masked.size());
            MaskedSentence& ms = batch.masked[k];
            const std::size_t pos = m.rng.below(ms.input_ids.size());
            ms.positions.push_back(pos);
            ms.targets.push_back(ms.input_ids[pos]);
            ms.input_ids[pos] = Vocab::kMask;
          }
        }
        for (auto& [name, g] : grads) g.zero();
        const double loss = task_loss(m, batch, grads);
        optimizer_step(m, grads, config.adam);
        result.steps.push_back({stage_index, epoch, b.name, loss});
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    for (const TaskBinding* b : tasks) {
      TaskScores sc = evaluate_task(m, b->name, b->kind, b->dev, config);
      rec.selection += sc.selection;
      rec.dev.emplace(b->name, std::move(sc));
    }
    if (progress) {
      std::string line = "stage " + std::to_string(stage_index) + " epoch " + std::to_string(epoch + 1);
      for (const auto& [task, sc] : rec.dev) {
        for (const auto& [metric, v] : sc.metrics) line += " " + task + "." + metric + "=" + std::to_string(v);
      }
      progress(line);
    }
    if (!has_dev || rec.selection > best_score) {
      best_score = rec.selection;
      result.best_epoch = epoch;
      best_params = m.params;
    }
    result.epochs.push_back(std::move(rec));
  }
  if (best_params) m.params = std::move(*best_params);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(m), std::move(result)};
}

// Experiments --------------------------------------------------------------------

struct EvalSet {
  std::string name;
  Dataset data;
};

struct RunConfig {
  std::string schedule = "SID";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  ModelConfig model;
  TrainConfig train;
  Bindings tasks;
  std::vector<EvalSet> eval;
  bool parallel_seeds = true;
  std::vector<std::pair<std::string, std::string>> echo;  // config as written, for reports
};

struct StageBoundary {
  std::size_t to_stage = 0;
  std::uint64_t checksum_before = 0;  // after the previous stage's model selection
  std::uint64_t checksum_after = 0;   // after the transition, before any update
  std::vector<std::string> heads_after;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, MetricReport>> eval;  // in config eval order
  AuxReport aux;
  std::vector<StageResult> stages;
  std::vector<StageBoundary> boundaries;
  std::vector<std::string> final_heads;
};

inline const std::vector<std::string>& sid_metric_names() {
  static const std::vector<std::string> names{"slot_precision", "slot_recall", "slot_f1", "intent_accuracy",
                                              "fully_correct"};
  return names;
}

inline double metric_value(const MetricReport& r, std::string_view metric) {
  if (metric == "slot_precision") return r.slot_precision;
  if (metric == "slot_recall") return r.slot_recall;
  if (metric == "slot_f1") return r.slot_f1;
  if (metric == "intent_accuracy") return r.intent_accuracy;
  if (metric == "fully_correct") return r.fully_correct;
  throw Error(Errc::InvalidConfig, "unknown metric '" + std::string(metric) + "'");
}

struct ExperimentReport {
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::vector<std::string> eval_names;
  std::vector<SeedRun> runs;
  // eval dataset -> metric -> aggregate over runs
  std::map<std::string, std::map<std::string, SeedAggregate>> aggregates;
  std::vector<std::string> warnings;
};

inline std::vector<std::string> validate_schedule(const Schedule& s, const Bindings& bindings) {
  std::vector<std::string> warnings;
  for (const auto& stage : s.stages) {
    for (const auto& t : stage.tasks) {
      if (!bindings.count(t)) throw Error(Errc::UnknownTask, "schedule names task '" + t + "' which has no data");
    }
  }
  bool final_sid = false;
  for (const auto& t : s.stages.back().tasks) final_sid = final_sid || bindings.at(t).kind == TaskKind::sid;
  if (!final_sid) warnings.push_back("final stage does not train a SID task");
  return warnings;
}

inline Vocab build_token_vocab(const Bindings& bindings) {
  std::vector<const Dataset*> sets;
  for (const auto& [name, b] : bindings) sets.push_back(&b.train);
  return build_token_vocab(std::span<const Dataset* const>(sets));
}

inline void fill_aux(AuxReport& aux, const Bindings& bindings, const StageResult& stage) {
  const EpochRecord& best = stage.epochs.at(stage.best_epoch);
  for (const auto& [task, sc] : best.dev) {
    switch (bindings.at(task).kind) {
      case TaskKind::ud:
        if (sc.metrics.count("las")) aux.las = sc.metrics.at("las");
        if (sc.metrics.count("pos_accuracy")) aux.pos_accuracy = sc.metrics.at("pos_accuracy");
        break;
      case TaskKind::ner:
        if (sc.metrics.count("ner_span_f1")) aux.ner_span_f1 = sc.metrics.at("ner_span_f1");
        break;
      case TaskKind::mlm:
        if (sc.metrics.count("mlm_perplexity")) aux.mlm_perplexity = sc.metrics.at("mlm_perplexity");
        break;
      case TaskKind::sid: break;
    }
  }
}

// One full schedule under one seed; returns the run record and the final model.
inline std::pair<SeedRun, ModelState> run_seed(const RunConfig& config, const Schedule& schedule, const Vocab& vocab,
                                               std::uint64_t seed, const ProgressFn& progress = {}) {
  SeedRun run;
  run.seed = seed;
  ModelState m = init_model(config.model, vocab, seed);
  for (std::size_t k = 0; k < schedule.stages.size(); ++k) {
    if (k > 0) {
      StageBoundary boundary;
      boundary.to_stage = k;
      boundary.checksum_before = encoder_checksum(m);
      m = transition(std::move(m), schedule.stages[k - 1], schedule.stages[k], config.tasks);
      boundary.checksum_after = encoder_checksum(m);
      for (const auto& [name, info] : m.heads) boundary.heads_after.push_back(name);
      run.boundaries.push_back(std::move(boundary));
    }
    auto [next, result] = run_stage(std::move(m), schedule.stages[k], config.tasks, config.train, k, progress);
    m = std::move(next);
    fill_aux(run.aux, config.tasks, result);
    run.stages.push_back(std::move(result));
  }
  for (const auto& [name, info] : m.heads) run.final_heads.push_back(name);

  std::optional<std::string> sid_task;
  for (const auto& t : schedule.stages.back().tasks) {
    if (!sid_task && config.tasks.at(t).kind == TaskKind::sid) sid_task = t;
  }
  for (const auto& ev : config.eval) {
    if (!sid_task) throw Error(Errc::InvalidConfig, "evaluation sets given but the final stage trains no SID task");
    std::vector<SidPrediction> pred;
    pred.reserve(ev.data.size());
    for (const auto& s : ev.data.sentences) pred.push_back(predict_sid(m, s, *sid_task));
    run.eval.emplace_back(ev.name, score_sid(ev.data.sentences, pred));
  }
  return {std::move(run), std::move(m)};
}

inline void compute_aggregates(ExperimentReport& report) {
  report.aggregates.clear();
  for (const auto& name : report.eval_names) {
    for (const auto& metric : sid_metric_names()) {
      std::vector<double> values;
      for (const auto& run : report.runs) {
        for (const auto& [ev, r] : run.eval) {
          if (ev == name) values.push_back(metric_value(r, metric));
        }
      }
      if (!values.empty()) report.aggregates[name][metric] = aggregate_seeds(values);
    }
  }
}

inline ExperimentReport run_schedule(const RunConfig& config, std::vector<ModelState>* final_models = nullptr,
                                     const ProgressFn& progress = {}) {
  if (config.seeds.empty()) throw Error(Errc::InvalidConfig, "at least one seed is required");
  const Schedule schedule = parse_schedule(config.schedule);
  ExperimentReport report;
  report.config_echo = config.echo;
  report.warnings = validate_schedule(schedule, config.tasks);
  for (const auto& ev : config.eval) report.eval_names.push_back(ev.name);
  const Vocab vocab = build_token_vocab(config.tasks);

  std::vector<std::pair<SeedRun, ModelState>> results;
  if (config.parallel_seeds && config.seeds.size() > 1) {
    std::mutex progress_mutex;
    std::vector<std::future<std::pair<SeedRun, ModelState>>> futures;
    for (std::uint64_t seed : config.seeds) {
      ProgressFn seed_progress;
      if (progress) {
        seed_progress = [&progress, &progress_mutex, seed](const std::string& line) {
          std::lock_guard lock(progress_mutex);
          progress("seed " + std::to_string(seed) + " " + line);
        };
      }
      futures.push_back(std::async(std::launch::async, [&config, &schedule, &vocab, seed, seed_progress]() {
        return run_seed(config, schedule, vocab, seed, seed_progress);
      }));
    }
    for (auto& f : futures) results.push_back(f.get());
  } else {
    for (std::uint64_t seed : config.seeds) {
      ProgressFn seed_progress;
      if (progress) seed_progress = [&progress, seed](const std::string& line) { progress("seed " + std::to_string(seed) + " " + line); };
      results.push_back(run_seed(config, schedule, vocab, seed, seed_progress));
    }
  }
  for (auto& [run, model] : results) {
    report.runs.push_back(std::move(run));
    if (final_models) final_models->push_back(std::move(model));
  }
  compute_aggregates(report);
  return report;
}

}  // namespace sidlab
