#include <gtest/gtest.h>

#include <set>

#include "sidlab/config.hpp"
#include "sidlab/schedule.hpp"

using namespace sidlab;

namespace {

const std::string kData = SIDLAB_TEST_DATA;

Schedule sched(std::initializer_list<std::initializer_list<const char*>> stages) {
  Schedule s;
  for (const auto& st : stages) {
    Stage stage;
    for (const char* t : st) stage.tasks.push_back(t);
    s.stages.push_back(stage);
  }
  return s;
}

template <class F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::Io;
}

Dataset numbered(std::size_t n, TaskKind kind = TaskKind::mlm) {
  Dataset d{"d", {}, kind, {}};
  for (std::size_t i = 0; i < n; ++i) d.sentences.push_back(make_sentence({"s" + std::to_string(i)}));
  return d;
}

Sentence sid_sentence(const std::vector<std::string>& words, const std::vector<std::string>& tags, const std::string& intent) {
  Sentence s = make_sentence(words);
  s.slot_tags = tags;
  s.intent = intent;
  return s;
}

Sentence ner_sentence(const std::vector<std::string>& words, const std::vector<std::string>& tags) {
  Sentence s = make_sentence(words);
  s.ner_tags = tags;
  return s;
}

Bindings tiny_bindings(std::size_t n_sid, std::size_t n_ner) {
  Bindings b;
  Dataset sid{"SID", {}, TaskKind::sid, {}};
  for (std::size_t i = 0; i < n_sid; ++i) {
    sid.sentences.push_back(i % 2 ? sid_sentence({"set", "alarm", "tomorrow"}, {"O", "O", "B-datetime"}, "set")
                                  : sid_sentence({"cancel", "all"}, {"O", "B-reference"}, "cancel"));
  }
  Dataset ner{"NER", {}, TaskKind::ner, {}};
  for (std::size_t i = 0; i < n_ner; ++i) ner.sentences.push_back(ner_sentence({"sepp", "is", "in", "minga"}, {"B-PER", "O", "O", "B-LOC"}));
  b["SID"] = {"SID", TaskKind::sid, sid, sid};
  b["NER"] = {"NER", TaskKind::ner, ner, ner};
  return b;
}

}  // namespace

TEST(ParseSchedule, Examples) {
  EXPECT_EQ(parse_schedule("SID"), sched({{"SID"}}));
  EXPECT_EQ(parse_schedule("MLM×NER→SID"), sched({{"MLM", "NER"}, {"SID"}}));
  EXPECT_EQ(parse_schedule("UD→NER→SID"), sched({{"UD"}, {"NER"}, {"SID"}}));
  EXPECT_EQ(parse_schedule("  MLM x NER -> SID "), sched({{"MLM", "NER"}, {"SID"}}));
  EXPECT_EQ(parse_schedule("UD->NER->SID"), sched({{"UD"}, {"NER"}, {"SID"}}));
  EXPECT_EQ(parse_schedule("MLM × UD × NER → SID"), sched({{"MLM", "UD", "NER"}, {"SID"}}));
}

TEST(ParseSchedule, Errors) {
  EXPECT_EQ(error_of([] { parse_schedule("→SID"); }), Errc::EmptyStage);
  EXPECT_EQ(error_of([] { parse_schedule("SID→"); }), Errc::EmptyStage);
  EXPECT_EQ(error_of([] { parse_schedule("NER→→SID"); }), Errc::EmptyStage);
  EXPECT_EQ(error_of([] { parse_schedule("NER××SID"); }), Errc::EmptyStage);
  EXPECT_EQ(error_of([] { parse_schedule(""); }), Errc::EmptySchedule);
  EXPECT_EQ(error_of([] { parse_schedule("   "); }), Errc::EmptySchedule);
  EXPECT_EQ(error_of([] { parse_schedule("NER SID"); }), Errc::ScheduleSyntax);
  EXPECT_EQ(error_of([] { parse_schedule("NER×NER"); }), Errc::ScheduleSyntax);
  EXPECT_EQ(error_of([] { parse_schedule("NER+SID"); }), Errc::ScheduleSyntax);
}

TEST(ParseSchedule, RenderRoundTrip) {
  for (const char* text : {"SID", "MLM×NER→SID", "UD→NER→SID", "UD×NER×MLM→SID", "NER→UD×MLM→SID"}) {
    EXPECT_EQ(render_schedule(parse_schedule(text)), text);
    EXPECT_EQ(parse_schedule(render_schedule(parse_schedule(text))), parse_schedule(text));
  }
}

TEST(MlmEpochSlice, SeventyOfFourteenHundred) {
  Dataset d = numbered(1400);
  TrainConfig c;
  c.max_epochs = 20;
  std::set<std::string> seen;
  for (std::size_t e = 0; e < 20; ++e) {
    Dataset slice = mlm_epoch_slice(d, e, c);
    ASSERT_EQ(slice.size(), 70u);
    for (const auto& s : slice.sentences) EXPECT_TRUE(seen.insert(s.tokens[0].surface).second);
  }
  EXPECT_EQ(seen.size(), 1400u);
  EXPECT_EQ(mlm_epoch_slice(d, 20, c), mlm_epoch_slice(d, 0, c));
  c.mlm_split_per_epoch = false;
  EXPECT_EQ(mlm_epoch_slice(d, 3, c).size(), 1400u);
}

TEST(MlmEpochSlice, UnevenSizes) {
  Dataset d = numbered(45);
  TrainConfig c;
  c.max_epochs = 20;  // slices of 3, fifteen of them
  std::size_t total = 0;
  for (std::size_t e = 0; e < 15; ++e) total += mlm_epoch_slice(d, e, c).size();
  EXPECT_EQ(total, 45u);
  EXPECT_EQ(mlm_epoch_slice(d, 15, c), mlm_epoch_slice(d, 0, c));
}

TEST(Transition, RemovesHeadsKeepsEncoder) {
  Bindings b = tiny_bindings(4, 4);
  Vocab v = build_token_vocab(b);
  ModelState m = init_model(ModelConfig{8, 8, true}, v, 3);
  Stage ner{{"NER"}}, sid{{"SID"}};
  ensure_heads(m, ner, b);
  m.optimizer.t = 5;
  const auto before = encoder_checksum(m);
  ModelState after = transition(m, ner, sid, b);
  EXPECT_EQ(encoder_checksum(after), before);
  EXPECT_FALSE(after.has_head("NER.tags"));
  EXPECT_TRUE(after.has_head("SID.slots"));
  EXPECT_TRUE(after.has_head("SID.intent"));
  EXPECT_EQ(after.optimizer.t, 0u);
  for (const auto& [name, t] : after.params) EXPECT_EQ(name.find("head.NER."), std::string::npos);

  // Identical stage: nothing changes, heads are not reinitialized.
  ModelState same = transition(after, sid, sid, b);
  EXPECT_EQ(same.params, after.params);
}

TEST(Transition, UdToNerDropsBothUdHeads) {
  Bindings b = tiny_bindings(2, 2);
  Dataset ud{"UD", {}, TaskKind::ud, {}};
  Sentence s = make_sentence({"i", "mog"});
  s.pos_tags = std::vector<std::string>{"PRON", "VERB"};
  s.heads = std::vector<std::size_t>{2, 0};
  s.deprels = std::vector<std::string>{"nsubj", "root"};
  ud.sentences.push_back(s);
  b["UD"] = {"UD", TaskKind::ud, ud, ud};
  ModelState m = init_model(ModelConfig{4, 4, true}, build_token_vocab(b), 1);
  ensure_heads(m, Stage{{"UD"}}, b);
  EXPECT_EQ(m.heads.size(), 2u);
  ModelState n = transition(m, Stage{{"UD"}}, Stage{{"NER"}}, b);
  std::vector<std::string> heads;
  for (const auto& [name, info] : n.heads) heads.push_back(name);
  EXPECT_EQ(heads, (std::vector<std::string>{"NER.tags"}));
}

TEST(RunStage, EqualCadenceAndDeterminism) {
  Bindings b = tiny_bindings(10, 10);
  TrainConfig c;
  c.max_epochs = 3;
  c.batch_size = 3;
  ModelState m = init_model(ModelConfig{8, 8, true}, build_token_vocab(b), 4);
  auto [m1, r1] = run_stage(m, Stage{{"NER", "SID"}}, b, c);
  auto [m2, r2] = run_stage(m, Stage{{"NER", "SID"}}, b, c);
  for (std::size_t e = 0; e < 3; ++e) {
    auto steps = r1.steps_per_task(e);
    EXPECT_EQ(steps["NER"], 4u);
    EXPECT_EQ(steps["SID"], 4u);
  }
  // Round-robin: tasks alternate step by step.
  for (std::size_t i = 0; i < r1.steps.size(); ++i) EXPECT_EQ(r1.steps[i].task, i % 2 ? "SID" : "NER");
  EXPECT_EQ(m1.params, m2.params);
  ASSERT_EQ(r1.steps.size(), r2.steps.size());
  for (std::size_t i = 0; i < r1.steps.size(); ++i) EXPECT_EQ(r1.steps[i].loss, r2.steps[i].loss);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(r1.epochs[e].selection, r2.epochs[e].selection);
}

TEST(RunStage, UnequalSizesWrapSmallerTask) {
  Bindings b = tiny_bindings(3, 12);
  TrainConfig c;
  c.max_epochs = 1;
  c.batch_size = 2;
  ModelState m = init_model(ModelConfig{4, 4, true}, build_token_vocab(b), 4);
  auto [out, r] = run_stage(m, Stage{{"SID", "NER"}}, b, c);
  auto steps = r.steps_per_task(0);
  EXPECT_EQ(steps["NER"], 6u);
  EXPECT_EQ(steps["SID"], 6u);
}

TEST(RunStage, Errors) {
  Bindings b = tiny_bindings(3, 0);
  TrainConfig c;
  c.max_epochs = 1;
  ModelState m = init_model(ModelConfig{4, 4, true}, build_token_vocab(b), 4);
  EXPECT_EQ(error_of([&] { run_stage(m, Stage{{"SID", "NER"}}, b, c); }), Errc::NoTrainableData);
  EXPECT_EQ(error_of([&] { run_stage(m, Stage{{"SID", "UD"}}, b, c); }), Errc::MissingBinding);
}

TEST(RunStage, SelectsBestDevEpoch) {
  Bindings b = tiny_bindings(6, 0);
  b.erase("NER");
  TrainConfig c;
  c.max_epochs = 6;
  c.batch_size = 2;
  ModelState m = init_model(ModelConfig{8, 8, true}, build_token_vocab(b), 2);
  auto [out, r] = run_stage(m, Stage{{"SID"}}, b, c);
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& e : r.epochs) {
    if (e.selection > best) {
      best = e.selection;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  TaskScores again = evaluate_task(out, "SID", TaskKind::sid, b.at("SID").dev, c);
  EXPECT_DOUBLE_EQ(again.selection, best);
}

TEST(RunStage, ConvergesOnMemorizableCorpus) {
  Bindings b;
  Dataset d{"SID", {}, TaskKind::sid,
            {sid_sentence({"wake", "me", "at", "seven"}, {"O", "O", "B-datetime", "I-datetime"}, "alarm/set_alarm"),
             sid_sentence({"delete", "all", "alarms"}, {"O", "B-reference", "O"}, "alarm/cancel_alarm"),
             sid_sentence({"is", "it", "raining"}, {"O", "O", "B-weather/attribute"}, "weather/find"),
             sid_sentence({"remind", "me", "to", "shop"}, {"O", "O", "O", "B-reminder/todo"}, "reminder/set_reminder"),
             sid_sentence({"delete", "the", "alarm", "at", "seven"}, {"O", "O", "O", "B-datetime", "I-datetime"},
                          "alarm/cancel_alarm")}};
  b["SID"] = {"SID", TaskKind::sid, d, d};
  TrainConfig c;
  c.max_epochs = 50;
  c.batch_size = 2;
  c.adam.lr = 0.01;
  ModelState m = init_model(ModelConfig{16, 32, true}, build_token_vocab(b), 1);
  auto [out, r] = run_stage(m, Stage{{"SID"}}, b, c);
  EXPECT_EQ(evaluate_task(out, "SID", TaskKind::sid, d, c).metrics.at("fully_correct"), 1.0);
}

TEST(RunSchedule, IntermediateStageChangesEncoder) {
  RunConfig sid_only = load_run_config(kData + "/ud_ner_sid.yaml");
  sid_only.schedule = "SID";
  RunConfig staged = load_run_config(kData + "/ud_ner_sid.yaml");
  std::vector<ModelState> a, b;
  run_schedule(sid_only, &a);
  ExperimentReport r = run_schedule(staged, &b);
  ASSERT_EQ(r.runs.size(), 1u);
  const SeedRun& run = r.runs[0];
  ASSERT_EQ(run.stages.size(), 3u);
  ASSERT_EQ(run.boundaries.size(), 2u);
  const ModelState fresh = init_model(staged.model, build_token_vocab(staged.tasks), 5);
  EXPECT_NE(run.boundaries[1].checksum_after, encoder_checksum(fresh));
  for (const auto& bd : run.boundaries) EXPECT_EQ(bd.checksum_before, bd.checksum_after);
  EXPECT_EQ(run.boundaries[0].heads_after, (std::vector<std::string>{"NER.tags"}));
  EXPECT_EQ(run.final_heads, (std::vector<std::string>{"SID.intent", "SID.slots"}));
  EXPECT_TRUE(run.aux.las.has_value());
  EXPECT_TRUE(run.aux.pos_accuracy.has_value());
  EXPECT_TRUE(run.aux.ner_span_f1.has_value());
  EXPECT_NE(encoder_checksum(a[0]), encoder_checksum(b[0]));
}

TEST(RunSchedule, ReportShape) {
  RunConfig c = load_run_config(kData + "/sid.yaml");
  c.train.max_epochs = 2;
  c.seeds = {4, 5};
  ExperimentReport r = run_schedule(c);
  EXPECT_EQ(r.eval_names, (std::vector<std::string>{"test", "de-ba"}));
  ASSERT_EQ(r.runs.size(), 2u);
  for (const auto& run : r.runs) {
    ASSERT_EQ(run.eval.size(), 2u);
    for (const auto& [name, m] : run.eval) {
      for (const auto& metric : sid_metric_names()) {
        EXPECT_GE(metric_value(m, metric), 0.0);
        EXPECT_LE(metric_value(m, metric), 1.0);
      }
      EXPECT_LE(m.fully_correct, m.intent_accuracy);
    }
  }
  EXPECT_EQ(r.aggregates.at("test").at("slot_f1").n_runs, 2u);
  EXPECT_TRUE(r.warnings.empty());

  c.parallel_seeds = false;
  ExperimentReport serial = run_schedule(c);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(serial.runs[i].eval[0].second.slot_f1, r.runs[i].eval[0].second.slot_f1);
    EXPECT_EQ(serial.runs[i].eval[1].second.intent_accuracy, r.runs[i].eval[1].second.intent_accuracy);
  }
}

TEST(RunSchedule, ValidationErrorsAndWarnings) {
  RunConfig c = load_run_config(kData + "/ud_ner_sid.yaml");
  c.schedule = "POS→SID";
  EXPECT_EQ(error_of([&] { run_schedule(c); }), Errc::UnknownTask);
  c.schedule = "SID→NER";
  c.eval.clear();
  c.train.max_epochs = 1;
  ExperimentReport r = run_schedule(c);
  ASSERT_EQ(r.warnings.size(), 1u);
}

TEST(Config, Loading) {
  RunConfig c = load_run_config(kData + "/mtl.yaml");
  EXPECT_EQ(c.schedule, "MLM×NER→SID");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.train.max_epochs, 4u);
  EXPECT_EQ(c.model.dim, 12u);
  EXPECT_EQ(c.tasks.at("MLM").train.size(), 54u);
  EXPECT_EQ(c.tasks.at("MLM").dev.size(), 6u);
  EXPECT_EQ(c.tasks.at("NER").train.size(), 18u);
  EXPECT_EQ(c.tasks.at("SID").train.size(), 20u);
  EXPECT_EQ(c.eval.size(), 1u);
  EXPECT_EQ(error_of([] { load_run_config(kData + "/bad_key.yaml"); }), Errc::InvalidConfig);
  EXPECT_EQ(error_of([] { load_run_config(kData + "/missing.yaml"); }), Errc::InvalidConfig);
}
