#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "model_fixtures.hpp"
#include "sidlab/checkpoint.hpp"
#include "sidlab/model.hpp"

using namespace sidlab;

namespace {

Vocab small_vocab(std::size_t n) {
  Vocab v = Vocab::with_reserved();
  for (std::size_t i = 0; i < n; ++i) v.add(fixtures::word(i));
  return v;
}

Vocab labels(std::initializer_list<const char*> items) {
  Vocab v;
  for (const char* s : items) v.add(s);
  return v;
}

void zero_head(ModelState& m, const std::string& head) {
  for (auto& [name, t] : m.params) {
    if (is_head_param(name, head)) t.zero();
  }
}

Sentence sid_sentence(const std::vector<std::string>& words, const std::vector<std::string>& tags, const std::string& intent) {
  Sentence s = make_sentence(words);
  s.slot_tags = tags;
  s.intent = intent;
  return s;
}

}  // namespace

TEST(InitModel, DeterministicUnderSeed) {
  ModelConfig c{8, 16, true};
  ModelState a = init_model(c, small_vocab(5), 7);
  ModelState b = init_model(c, small_vocab(5), 7);
  ModelState other = init_model(c, small_vocab(5), 8);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(encoder_checksum(a), encoder_checksum(b));
  EXPECT_NE(encoder_checksum(a), encoder_checksum(other));
  EXPECT_TRUE(all_finite(a));

  const double bound = 1.0 / std::sqrt(8.0);
  for (double x : a.params.at("encoder.wq").data) EXPECT_LE(std::abs(x), bound);
  for (double x : a.params.at("encoder.w2").data) EXPECT_LE(std::abs(x), 1.0 / 4.0);
}

TEST(InitModel, RejectsZeroHiddenSize) {
  try {
    init_model(ModelConfig{0, 16, true}, small_vocab(3), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidModelConfig);
  }
}

TEST(Vocab, ReservedEntriesAndUnknown) {
  Vocab v = small_vocab(2);
  EXPECT_EQ(v.at(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.at(Vocab::kUnknown), "<unk>");
  EXPECT_EQ(v.at(Vocab::kMask), "<mask>");
  EXPECT_EQ(v.lookup("w1"), 4u);
  EXPECT_EQ(v.lookup("never seen"), Vocab::kUnknown);
}

TEST(Encode, SingleTokenPoolsToItself) {
  ModelState m = init_model(ModelConfig{6, 8, true}, small_vocab(4), 3);
  Encoding e = encode(m, make_sentence({"w2"}));
  ASSERT_EQ(e.tokens.rows, 1u);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(e.pooled[j], e.tokens(0, j));
  EXPECT_EQ(encode(m, make_sentence({"w2"})).tokens, e.tokens);
}

TEST(Encode, PermutationEquivariantWithoutPositions) {
  ModelState m = init_model(ModelConfig{6, 8, false}, small_vocab(4), 3);
  Encoding a = encode(m, make_sentence({"w0", "w1", "w3"}));
  Encoding b = encode(m, make_sentence({"w3", "w0", "w1"}));
  const std::size_t perm[3] = {1, 2, 0};  // a row i appears as b row perm[i]
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(a.tokens(i, j), b.tokens(perm[i], j), 1e-12);
  }
  ModelState positional = init_model(ModelConfig{6, 8, true}, small_vocab(4), 3);
  Encoding c = encode(positional, make_sentence({"w0", "w1", "w3"}));
  Encoding d = encode(positional, make_sentence({"w3", "w0", "w1"}));
  EXPECT_NE(c.tokens(0, 0), d.tokens(1, 0));
}

TEST(Encode, EmptySentence) {
  ModelState m = init_model(ModelConfig{4, 4, true}, small_vocab(2), 1);
  try {
    encode(m, Sentence{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptySentence);
  }
}

TEST(TaskLoss, UniformClassificationIsLogK) {
  ModelState m = init_model(ModelConfig{6, 8, true}, small_vocab(4), 5);
  add_head(m, {"S.slots", HeadKind::tagging, HeadRole::slots}, "S", labels({"O"}));
  add_head(m, {"S.intent", HeadKind::classification, HeadRole::intent}, "S", labels({"a", "b", "c", "d", "e"}));
  zero_head(m, "S.intent");
  Batch batch{"S", TaskKind::sid, {sid_sentence({"w0", "w1"}, {"O", "O"}, "c"), sid_sentence({"w3"}, {"O"}, "a")}, {}};
  EXPECT_NEAR(task_loss(m, batch).loss, std::log(5.0), 1e-12);
}

TEST(TaskLoss, UniformArcsGiveLogNPlusOne) {
  ModelState m = init_model(ModelConfig{6, 8, true}, small_vocab(4), 5);
  add_head(m, {"U.pos", HeadKind::tagging, HeadRole::pos}, "U", labels({"X"}));
  add_head(m, {"U.deps", HeadKind::dependency, HeadRole::deps}, "U", labels({"dep"}));
  m.params.at(head_param("U.deps", "arc")).zero();
  m.params.at(head_param("U.deps", "arc_bias")).zero();
  for (std::size_t n = 1; n <= 5; ++n) {
    std::vector<std::string> words(n, "w1");
    Sentence s = make_sentence(words);
    s.pos_tags = std::vector<std::string>(n, "X");
    s.heads = std::vector<std::size_t>(n, 0);
    s.deprels = std::vector<std::string>(n, "dep");
    Batch batch{"U", TaskKind::ud, {s}, {}};
    EXPECT_NEAR(task_loss(m, batch).loss, std::log(static_cast<double>(n + 1)), 1e-12) << n;
  }
}

TEST(TaskLoss, Errors) {
  ModelState m = init_model(ModelConfig{4, 4, true}, small_vocab(2), 1);
  try {
    task_loss(m, Batch{"S", TaskKind::sid, {}, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyBatch);
  }
  try {
    task_loss(m, Batch{"S", TaskKind::sid, {sid_sentence({"w0"}, {"O"}, "a")}, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownTask);
  }
}

TEST(TaskLoss, MlmWithoutMasksIsZero) {
  ModelState m = init_model(ModelConfig{4, 4, true}, small_vocab(3), 1);
  add_head(m, {"M.lm", HeadKind::mlm, HeadRole::lm}, "M", {});
  Sentence s = make_sentence({"w0", "w1"});
  Batch batch{"M", TaskKind::mlm, {s}, {mask_tokens(s, m.tokens, 0.0, 1)}};
  EXPECT_EQ(task_loss(m, batch).loss, 0.0);
}

TEST(TaskLoss, GradientsMatchFiniteDifferences) {
  for (HeadKind kind : fixtures::all_head_kinds()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto p = fixtures::random_problem(kind, 1000 + seed);
      auto r = fixtures::check_gradients(p.model, p.batch);
      EXPECT_LT(r.max_rel_error, 1e-4) << to_string(kind) << " seed " << seed << " tensor " << r.worst_tensor;
    }
  }
}

TEST(TaskLoss, NonNegativeAndDeterministic) {
  for (HeadKind kind : fixtures::all_head_kinds()) {
    auto p = fixtures::random_problem(kind, 77);
    auto a = task_loss(p.model, p.batch);
    auto b = task_loss(p.model, p.batch);
    EXPECT_GE(a.loss, 0.0);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.gradients, b.gradients);
  }
}

TEST(Softmax, SumsToOne) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(1 + rng.below(20));
    for (double& x : v) x = rng.uniform(-50, 50);
    softmax_inplace(v);
    double sum = 0;
    for (double x : v) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(TaskLoss, MemorizesTinyCorpus) {
  std::vector<Sentence> data{
      sid_sentence({"w0", "w1"}, {"B-a", "O"}, "x"),       sid_sentence({"w2", "w3", "w4"}, {"O", "B-b", "I-b"}, "y"),
      sid_sentence({"w5"}, {"O"}, "z"),                    sid_sentence({"w1", "w0"}, {"O", "B-a"}, "x"),
      sid_sentence({"w4", "w2", "w3"}, {"I-b", "O", "B-b"}, "y"),
  };
  Dataset d{"S", {}, TaskKind::sid, data};
  ModelState m = init_model(ModelConfig{16, 32, true}, small_vocab(6), 11);
  add_head(m, {"S.slots", HeadKind::tagging, HeadRole::slots}, "S", build_label_vocab(d, HeadRole::slots));
  add_head(m, {"S.intent", HeadKind::classification, HeadRole::intent}, "S", build_label_vocab(d, HeadRole::intent));
  Batch batch{"S", TaskKind::sid, data, {}};
  AdamConfig adam;
  adam.lr = 0.01;
  double loss = 0;
  for (int step = 0; step < 3000; ++step) {
    auto r = task_loss(m, batch);
    loss = r.loss;
    if (loss < 1e-3) break;
    optimizer_step(m, r.gradients, adam);
  }
  EXPECT_LT(loss, 1e-3);
  EXPECT_TRUE(all_finite(m));
}

TEST(MaskTokens, ExtremesAndDeterminism) {
  Vocab v = small_vocab(10);
  Sentence s = make_sentence({"w0", "w1", "w2", "w3", "w4", "w5"});
  auto all = mask_tokens(s, v, 1.0, 3);
  EXPECT_EQ(all.positions, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(all.targets, (std::vector<std::size_t>{3, 4, 5, 6, 7, 8}));
  EXPECT_TRUE(mask_tokens(s, v, 0.0, 3).positions.empty());
  auto again = mask_tokens(s, v, 0.5, 9);
  auto twice = mask_tokens(s, v, 0.5, 9);
  EXPECT_EQ(again.input_ids, twice.input_ids);
  EXPECT_EQ(again.positions, twice.positions);
}

TEST(MaskTokens, SelectionAndReplacementRates) {
  Vocab v = small_vocab(20);
  std::vector<std::string> words;
  for (int i = 0; i < 100; ++i) words.push_back(fixtures::word(static_cast<std::size_t>(i % 20)));
  Sentence s = make_sentence(words);
  std::size_t selected = 0, total = 0, masked = 0, kept = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto ms = mask_tokens(s, v, 0.15, seed);
    total += s.size();
    selected += ms.positions.size();
    for (std::size_t k = 0; k < ms.positions.size(); ++k) {
      const std::size_t id = ms.input_ids[ms.positions[k]];
      if (id == Vocab::kMask) ++masked;
      if (id == ms.targets[k]) ++kept;
      EXPECT_GE(id, Vocab::kMask);
    }
  }
  ASSERT_EQ(total, 10000u);
  EXPECT_NEAR(static_cast<double>(selected) / static_cast<double>(total), 0.15, 0.01);
  EXPECT_NEAR(static_cast<double>(masked) / static_cast<double>(selected), 0.8, 0.05);
  // Random replacement can draw the original token, so "kept" is slightly above 10%.
  EXPECT_NEAR(static_cast<double>(kept) / static_cast<double>(selected), 0.1 + 0.1 / 20.0, 0.04);
}

TEST(Predict, ForcedLogitsAndTies) {
  ModelState m = init_model(ModelConfig{4, 4, true}, small_vocab(3), 2);
  add_head(m, {"N.tags", HeadKind::tagging, HeadRole::ner}, "N", labels({"O", "B-x", "I-x"}));
  zero_head(m, "N.tags");
  Sentence s = make_sentence({"w0", "w1"});
  auto tie = predict(m, s, "N");
  EXPECT_EQ(*tie.tags, (std::vector<std::string>{"O", "O"}));
  m.params.at(head_param("N.tags", "bias")).data = {0.0, 0.0, 5.0};
  EXPECT_EQ(*predict(m, s, "N").tags, (std::vector<std::string>{"I-x", "I-x"}));
  m.params.at(head_param("N.tags", "bias")).data = {0.0, 3.0, 3.0};
  EXPECT_EQ(*predict(m, s, "N").tags, (std::vector<std::string>{"B-x", "B-x"}));
  try {
    predict(m, s, "missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownTask);
  }
}

TEST(Predict, DependencySelfAttachmentExcluded) {
  Matrix scores(3, 4);
  // Token i's own column (i + 1) holds the largest score.
  for (std::size_t i = 0; i < 3; ++i) {
    scores(i, i + 1) = 10.0;
    scores(i, (i + 2) % 4) = 1.0;
  }
  auto heads = decode_heads(scores);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NE(heads[i], i + 1);
  EXPECT_EQ(heads, (std::vector<std::size_t>{2, 3, 0}));
  EXPECT_EQ(decode_heads(Matrix(2, 3)), (std::vector<std::size_t>{0, 0}));
}

TEST(Optimizer, ZeroGradientsOnlyAdvanceStep) {
  auto p = fixtures::random_problem(HeadKind::classification, 4);
  ModelState before = p.model;
  optimizer_step(p.model, zero_gradients(p.model), AdamConfig{});
  EXPECT_EQ(p.model.params, before.params);
  EXPECT_EQ(p.model.step_count, before.step_count + 1);
}

TEST(Optimizer, ScalarQuadratic) {
  ModelState m;
  m.params["w"] = Matrix(1, 1);
  m.params["w"].data[0] = 1.0;
  AdamConfig hp;
  hp.lr = 0.1;
  Gradients g{{"w", Matrix(1, 1)}};
  g["w"].data[0] = 2.0;  // d(w^2)/dw at w = 1
  optimizer_step(m, g, hp);
  // The first bias-corrected step has magnitude lr.
  EXPECT_NEAR(m.params["w"].data[0], 0.9, 1e-8);
  for (int i = 0; i < 200; ++i) {
    g["w"].data[0] = 2.0 * m.params["w"].data[0];
    optimizer_step(m, g, hp);
  }
  EXPECT_LT(std::abs(m.params["w"].data[0]), 0.1);

  ModelState a, b;
  a.params["w"] = b.params["w"] = Matrix(1, 1);
  a.params["w"].data[0] = b.params["w"].data[0] = 0.3;
  g["w"].data[0] = 0.7;
  for (int i = 0; i < 5; ++i) {
    optimizer_step(a, g, hp);
    optimizer_step(b, g, hp);
  }
  EXPECT_EQ(a.params, b.params);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto p = fixtures::random_problem(HeadKind::dependency, 12);
  p.model.step_count = 17;
  p.model.rng.next();
  const std::string bytes = serialize_model(p.model);
  ModelState loaded = deserialize_model(bytes);
  EXPECT_EQ(serialize_model(loaded), bytes);
  EXPECT_EQ(loaded.params, p.model.params);
  EXPECT_EQ(loaded.tokens, p.model.tokens);
  EXPECT_EQ(loaded.heads, p.model.heads);
  EXPECT_EQ(loaded.config, p.model.config);
  EXPECT_TRUE(loaded.rng == p.model.rng);
  EXPECT_EQ(loaded.step_count, 17u);

  const auto path = std::filesystem::temp_directory_path() / "sidlab_ckpt_test.bin";
  save_model(p.model, path.string());
  EXPECT_EQ(serialize_model(load_model(path.string())), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncationAndVersion) {
  auto p = fixtures::random_problem(HeadKind::mlm, 2);
  const std::string bytes = serialize_model(p.model);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    try {
      deserialize_model(bytes.substr(0, cut));
      FAIL() << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::CorruptCheckpoint) << cut;
    }
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(deserialize_model(flipped), Error);

  std::string future = bytes;
  future[8] = 2;  // version field follows the 8-byte magic
  try {
    deserialize_model(future);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::VersionMismatch);
  }
}
