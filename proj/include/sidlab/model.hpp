#pragma once

// A small multi-task network with exact hand-written gradients.
//
// Encoder, per sentence of n tokens (d = dim, f = ff_dim):
//   x0_i = E[token_i] + P_i                      sinusoidal P, optional
//   q/k/v_i = W{q,k,v} x0_i + b{q,k,v}
//   a_i = softmax_j(q_i . k_j / sqrt(d))
//   h1_i = x0_i + Wo (sum_j a_ij v_j) + bo
//   h2_i = h1_i + W2 tanh(W1 h1_i + b1) + b2
// The token vectors are h2; the pooled sentence vector is their mean.
//
// Heads (all parameters are named "head.<head>.<param>"):
//   tagging         weight (L x d), bias: softmax per token
//   classification  weight (L x d), bias: softmax over the pooled vector
//   mlm             weight (|V| x d), bias: softmax at masked positions
//   dependency      arc (d x d), arc_bias, root: score(i -> j) = (U^T h_i + b) . g_j
//                   with g_0 = root and g_j = h_j; label_weight (L x 2d),
//                   label_bias over [h_i; g_head].

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sidlab/corpus.hpp"
#include "sidlab/error.hpp"
#include "sidlab/metrics.hpp"
#include "sidlab/rng.hpp"
#include "sidlab/tensor.hpp"

namespace sidlab {

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnknown = 1;
  static constexpr std::size_t kMask = 2;
  static constexpr std::size_t kReserved = 3;

  static Vocab with_reserved() {
    Vocab v;
    v.add("<pad>");
    v.add("<unk>");
    v.add("<mask>");
    return v;
  }

  std::size_t add(const std::string& item) {
    auto [it, inserted] = index_.try_emplace(item, items_.size());
    if (inserted) items_.push_back(item);
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& item) const {
    auto it = index_.find(item);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Token lookup with fallback to <unk>; only meaningful for token vocabularies.
  std::size_t lookup(const std::string& item) const { return find(item).value_or(kUnknown); }

  const std::string& at(std::size_t i) const { return items_.at(i); }
  std::size_t size() const { return items_.size(); }
  const std::vector<std::string>& items() const { return items_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.items_ == b.items_; }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class HeadKind { tagging, classification, mlm, dependency };

inline std::string_view to_string(HeadKind k) {
  switch (k) {
    case HeadKind::tagging: return "tagging";
    case HeadKind::classification: return "classification";
    case HeadKind::mlm: return "mlm";
    case HeadKind::dependency: return "dependency";
  }
  return "?";
}

inline std::optional<HeadKind> parse_head_kind(std::string_view s) {
  if (s == "tagging") return HeadKind::tagging;
  if (s == "classification") return HeadKind::classification;
  if (s == "mlm") return HeadKind::mlm;
  if (s == "dependency") return HeadKind::dependency;
  return std::nullopt;
}

// Which annotation of a Sentence a head is trained on.
enum class HeadRole { slots, intent, pos, deps, ner, lm };

inline std::string_view to_string(HeadRole r) {
  switch (r) {
    case HeadRole::slots: return "slots";
    case HeadRole::intent: return "intent";
    case HeadRole::pos: return "pos";
    case HeadRole::deps: return "deps";
    case HeadRole::ner: return "tags";
    case HeadRole::lm: return "lm";
  }
  return "?";
}

inline std::optional<HeadRole> parse_head_role(std::string_view s) {
  for (HeadRole r : {HeadRole::slots, HeadRole::intent, HeadRole::pos, HeadRole::deps, HeadRole::ner, HeadRole::lm}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

struct HeadSpec {
  std::string name;
  HeadKind kind;
  HeadRole role;
};

// SID is itself two heads (slots + intent); UD is POS tagging + dependencies.
inline std::vector<HeadSpec> heads_for_task(const std::string& task, TaskKind kind) {
  switch (kind) {
    case TaskKind::sid:
      return {{task + ".slots", HeadKind::tagging, HeadRole::slots},
              {task + ".intent", HeadKind::classification, HeadRole::intent}};
    case TaskKind::ud:
      return {{task + ".pos", HeadKind::tagging, HeadRole::pos}, {task + ".deps", HeadKind::dependency, HeadRole::deps}};
    case TaskKind::ner: return {{task + ".tags", HeadKind::tagging, HeadRole::ner}};
    case TaskKind::mlm: return {{task + ".lm", HeadKind::mlm, HeadRole::lm}};
  }
  return {};
}

struct HeadInfo {
  HeadKind kind = HeadKind::tagging;
  HeadRole role = HeadRole::slots;
  std::string task;
  Vocab labels;  // empty for mlm heads, which predict over the token vocabulary

  friend bool operator==(const HeadInfo&, const HeadInfo&) = default;
};

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t ff_dim = 128;
  bool position_encoding = true;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::uint64_t t = 0;
  std::map<std::string, Matrix> first;
  std::map<std::string, Matrix> second;
};

using Gradients = std::map<std::string, Matrix>;

struct ModelState {
  ModelConfig config;
  Vocab tokens;
  std::map<std::string, Matrix> params;
  std::map<std::string, HeadInfo> heads;
  Rng rng;
  std::uint64_t step_count = 0;
  OptimizerState optimizer;

  const Matrix& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw Error(Errc::UnknownTask, "no parameter '" + name + "'");
    return it->second;
  }

  bool has_head(const std::string& name) const { return heads.count(name) != 0; }
};

inline std::string head_param(const std::string& head, std::string_view what) {
  return "head." + head + "." + std::string(what);
}

inline bool is_head_param(const std::string& param, const std::string& head) {
  const std::string prefix = "head." + head + ".";
  return param.compare(0, prefix.size(), prefix) == 0;
}

inline bool is_encoder_param(const std::string& param) {
  return param == "embedding" || param.rfind("encoder.", 0) == 0;
}

// Vocabularies -----------------------------------------------------------------

inline Vocab build_token_vocab(std::span<const Dataset* const> datasets) {
  Vocab v = Vocab::with_reserved();
  for (const Dataset* d : datasets) {
    for (const auto& s : d->sentences) {
      for (const auto& t : s.tokens) v.add(t.surface);
    }
  }
  return v;
}

inline std::vector<std::string> head_targets(const Sentence& s, HeadRole role) {
  switch (role) {
    case HeadRole::slots: return s.slot_tags.value_or(std::vector<std::string>{});
    case HeadRole::intent: return s.intent ? std::vector<std::string>{*s.intent} : std::vector<std::string>{};
    case HeadRole::pos: return s.pos_tags.value_or(std::vector<std::string>{});
    case HeadRole::deps: return s.deprels.value_or(std::vector<std::string>{});
    case HeadRole::ner: return s.ner_tags.value_or(std::vector<std::string>{});
    case HeadRole::lm: return {};
  }
  return {};
}

// Sorted label inventory of one head role over a dataset.
inline Vocab build_label_vocab(const Dataset& d, HeadRole role) {
  std::vector<std::string> labels;
  for (const auto& s : d.sentences) {
    for (auto& l : head_targets(s, role)) labels.push_back(std::move(l));
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  Vocab v;
  for (const auto& l : labels) v.add(l);
  return v;
}

// Initialization ---------------------------------------------------------------

namespace detail {

inline Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  Matrix m(rows, cols);
  for (double& x : m.data) x = rng.uniform(-bound, bound);
  return m;
}

// Weight and bias of an affine map, both uniform in +-1/sqrt(fan_in).
inline void init_affine(ModelState& m, const std::string& weight, const std::string& bias, std::size_t out,
                        std::size_t in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  m.params[weight] = uniform_matrix(m.rng, out, in, bound);
  m.params[bias] = uniform_matrix(m.rng, out, 1, bound);
}

}  // namespace detail

inline ModelState init_model(const ModelConfig& config, Vocab tokens, std::uint64_t seed) {
  if (config.dim == 0 || config.ff_dim == 0) {
    throw Error(Errc::InvalidModelConfig, "hidden sizes must be positive");
  }
  if (tokens.size() < Vocab::kReserved || tokens.at(Vocab::kMask) != "<mask>") {
    throw Error(Errc::InvalidModelConfig, "token vocabulary lacks reserved entries");
  }
  ModelState m;
  m.config = config;
  m.tokens = std::move(tokens);
  m.rng = Rng(seed);
  const std::size_t d = config.dim;
  // An embedding lookup has a single active input, so its fan-in is 1.
  m.params["embedding"] = detail::uniform_matrix(m.rng, m.tokens.size(), d, 1.0);
  detail::init_affine(m, "encoder.wq", "encoder.bq", d, d);
  detail::init_affine(m, "encoder.wk", "encoder.bk", d, d);
  detail::init_affine(m, "encoder.wv", "encoder.bv", d, d);
  detail::init_affine(m, "encoder.wo", "encoder.bo", d, d);
  detail::init_affine(m, "encoder.w1", "encoder.b1", config.ff_dim, d);
  detail::init_affine(m, "encoder.w2", "encoder.b2", d, config.ff_dim);
  return m;
}

// Creates (or recreates) a head with fresh parameters drawn from the model's
// seed stream.
inline void add_head(ModelState& m, const HeadSpec& spec, const std::string& task, Vocab labels) {
  const std::size_t d = m.config.dim;
  for (auto it = m.params.begin(); it != m.params.end();) {
    it = is_head_param(it->first, spec.name) ? m.params.erase(it) : std::next(it);
  }
  switch (spec.kind) {
    case HeadKind::tagging:
    case HeadKind::classification:
      if (labels.size() == 0) throw Error(Errc::NoTrainableData, "head '" + spec.name + "' has no labels");
      detail::init_affine(m, head_param(spec.name, "weight"), head_param(spec.name, "bias"), labels.size(), d);
      break;
    case HeadKind::mlm:
      labels = Vocab{};
      detail::init_affine(m, head_param(spec.name, "weight"), head_param(spec.name, "bias"), m.tokens.size(), d);
      break;
    case HeadKind::dependency: {
      if (labels.size() == 0) throw Error(Errc::NoTrainableData, "head '" + spec.name + "' has no relation labels");
      const double bound = 1.0 / std::sqrt(static_cast<double>(d));
      m.params[head_param(spec.name, "arc")] = detail::uniform_matrix(m.rng, d, d, bound);
      m.params[head_param(spec.name, "arc_bias")] = detail::uniform_matrix(m.rng, d, 1, bound);
      m.params[head_param(spec.name, "root")] = detail::uniform_matrix(m.rng, d, 1, 1.0);
      detail::init_affine(m, head_param(spec.name, "label_weight"), head_param(spec.name, "label_bias"), labels.size(),
                          2 * d);
      break;
    }
  }
  m.heads[spec.name] = HeadInfo{spec.kind, spec.role, task, std::move(labels)};
}

inline void remove_head(ModelState& m, const std::string& name) {
  m.heads.erase(name);
  for (auto it = m.params.begin(); it != m.params.end();) {
    it = is_head_param(it->first, name) ? m.params.erase(it) : std::next(it);
  }
  for (auto* moments : {&m.optimizer.first, &m.optimizer.second}) {
    for (auto it = moments->begin(); it != moments->end();) {
      it = is_head_param(it->first, name) ? moments->erase(it) : std::next(it);
    }
  }
}

inline std::vector<std::string> task_head_names(const ModelState& m, const std::string& task) {
  std::vector<std::string> out;
  for (const auto& [name, info] : m.heads) {
    if (info.task == task) out.push_back(name);
  }
  return out;
}

// FNV-1a over the bit patterns of the embedding and encoder tensors.
inline std::uint64_t encoder_checksum(const ModelState& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : m.params) {
    if (!is_encoder_param(name)) continue;
    for (char c : name) mix(static_cast<unsigned char>(c));
    for (double x : t.data) mix(std::bit_cast<std::uint64_t>(x));
  }
  return h;
}

inline bool all_finite(const ModelState& m) {
  for (const auto& [name, t] : m.params) {
    if (!t.all_finite()) return false;
  }
  return true;
}

inline Gradients zero_gradients(const ModelState& m) {
  Gradients g;
  for (const auto& [name, t] : m.params) g.emplace(name, Matrix(t.rows, t.cols));
  return g;
}

// Encoder ----------------------------------------------------------------------

inline double position_encoding(std::size_t pos, std::size_t i, std::size_t dim) {
  const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
  const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
  return i % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

struct EncoderCache {
  std::vector<std::size_t> ids;
  Matrix x0, q, k, v, attn, ctx, h1, act, h2;

  std::size_t length() const { return ids.size(); }
};

inline std::vector<std::size_t> token_ids(const ModelState& m, const Sentence& s) {
  std::vector<std::size_t> ids;
  ids.reserve(s.size());
  for (const auto& t : s.tokens) ids.push_back(m.tokens.lookup(t.surface));
  return ids;
}

inline EncoderCache encoder_forward(const ModelState& m, std::span<const std::size_t> ids) {
  if (ids.empty()) throw Error(Errc::EmptySentence, "cannot encode an empty sentence");
  const std::size_t n = ids.size();
  const std::size_t d = m.config.dim;
  const std::size_t f = m.config.ff_dim;
  const Matrix& emb = m.param("embedding");
  const Matrix& wq = m.param("encoder.wq");
  const Matrix& wk = m.param("encoder.wk");
  const Matrix& wv = m.param("encoder.wv");
  const Matrix& wo = m.param("encoder.wo");
  const Matrix& w1 = m.param("encoder.w1");
  const Matrix& w2 = m.param("encoder.w2");

  EncoderCache c;
  c.ids.assign(ids.begin(), ids.end());
  c.x0 = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] >= emb.rows) throw Error(Errc::InvalidModelConfig, "token id out of range");
    auto x = c.x0.row(i);
    auto e = emb.row(ids[i]);
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = e[j] + (m.config.position_encoding ? position_encoding(i, j, d) : 0.0);
    }
  }
  auto affine = [n](const Matrix& w, const Matrix& b, const Matrix& in) {
    Matrix out(n, w.rows);
    for (std::size_t i = 0; i < n; ++i) {
      auto o = out.row(i);
      std::copy(b.data.begin(), b.data.end(), o.begin());
      gemv_add(w, in.row(i), o);
    }
    return out;
  };
  c.q = affine(wq, m.param("encoder.bq"), c.x0);
  c.k = affine(wk, m.param("encoder.bk"), c.x0);
  c.v = affine(wv, m.param("encoder.bv"), c.x0);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.attn = Matrix(n, n);
  c.ctx = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto a = c.attn.row(i);
    for (std::size_t j = 0; j < n; ++j) a[j] = dot(c.q.row(i), c.k.row(j)) * scale;
    softmax_inplace(a);
    auto ctx = c.ctx.row(i);
    for (std::size_t j = 0; j < n; ++j) axpy(a[j], c.v.row(j), ctx);
  }

  c.h1 = affine(wo, m.param("encoder.bo"), c.ctx);
  for (std::size_t i = 0; i < n * d; ++i) c.h1.data[i] += c.x0.data[i];

  c.act = affine(w1, m.param("encoder.b1"), c.h1);
  for (double& x : c.act.data) x = std::tanh(x);
  (void)f;

  c.h2 = affine(w2, m.param("encoder.b2"), c.act);
  for (std::size_t i = 0; i < n * d; ++i) c.h2.data[i] += c.h1.data[i];
  return c;
}

inline void encoder_backward(const ModelState& m, const EncoderCache& c, const Matrix& dh2, Gradients& g) {
  const std::size_t n = c.length();
  const std::size_t d = m.config.dim;
  const std::size_t f = m.config.ff_dim;
  const Matrix& wq = m.param("encoder.wq");
  const Matrix& wk = m.param("encoder.wk");
  const Matrix& wv = m.param("encoder.wv");
  const Matrix& wo = m.param("encoder.wo");
  const Matrix& w1 = m.param("encoder.w1");
  const Matrix& w2 = m.param("encoder.w2");
  Matrix& gwq = g.at("encoder.wq");
  Matrix& gwk = g.at("encoder.wk");
  Matrix& gwv = g.at("encoder.wv");
  Matrix& gwo = g.at("encoder.wo");
  Matrix& gw1 = g.at("encoder.w1");
  Matrix& gw2 = g.at("encoder.w2");
  Matrix& gbq = g.at("encoder.bq");
  Matrix& gbk = g.at("encoder.bk");
  Matrix& gbv = g.at("encoder.bv");
  Matrix& gbo = g.at("encoder.bo");
  Matrix& gb1 = g.at("encoder.b1");
  Matrix& gb2 = g.at("encoder.b2");
  Matrix& gemb = g.at("embedding");

  Matrix dx0(n, d), dctx(n, d);
  std::vector<double> du(f), g1(d);
  for (std::size_t i = 0; i < n; ++i) {
    auto g2 = dh2.row(i);
    // feedforward block with residual
    outer_add(gw2, g2, c.act.row(i));
    axpy(1.0, g2, gb2.data);
    std::fill(du.begin(), du.end(), 0.0);
    gemv_t_add(w2, g2, du);
    auto act = c.act.row(i);
    for (std::size_t r = 0; r < f; ++r) du[r] *= 1.0 - act[r] * act[r];
    outer_add(gw1, du, c.h1.row(i));
    axpy(1.0, du, gb1.data);
    std::copy(g2.begin(), g2.end(), g1.begin());
    gemv_t_add(w1, du, g1);
    // attention output projection with residual
    outer_add(gwo, g1, c.ctx.row(i));
    axpy(1.0, g1, gbo.data);
    gemv_t_add(wo, g1, dctx.row(i));
    axpy(1.0, g1, dx0.row(i));
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix dq(n, d), dk(n, d), dv(n, d);
  std::vector<double> da(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto a = c.attn.row(i);
    auto dci = dctx.row(i);
    double weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      da[j] = dot(dci, c.v.row(j));
      axpy(a[j], dci, dv.row(j));
      weighted += a[j] * da[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double ds = a[j] * (da[j] - weighted) * scale;
      axpy(ds, c.k.row(j), dq.row(i));
      axpy(ds, c.q.row(i), dk.row(j));
    }
  }

  auto back_affine = [&](const Matrix& w, Matrix& gw, Matrix& gb, const Matrix& dout) {
    for (std::size_t i = 0; i < n; ++i) {
      outer_add(gw, dout.row(i), c.x0.row(i));
      axpy(1.0, dout.row(i), gb.data);
      gemv_t_add(w, dout.row(i), dx0.row(i));
    }
  };
  back_affine(wq, gwq, gbq, dq);
  back_affine(wk, gwk, gbk, dk);
  back_affine(wv, gwv, gbv, dv);

  for (std::size_t i = 0; i < n; ++i) axpy(1.0, dx0.row(i), gemb.row(c.ids[i]));
}

struct Encoding {
  Matrix tokens;                // n x d
  std::vector<double> pooled;   // mean of token vectors
};

inline Encoding encode(const ModelState& m, const Sentence& s) {
  auto ids = token_ids(m, s);
  EncoderCache c = encoder_forward(m, ids);
  Encoding e;
  e.pooled.assign(m.config.dim, 0.0);
  for (std::size_t i = 0; i < c.length(); ++i) axpy(1.0 / static_cast<double>(c.length()), c.h2.row(i), e.pooled);
  e.tokens = std::move(c.h2);
  return e;
}

// Heads ------------------------------------------------------------------------

namespace detail {

inline std::vector<double> affine_logits(const ModelState& m, const std::string& head, std::span<const double> x) {
  const Matrix& w = m.param(head_param(head, "weight"));
  const Matrix& b = m.param(head_param(head, "bias"));
  std::vector<double> logits(b.data);
  gemv_add(w, x, logits);
  return logits;
}

// Cross-entropy on one prediction unit; accumulates scaled gradients into the
// head and into dx. Returns the unscaled negative log-likelihood.
inline double affine_ce(const ModelState& m, const std::string& head, std::span<const double> x, std::size_t gold,
                        double scale, std::span<double> dx, Gradients& g) {
  std::vector<double> p = affine_logits(m, head, x);
  const double gold_logit = p[gold];
  const double lse = softmax_inplace(p);
  p[gold] -= 1.0;
  for (double& v : p) v *= scale;
  outer_add(g.at(head_param(head, "weight")), p, x);
  axpy(1.0, p, g.at(head_param(head, "bias")).data);
  gemv_t_add(m.param(head_param(head, "weight")), p, dx);
  return lse - gold_logit;
}

// Arc scores for dependent i over candidates {root, token 1..n}.
inline std::vector<double> arc_scores(const ModelState& m, const std::string& head, const Matrix& h, std::size_t i,
                                      std::vector<double>* w_out = nullptr) {
  const Matrix& arc = m.param(head_param(head, "arc"));
  const Matrix& root = m.param(head_param(head, "root"));
  std::vector<double> w(m.param(head_param(head, "arc_bias")).data);
  gemv_t_add(arc, h.row(i), w);
  std::vector<double> s(h.rows + 1);
  s[0] = dot(w, root.data);
  for (std::size_t j = 0; j < h.rows; ++j) s[j + 1] = dot(w, h.row(j));
  if (w_out) *w_out = std::move(w);
  return s;
}

inline std::vector<double> label_input(const Matrix& h, const Matrix& root, std::size_t dependent, std::size_t head) {
  std::vector<double> z(h.row(dependent).begin(), h.row(dependent).end());
  auto g = head == 0 ? std::span<const double>(root.data) : h.row(head - 1);
  z.insert(z.end(), g.begin(), g.end());
  return z;
}

inline std::size_t label_index(const HeadInfo& info, const std::string& label, const std::string& head) {
  auto idx = info.labels.find(label);
  if (!idx) throw Error(Errc::InvalidConfig, "label '" + label + "' unknown to head '" + head + "'");
  return *idx;
}

// Head NLL plus relation cross-entropy for every token, each scaled.
inline double dependency_loss(const ModelState& m, const std::string& head, const HeadInfo& info,
                              const EncoderCache& c, const Sentence& s, double scale, Matrix& dh, Gradients& g) {
  const Matrix& h = c.h2;
  const std::size_t n = h.rows;
  const std::size_t d = h.cols;
  const Matrix& arc = m.param(head_param(head, "arc"));
  const Matrix& root = m.param(head_param(head, "root"));
  const std::string label_w = head_param(head, "label_weight");
  Matrix& g_arc = g.at(head_param(head, "arc"));
  Matrix& g_arc_bias = g.at(head_param(head, "arc_bias"));
  Matrix& g_root = g.at(head_param(head, "root"));
  double loss = 0.0;
  std::vector<double> w, dw(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gold = (*s.heads)[i];
    std::vector<double> p = arc_scores(m, head, h, i, &w);
    const double gold_score = p[gold];
    const double lse = softmax_inplace(p);
    loss += lse - gold_score;
    p[gold] -= 1.0;
    std::fill(dw.begin(), dw.end(), 0.0);
    for (std::size_t j = 0; j <= n; ++j) {
      const double ds = p[j] * scale;
      if (ds == 0.0) continue;
      if (j == 0) {
        axpy(ds, root.data, dw);
        axpy(ds, w, g_root.data);
      } else {
        axpy(ds, h.row(j - 1), dw);
        axpy(ds, w, dh.row(j - 1));
      }
    }
    // w = arc^T h_i + arc_bias
    outer_add(g_arc, h.row(i), dw);
    axpy(1.0, dw, g_arc_bias.data);
    gemv_add(arc, dw, dh.row(i));

    // relation label over [h_i; g_gold]
    std::vector<double> z = label_input(h, root, i, gold);
    std::vector<double> dz(2 * d, 0.0);
    std::vector<double> logits(m.param(head_param(head, "label_bias")).data);
    gemv_add(m.param(label_w), z, logits);
    const std::size_t y = label_index(info, (*s.deprels)[i], head);
    const double gold_logit = logits[y];
    const double lse2 = softmax_inplace(logits);
    loss += lse2 - gold_logit;
    logits[y] -= 1.0;
    for (double& v : logits) v *= scale;
    outer_add(g.at(label_w), logits, z);
    axpy(1.0, logits, g.at(head_param(head, "label_bias")).data);
    gemv_t_add(m.param(label_w), logits, dz);
    axpy(1.0, std::span<const double>(dz.data(), d), dh.row(i));
    auto dg = std::span<const double>(dz.data() + d, d);
    if (gold == 0) {
      axpy(1.0, dg, g_root.data);
    } else {
      axpy(1.0, dg, dh.row(gold - 1));
    }
  }
  return loss;
}

}  // namespace detail

// Masking ----------------------------------------------------------------------

struct MaskedSentence {
  std::vector<std::size_t> input_ids;
  std::vector<std::size_t> positions;  // ascending
  std::vector<std::size_t> targets;    // original ids at `positions`
};

// Each position is selected with mask_prob; a selected position becomes
// <mask> 80% of the time, a random non-reserved token 10%, and stays 10%.
inline MaskedSentence mask_tokens(const Sentence& s, const Vocab& tokens, double mask_prob, std::uint64_t seed) {
  Rng rng(seed);
  MaskedSentence out;
  out.input_ids.reserve(s.size());
  for (const auto& t : s.tokens) out.input_ids.push_back(tokens.lookup(t.surface));
  const std::size_t regular = tokens.size() > Vocab::kReserved ? tokens.size() - Vocab::kReserved : 0;
  for (std::size_t i = 0; i < out.input_ids.size(); ++i) {
    const double u = rng.uniform();
    const double r = rng.uniform();
    const std::uint64_t replacement = rng.next();
    if (!(u < mask_prob)) continue;
    out.positions.push_back(i);
    out.targets.push_back(out.input_ids[i]);
    if (r < 0.8) {
      out.input_ids[i] = Vocab::kMask;
    } else if (r < 0.9 && regular > 0) {
      out.input_ids[i] = Vocab::kReserved + static_cast<std::size_t>(replacement % regular);
    }
  }
  return out;
}

// Loss -------------------------------------------------------------------------

struct Batch {
  std::string task;
  TaskKind kind = TaskKind::sid;
  std::vector<Sentence> sentences;
  std::vector<MaskedSentence> masked;  // mlm only, parallel to sentences

  bool empty() const { return sentences.empty(); }
};

// Accumulates d(loss)/d(params) into `g` and returns the loss. Each head
// contributes the mean over its prediction units (tokens, sentences or
// masked positions) in the batch; a task's heads are summed.
inline double task_loss(const ModelState& m, const Batch& batch, Gradients& g) {
  if (batch.empty()) throw Error(Errc::EmptyBatch, "batch for task '" + batch.task + "' is empty");
  auto specs = heads_for_task(batch.task, batch.kind);
  for (const auto& spec : specs) {
    if (!m.has_head(spec.name)) throw Error(Errc::UnknownTask, "model has no head '" + spec.name + "'");
  }
  std::size_t n_tokens = 0, n_masked = 0;
  for (const auto& s : batch.sentences) n_tokens += s.size();
  if (batch.kind == TaskKind::mlm) {
    if (batch.masked.size() != batch.sentences.size()) throw Error(Errc::EmptyBatch, "mlm batch lacks masking");
    for (const auto& ms : batch.masked) n_masked += ms.positions.size();
    if (n_masked == 0) return 0.0;
  }
  const double per_token = n_tokens ? 1.0 / static_cast<double>(n_tokens) : 0.0;
  const double per_sentence = 1.0 / static_cast<double>(batch.sentences.size());
  const double per_masked = n_masked ? 1.0 / static_cast<double>(n_masked) : 0.0;

  double loss = 0.0;
  for (std::size_t b = 0; b < batch.sentences.size(); ++b) {
    const Sentence& s = batch.sentences[b];
    if (s.size() == 0) throw Error(Errc::EmptySentence, "empty sentence in batch");
    std::vector<std::size_t> ids = batch.kind == TaskKind::mlm ? batch.masked[b].input_ids : token_ids(m, s);
    if (batch.kind == TaskKind::mlm && batch.masked[b].positions.empty()) continue;
    EncoderCache c = encoder_forward(m, ids);
    const std::size_t n = c.length();
    Matrix dh(n, m.config.dim);
    for (const auto& spec : specs) {
      const HeadInfo& info = m.heads.at(spec.name);
      switch (spec.kind) {
        case HeadKind::tagging: {
          auto gold = head_targets(s, spec.role);
          if (gold.size() != n) throw Error(Errc::LengthMismatch, "tag count differs from token count");
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t y = detail::label_index(info, gold[i], spec.name);
            loss += per_token * detail::affine_ce(m, spec.name, c.h2.row(i), y, per_token, dh.row(i), g);
          }
          break;
        }
        case HeadKind::classification: {
          auto gold = head_targets(s, spec.role);
          if (gold.size() != 1) throw Error(Errc::MissingIntent, "sentence has no class label");
          std::vector<double> pooled(m.config.dim, 0.0);
          for (std::size_t i = 0; i < n; ++i) axpy(1.0 / static_cast<double>(n), c.h2.row(i), pooled);
          std::vector<double> dpooled(m.config.dim, 0.0);
          const std::size_t y = detail::label_index(info, gold[0], spec.name);
          loss += per_sentence * detail::affine_ce(m, spec.name, pooled, y, per_sentence, dpooled, g);
          for (std::size_t i = 0; i < n; ++i) axpy(1.0 / static_cast<double>(n), dpooled, dh.row(i));
          break;
        }
        case HeadKind::mlm: {
          const auto& ms = batch.masked[b];
          for (std::size_t k = 0; k < ms.positions.size(); ++k) {
            const std::size_t i = ms.positions[k];
            loss += per_masked * detail::affine_ce(m, spec.name, c.h2.row(i), ms.targets[k], per_masked, dh.row(i), g);
          }
          break;
        }
        case HeadKind::dependency: {
          if (!s.heads || !s.deprels) throw Error(Errc::MissingBinding, "sentence lacks dependency annotation");
          loss += per_token * detail::dependency_loss(m, spec.name, info, c, s, per_token, dh, g);
          break;
        }
      }
    }
    encoder_backward(m, c, dh, g);
  }
  return loss;
}

struct LossAndGradients {
  double loss = 0.0;
  Gradients gradients;
};

inline LossAndGradients task_loss(const ModelState& m, const Batch& batch) {
  LossAndGradients out{0.0, zero_gradients(m)};
  out.loss = task_loss(m, batch, out.gradients);
  return out;
}

// Optimizer --------------------------------------------------------------------

inline void optimizer_step(ModelState& m, const Gradients& g, const AdamConfig& hp) {
  auto& opt = m.optimizer;
  ++opt.t;
  ++m.step_count;
  const double t = static_cast<double>(opt.t);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);
  for (const auto& [name, grad] : g) {
    auto pit = m.params.find(name);
    if (pit == m.params.end()) continue;
    Matrix& p = pit->second;
    auto [fit, f_new] = opt.first.try_emplace(name, p.rows, p.cols);
    auto [sit, s_new] = opt.second.try_emplace(name, p.rows, p.cols);
    auto& mo = fit->second.data;
    auto& vo = sit->second.data;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double gi = grad.data[i];
      mo[i] = hp.beta1 * mo[i] + (1.0 - hp.beta1) * gi;
      vo[i] = hp.beta2 * vo[i] + (1.0 - hp.beta2) * gi * gi;
      if (mo[i] == 0.0) continue;
      p.data[i] -= hp.lr * (mo[i] / c1) / (std::sqrt(vo[i] / c2) + hp.eps);
    }
  }
}

inline void reset_optimizer(ModelState& m) { m.optimizer = OptimizerState{}; }

// Prediction -------------------------------------------------------------------

// Greedy head selection over {root, tokens} excluding self-attachment; no
// cycle repair. scores: n x (n + 1), column 0 = root.
inline std::vector<std::size_t> decode_heads(const Matrix& scores) {
  std::vector<std::size_t> heads(scores.rows);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.cols; ++j) {
      if (j == i + 1) continue;
      if (scores(i, j) > scores(i, best)) best = j;
    }
    heads[i] = best;
  }
  return heads;
}

inline std::vector<std::string> predict_tags(const ModelState& m, const EncoderCache& c, const std::string& head) {
  const HeadInfo& info = m.heads.at(head);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < c.length(); ++i) {
    out.push_back(info.labels.at(argmax_lowest(detail::affine_logits(m, head, c.h2.row(i)))));
  }
  return out;
}

inline std::string predict_class(const ModelState& m, const EncoderCache& c, const std::string& head) {
  std::vector<double> pooled(m.config.dim, 0.0);
  for (std::size_t i = 0; i < c.length(); ++i) axpy(1.0 / static_cast<double>(c.length()), c.h2.row(i), pooled);
  return m.heads.at(head).labels.at(argmax_lowest(detail::affine_logits(m, head, pooled)));
}

inline Matrix arc_score_matrix(const ModelState& m, const EncoderCache& c, const std::string& head) {
  const std::size_t n = c.length();
  Matrix scores(n, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = detail::arc_scores(m, head, c.h2, i);
    std::copy(s.begin(), s.end(), scores.row(i).begin());
  }
  return scores;
}

inline DependencyPrediction predict_dependencies(const ModelState& m, const EncoderCache& c, const std::string& head) {
  const HeadInfo& info = m.heads.at(head);
  DependencyPrediction out;
  out.heads = decode_heads(arc_score_matrix(m, c, head));
  const Matrix& root = m.param(head_param(head, "root"));
  for (std::size_t i = 0; i < c.length(); ++i) {
    std::vector<double> z = detail::label_input(c.h2, root, i, out.heads[i]);
    std::vector<double> logits(m.param(head_param(head, "label_bias")).data);
    gemv_add(m.param(head_param(head, "label_weight")), z, logits);
    out.deprels.push_back(info.labels.at(argmax_lowest(logits)));
  }
  return out;
}

// Argmax token ids at the masked positions.
inline std::vector<std::size_t> predict_masked(const ModelState& m, const MaskedSentence& ms, const std::string& head) {
  EncoderCache c = encoder_forward(m, ms.input_ids);
  std::vector<std::size_t> out;
  for (std::size_t i : ms.positions) out.push_back(argmax_lowest(detail::affine_logits(m, head, c.h2.row(i))));
  return out;
}

// Total negative log-likelihood of the targets and the number of targets.
inline std::pair<double, std::size_t> masked_nll(const ModelState& m, const MaskedSentence& ms, const std::string& head) {
  if (ms.positions.empty()) return {0.0, 0};
  EncoderCache c = encoder_forward(m, ms.input_ids);
  double nll = 0.0;
  for (std::size_t k = 0; k < ms.positions.size(); ++k) {
    std::vector<double> p = detail::affine_logits(m, head, c.h2.row(ms.positions[k]));
    const double gold = p[ms.targets[k]];
    nll += softmax_inplace(p) - gold;
  }
  return {nll, ms.positions.size()};
}

struct TaskPrediction {
  std::optional<SidPrediction> sid;
  std::optional<std::vector<std::string>> tags;  // POS for UD, entity tags for NER
  std::optional<DependencyPrediction> dependencies;
  std::optional<std::vector<std::string>> masked_tokens;  // at <mask> tokens, mlm only
};

inline TaskPrediction predict(const ModelState& m, const Sentence& s, const std::string& task) {
  auto names = task_head_names(m, task);
  if (names.empty()) throw Error(Errc::UnknownTask, "model has no heads for task '" + task + "'");
  EncoderCache c = encoder_forward(m, token_ids(m, s));
  TaskPrediction out;
  for (const auto& name : names) {
    const HeadInfo& info = m.heads.at(name);
    switch (info.role) {
      case HeadRole::slots:
        if (!out.sid) out.sid.emplace();
        out.sid->slot_tags = predict_tags(m, c, name);
        break;
      case HeadRole::intent:
        if (!out.sid) out.sid.emplace();
        out.sid->intent = predict_class(m, c, name);
        break;
      case HeadRole::pos:
      case HeadRole::ner: out.tags = predict_tags(m, c, name); break;
      case HeadRole::deps: out.dependencies = predict_dependencies(m, c, name); break;
      case HeadRole::lm: {
        std::vector<std::string> words;
        for (std::size_t i = 0; i < c.length(); ++i) {
          if (c.ids[i] != Vocab::kMask) continue;
          words.push_back(m.tokens.at(argmax_lowest(detail::affine_logits(m, name, c.h2.row(i)))));
        }
        out.masked_tokens = std::move(words);
        break;
      }
    }
  }
  return out;
}

inline SidPrediction predict_sid(const ModelState& m, const Sentence& s, const std::string& task) {
  auto p = predict(m, s, task);
  if (!p.sid) throw Error(Errc::UnknownTask, "task '" + task + "' is not a SID task");
  return *p.sid;
}

// First task owning a slots + intent head pair, if any.
inline std::optional<std::string> find_sid_task(const ModelState& m) {
  for (const auto& [name, info] : m.heads) {
    if (info.role == HeadRole::slots && m.has_head(info.task + ".intent")) return info.task;
  }
  return std::nullopt;
}

}  // namespace sidlab
