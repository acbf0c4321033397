#pragma once

// Corpus records and readers/writers for the four input formats:
//
//   sid    blank-line separated blocks, `# key: value` metadata (the intent
//          lives under `intent`), token lines `index<TAB>token<TAB>slot`.
//          The released four-column layout `index<TAB>token<TAB>intent<TAB>slot`
//          is accepted too.
//   conllu 10-column CoNLL-U; multiword (`a-b`) and empty-node (`a.b`) lines
//          are skipped.
//   ner    blank-line separated blocks of `token<TAB>tag`.
//   text   one sentence per line, whitespace-run tokenization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sidlab/error.hpp"
#include "sidlab/rng.hpp"
#include "sidlab/text.hpp"

namespace sidlab {

struct Token {
  std::string surface;
  std::string lowercased;

  friend bool operator==(const Token&, const Token&) = default;
};

inline Token make_token(std::string surface) {
  if (surface.empty()) throw Error(Errc::BadColumnCount, "empty token");
  if (surface.find_first_of("\t\n") != std::string::npos) {
    throw Error(Errc::BadColumnCount, "token contains tab or newline");
  }
  Token t;
  t.lowercased = text::fold_case(surface);
  t.surface = std::move(surface);
  return t;
}

struct Sentence {
  std::optional<std::string> id;
  std::vector<Token> tokens;
  std::vector<std::pair<std::string, std::string>> metadata;  // opaque, in file order
  std::optional<std::vector<std::string>> slot_tags;
  std::optional<std::string> intent;
  std::optional<std::vector<std::string>> pos_tags;
  std::optional<std::vector<std::size_t>> heads;  // 0 = root, i+1 = token i
  std::optional<std::vector<std::string>> deprels;
  std::optional<std::vector<std::string>> ner_tags;

  std::size_t size() const { return tokens.size(); }

  std::vector<std::string> surfaces() const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.surface);
    return out;
  }

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

inline Sentence make_sentence(const std::vector<std::string>& words) {
  Sentence s;
  for (const auto& w : words) s.tokens.push_back(make_token(w));
  return s;
}

// Inclusive token range [start, end] with a prefix-free label.
struct SlotSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;

  friend bool operator==(const SlotSpan&, const SlotSpan&) = default;
  friend auto operator<=>(const SlotSpan&, const SlotSpan&) = default;
};

enum class TaskKind { sid, ud, ner, mlm };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::sid: return "sid";
    case TaskKind::ud: return "ud";
    case TaskKind::ner: return "ner";
    case TaskKind::mlm: return "mlm";
  }
  return "?";
}

inline std::optional<TaskKind> parse_task_kind(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "sid") return TaskKind::sid;
  if (lower == "ud") return TaskKind::ud;
  if (lower == "ner") return TaskKind::ner;
  if (lower == "mlm") return TaskKind::mlm;
  return std::nullopt;
}

struct Dataset {
  std::string name;
  std::string language_tag;
  TaskKind task_kind = TaskKind::sid;
  std::vector<Sentence> sentences;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Checks the per-sentence invariants for the annotations a task kind needs.
inline void validate_sentence(const Sentence& s, TaskKind kind) {
  const std::size_t n = s.size();
  auto check_len = [n](const auto& field, std::string_view what) {
    if (field && field->size() != n) {
      throw Error(Errc::LengthMismatch, std::string(what) + " has " + std::to_string(field->size()) +
                                            " entries for " + std::to_string(n) + " tokens");
    }
  };
  check_len(s.slot_tags, "slot_tags");
  check_len(s.pos_tags, "pos_tags");
  check_len(s.heads, "heads");
  check_len(s.deprels, "deprels");
  check_len(s.ner_tags, "ner_tags");
  if (s.slot_tags.has_value() != s.intent.has_value()) {
    throw Error(Errc::MissingIntent, "intent and slot tags must be present together");
  }
  if (s.heads) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t h = (*s.heads)[i];
      if (h > n || h == i + 1) {
        throw Error(Errc::HeadOutOfRange, "token " + std::to_string(i + 1) + " has head " + std::to_string(h));
      }
    }
  }
  switch (kind) {
    case TaskKind::sid:
      if (!s.slot_tags) throw Error(Errc::MissingSlotTags, "SID sentence without slot tags");
      break;
    case TaskKind::ud:
      if (!s.pos_tags || !s.heads || !s.deprels) throw Error(Errc::BadColumnCount, "UD sentence without POS/heads/deprels");
      break;
    case TaskKind::ner:
      if (!s.ner_tags) throw Error(Errc::BadColumnCount, "NER sentence without tags");
      break;
    case TaskKind::mlm:
      break;
  }
}

namespace detail {

struct Line {
  std::size_t number;
  std::string_view text;
};

// Reads the whole stream, rejects invalid UTF-8 with its line number and
// groups lines into blank-line separated blocks.
class LineReader {
 public:
  explicit LineReader(std::istream& in)
      : buffer_(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()) {
    std::string_view all(buffer_);
    std::size_t number = 0;
    std::size_t start = 0;
    while (start < all.size()) {
      std::size_t end = all.find('\n', start);
      if (end == std::string_view::npos) end = all.size();
      std::string_view line = all.substr(start, end - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      ++number;
      if (!text::is_valid_utf8(line)) {
        throw ParseError(Errc::InvalidEncoding, 0, number, "invalid UTF-8");
      }
      lines_.push_back({number, line});
      start = end + 1;
    }
  }

  const std::vector<Line>& lines() const { return lines_; }

  std::vector<std::vector<Line>> blocks() const {
    std::vector<std::vector<Line>> out;
    std::vector<Line> current;
    for (const auto& l : lines_) {
      if (text::trim(l.text).empty()) {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
      } else {
        current.push_back(l);
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
  }

 private:
  std::string buffer_;
  std::vector<Line> lines_;
};

inline std::optional<std::size_t> parse_index(std::string_view s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  std::size_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

inline std::pair<std::string, std::string> parse_comment(std::string_view line) {
  std::string_view body = text::trim(line.substr(1));
  std::size_t colon = body.find(':');
  std::size_t equals = body.find('=');
  std::size_t sep = std::min(colon, equals);
  if (sep == std::string_view::npos) return {"", std::string(body)};
  return {std::string(text::trim(body.substr(0, sep))), std::string(text::trim(body.substr(sep + 1)))};
}

inline Token token_at(std::string_view field, std::size_t block, std::size_t line) {
  if (field.empty()) throw ParseError(Errc::BadColumnCount, block, line, "empty token field");
  return make_token(std::string(field));
}

}  // namespace detail

inline Dataset parse_xsid(std::istream& in, std::string name = {}, std::string language_tag = {}) {
  Dataset d{std::move(name), std::move(language_tag), TaskKind::sid, {}};
  detail::LineReader reader(in);
  std::size_t block_no = 0;
  for (const auto& block : reader.blocks()) {
    ++block_no;
    Sentence s;
    std::vector<std::string> tags;
    std::optional<std::string> column_intent;
    for (const auto& line : block) {
      if (line.text.front() == '#') {
        auto [key, value] = detail::parse_comment(line.text);
        if (key == "intent") {
          s.intent = value;
        } else if (key == "id") {
          s.id = value;
        } else {
          s.metadata.emplace_back(std::move(key), std::move(value));
        }
        continue;
      }
      auto fields = text::split(line.text, '\t');
      if (fields.size() != 3 && fields.size() != 4) {
        throw ParseError(Errc::BadColumnCount, block_no, line.number,
                         "expected 3 tab-separated fields, found " + std::to_string(fields.size()));
      }
      auto index = detail::parse_index(fields[0]);
      if (!index || *index != s.tokens.size() + 1) {
        throw ParseError(Errc::RaggedBlock, block_no, line.number,
                         "token index '" + std::string(fields[0]) + "' where " + std::to_string(s.tokens.size() + 1) +
                             " was expected");
      }
      s.tokens.push_back(detail::token_at(fields[1], block_no, line.number));
      if (fields.size() == 4) {
        if (!column_intent) column_intent = std::string(fields[2]);
        tags.emplace_back(fields[3]);
      } else {
        tags.emplace_back(fields[2]);
      }
    }
    if (s.tokens.empty()) {
      // comment-only block, e.g. a file header
      continue;
    }
    if (!s.intent) {
      if (!column_intent) {
        throw ParseError(Errc::MissingIntent, block_no, block.front().number, "block has no intent metadata");
      }
      s.intent = column_intent;
    }
    s.slot_tags = std::move(tags);
    d.sentences.push_back(std::move(s));
  }
  return d;
}

inline Dataset parse_conllu(std::istream& in, std::string name = {}, std::string language_tag = {}) {
  Dataset d{std::move(name), std::move(language_tag), TaskKind::ud, {}};
  detail::LineReader reader(in);
  std::size_t block_no = 0;
  for (const auto& block : reader.blocks()) {
    ++block_no;
    Sentence s;
    std::vector<std::string> pos, rels;
    std::vector<std::size_t> heads;
    std::vector<std::size_t> head_lines;
    for (const auto& line : block) {
      if (line.text.front() == '#') {
        auto [key, value] = detail::parse_comment(line.text);
        if (key == "sent_id") {
          s.id = value;
        } else {
          s.metadata.emplace_back(std::move(key), std::move(value));
        }
        continue;
      }
      auto fields = text::split(line.text, '\t');
      if (fields.size() != 10) {
        throw ParseError(Errc::BadColumnCount, block_no, line.number,
                         "expected 10 tab-separated fields, found " + std::to_string(fields.size()));
      }
      if (fields[0].find_first_of("-.") != std::string_view::npos) continue;
      auto index = detail::parse_index(fields[0]);
      if (!index || *index != s.tokens.size() + 1) {
        throw ParseError(Errc::RaggedBlock, block_no, line.number, "token index '" + std::string(fields[0]) + "' out of sequence");
      }
      auto head = detail::parse_index(fields[6]);
      if (!head) {
        throw ParseError(Errc::NonNumericHead, block_no, line.number, "HEAD '" + std::string(fields[6]) + "' is not a number");
      }
      s.tokens.push_back(detail::token_at(fields[1], block_no, line.number));
      pos.emplace_back(fields[3]);
      heads.push_back(*head);
      head_lines.push_back(line.number);
      rels.emplace_back(fields[7]);
    }
    if (s.tokens.empty()) continue;
    for (std::size_t i = 0; i < heads.size(); ++i) {
      if (heads[i] > heads.size() || heads[i] == i + 1) {
        throw ParseError(Errc::HeadOutOfRange, block_no, head_lines[i],
                         "HEAD " + std::to_string(heads[i]) + " invalid for token " + std::to_string(i + 1) + " of " +
                             std::to_string(heads.size()));
      }
    }
    s.pos_tags = std::move(pos);
    s.heads = std::move(heads);
    s.deprels = std::move(rels);
    d.sentences.push_back(std::move(s));
  }
  return d;
}

inline Dataset parse_ner_conll(std::istream& in, std::string name = {}, std::string language_tag = {}) {
  Dataset d{std::move(name), std::move(language_tag), TaskKind::ner, {}};
  detail::LineReader reader(in);
  std::size_t block_no = 0;
  for (const auto& block : reader.blocks()) {
    ++block_no;
    Sentence s;
    std::vector<std::string> tags;
    for (const auto& line : block) {
      auto fields = text::split(line.text, '\t');
      if (fields.size() != 2) {
        throw ParseError(Errc::BadColumnCount, block_no, line.number,
                         "expected 2 tab-separated fields, found " + std::to_string(fields.size()));
      }
      s.tokens.push_back(detail::token_at(fields[0], block_no, line.number));
      tags.emplace_back(fields[1]);
    }
    s.ner_tags = std::move(tags);
    d.sentences.push_back(std::move(s));
  }
  return d;
}

inline Dataset parse_plaintext(std::istream& in, std::string name = {}, std::string language_tag = {}) {
  Dataset d{std::move(name), std::move(language_tag), TaskKind::mlm, {}};
  detail::LineReader reader(in);
  for (const auto& line : reader.lines()) {
    auto words = text::split_whitespace(line.text);
    if (words.empty()) continue;
    d.sentences.push_back(make_sentence(words));
  }
  return d;
}

inline void write_xsid(std::ostream& out, const Dataset& d) {
  for (const auto& s : d.sentences) {
    if (s.id) out << "# id: " << *s.id << '\n';
    for (const auto& [k, v] : s.metadata) {
      if (k.empty()) {
        out << "# " << v << '\n';
      } else {
        out << "# " << k << ": " << v << '\n';
      }
    }
    out << "# intent: " << s.intent.value_or("") << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << (i + 1) << '\t' << s.tokens[i].surface << '\t' << (s.slot_tags ? (*s.slot_tags)[i] : "O") << '\n';
    }
    out << '\n';
  }
}

inline void write_conllu(std::ostream& out, const Dataset& d) {
  for (const auto& s : d.sentences) {
    if (s.id) out << "# sent_id = " << *s.id << '\n';
    for (const auto& [k, v] : s.metadata) {
      if (k.empty()) {
        out << "# " << v << '\n';
      } else {
        out << "# " << k << " = " << v << '\n';
      }
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << (i + 1) << '\t' << s.tokens[i].surface << "\t_\t" << (s.pos_tags ? (*s.pos_tags)[i] : "_") << "\t_\t_\t"
          << (s.heads ? (*s.heads)[i] : 0) << '\t' << (s.deprels ? (*s.deprels)[i] : "_") << "\t_\t_\n";
    }
    out << '\n';
  }
}

inline void write_ner_conll(std::ostream& out, const Dataset& d) {
  for (const auto& s : d.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << s.tokens[i].surface << '\t' << (s.ner_tags ? (*s.ner_tags)[i] : "O") << '\n';
    }
    out << '\n';
  }
}

inline void write_plaintext(std::ostream& out, const Dataset& d) {
  for (const auto& s : d.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ' ';
      out << s.tokens[i].surface;
    }
    out << '\n';
  }
}

inline Dataset parse_dataset(std::istream& in, TaskKind kind, std::string name = {}, std::string language_tag = {}) {
  switch (kind) {
    case TaskKind::sid: return parse_xsid(in, std::move(name), std::move(language_tag));
    case TaskKind::ud: return parse_conllu(in, std::move(name), std::move(language_tag));
    case TaskKind::ner: return parse_ner_conll(in, std::move(name), std::move(language_tag));
    case TaskKind::mlm: return parse_plaintext(in, std::move(name), std::move(language_tag));
  }
  return {};
}

inline void write_dataset(std::ostream& out, const Dataset& d) {
  switch (d.task_kind) {
    case TaskKind::sid: write_xsid(out, d); break;
    case TaskKind::ud: write_conllu(out, d); break;
    case TaskKind::ner: write_ner_conll(out, d); break;
    case TaskKind::mlm: write_plaintext(out, d); break;
  }
}

inline Dataset read_dataset(const std::string& path, TaskKind kind, std::string name = {}, std::string language_tag = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open '" + path + "'");
  return parse_dataset(in, kind, name.empty() ? path : std::move(name), std::move(language_tag));
}

// BIO decoding ---------------------------------------------------------------

struct BioTag {
  enum class Kind { outside, begin, inside } kind = Kind::outside;
  std::string_view label;
};

inline BioTag parse_bio_tag(std::string_view tag) {
  if (tag == "O") return {};
  if (tag.size() > 2 && tag[1] == '-') {
    if (tag[0] == 'B') return {BioTag::Kind::begin, tag.substr(2)};
    if (tag[0] == 'I') return {BioTag::Kind::inside, tag.substr(2)};
  }
  throw Error(Errc::MalformedTag, "tag '" + std::string(tag) + "' is not O, B-<label> or I-<label>");
}

// Maximal spans. B- always opens a span; I- continues an open span with the
// same label and otherwise opens a new one (conlleval repair).
inline std::vector<SlotSpan> decode_bio(std::span<const std::string> tags) {
  std::vector<SlotSpan> spans;
  std::optional<SlotSpan> open;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    BioTag t = parse_bio_tag(tags[i]);
    if (t.kind == BioTag::Kind::inside && open && open->label == t.label) {
      open->end = i;
      continue;
    }
    if (open) spans.push_back(std::move(*open));
    open.reset();
    if (t.kind != BioTag::Kind::outside) open = SlotSpan{i, i, std::string(t.label)};
  }
  if (open) spans.push_back(std::move(*open));
  return spans;
}

inline std::vector<SlotSpan> decode_bio(const std::vector<std::string>& tags) {
  return decode_bio(std::span<const std::string>(tags));
}

// Splitting ------------------------------------------------------------------

inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(Errc::InvalidConfig, "train fraction must lie strictly between 0 and 1");
  }
  if (d.empty()) throw Error(Errc::EmptyDataset, "cannot split empty dataset '" + d.name + "'");
  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  // the epsilon keeps products like 0.3 * 10 from flooring to 2
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(d.size()) * train_fraction + 1e-9));
  Dataset train{d.name + ".train", d.language_tag, d.task_kind, {}};
  Dataset dev{d.name + ".dev", d.language_tag, d.task_kind, {}};
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? train : dev).sentences.push_back(d.sentences[order[i]]);
  }
  return {std::move(train), std::move(dev)};
}

}  // namespace sidlab
