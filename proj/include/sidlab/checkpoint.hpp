#pragma once

// Binary checkpoint container, all integers little-endian:
//
//   "SIDLABCK"              8-byte magic
//   u32 version             kCheckpointVersion
//   u64 dim, u64 ff_dim, u8 position_encoding
//   vocab                   u64 count, then count strings
//   u64 head count          per head: name, u8 kind, u8 role, task, vocab
//   u64 tensor count        per tensor: name, u64 rows, u64 cols, rows*cols f64 bit patterns
//   string rng state        textual mt19937_64 state
//   u64 step_count
//   u64 FNV-1a checksum of every preceding byte
//
// A string is u64 length + UTF-8 bytes. Optimizer moments are not stored;
// training resumed from a checkpoint starts with a fresh optimizer.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sidlab/error.hpp"
#include "sidlab/model.hpp"

namespace sidlab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void raw(std::string_view s) { buf_.append(s); }
  void vocab(const Vocab& v) {
    u64(v.size());
    for (const auto& item : v.items()) str(item);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Vocab vocab() {
    const std::uint64_t n = u64();
    need(n * 8);
    Vocab v;
    for (std::uint64_t i = 0; i < n; ++i) v.add(str());
    if (v.size() != n) throw Error(Errc::CorruptCheckpoint, "duplicate vocabulary entries");
    return v;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw Error(Errc::CorruptCheckpoint, "unexpected end of checkpoint data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline constexpr std::string_view kMagic = "SIDLABCK";

}  // namespace detail

inline std::string serialize_model(const ModelState& m) {
  detail::Writer w;
  w.raw(detail::kMagic);
  w.u32(kCheckpointVersion);
  w.u64(m.config.dim);
  w.u64(m.config.ff_dim);
  w.u8(m.config.position_encoding ? 1 : 0);
  w.vocab(m.tokens);
  w.u64(m.heads.size());
  for (const auto& [name, info] : m.heads) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(info.kind));
    w.u8(static_cast<std::uint8_t>(info.role));
    w.str(info.task);
    w.vocab(info.labels);
  }
  w.u64(m.params.size());
  for (const auto& [name, t] : m.params) {
    w.str(name);
    w.u64(t.rows);
    w.u64(t.cols);
    for (double x : t.data) w.f64(x);
  }
  w.str(m.rng.state());
  w.u64(m.step_count);
  std::string out = w.bytes();
  detail::Writer tail;
  tail.u64(detail::fnv1a(out));
  out += tail.bytes();
  return out;
}

inline ModelState deserialize_model(std::string_view bytes) {
  const std::size_t header = detail::kMagic.size() + 4;
  if (bytes.size() < header || bytes.substr(0, detail::kMagic.size()) != detail::kMagic) {
    throw Error(Errc::CorruptCheckpoint, "not a checkpoint (bad magic)");
  }
  detail::Reader head(bytes.substr(detail::kMagic.size(), 4));
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw Error(Errc::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                           std::to_string(kCheckpointVersion));
  }
  if (bytes.size() < header + 8) throw Error(Errc::CorruptCheckpoint, "checkpoint truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  detail::Reader sum(bytes.substr(bytes.size() - 8));
  if (sum.u64() != detail::fnv1a(body)) throw Error(Errc::CorruptCheckpoint, "checksum mismatch (truncated or damaged)");

  detail::Reader r(body.substr(header));
  ModelState m;
  m.config.dim = r.u64();
  m.config.ff_dim = r.u64();
  m.config.position_encoding = r.u8() != 0;
  m.tokens = r.vocab();
  const std::uint64_t n_heads = r.u64();
  for (std::uint64_t i = 0; i < n_heads; ++i) {
    std::string name = r.str();
    HeadInfo info;
    const std::uint8_t kind = r.u8();
    const std::uint8_t role = r.u8();
    if (kind > static_cast<std::uint8_t>(HeadKind::dependency) || role > static_cast<std::uint8_t>(HeadRole::lm)) {
      throw Error(Errc::CorruptCheckpoint, "bad head descriptor");
    }
    info.kind = static_cast<HeadKind>(kind);
    info.role = static_cast<HeadRole>(role);
    info.task = r.str();
    info.labels = r.vocab();
    m.heads.emplace(std::move(name), std::move(info));
  }
  const std::uint64_t n_params = r.u64();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw Error(Errc::CorruptCheckpoint, "tensor too large");
    Matrix t(rows, cols);
    for (double& x : t.data) x = r.f64();
    m.params.emplace(std::move(name), std::move(t));
  }
  m.rng.restore(r.str());
  m.step_count = r.u64();
  if (!r.at_end()) throw Error(Errc::CorruptCheckpoint, "trailing bytes in checkpoint");
  return m;
}

inline void save_model(const ModelState& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write '" + path + "'");
  const std::string bytes = serialize_model(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "write to '" + path + "' failed");
}

inline ModelState load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace sidlab
