#pragma once

// Checkpoint container, all integers and doubles little-endian:
//
//   bytes  "MIPGCKPT"                        magic
//   u32    format version (kCheckpointVersion)
//   u64    vocab_size, hidden_dim, memory_dim, visual_count, visual_dim,
//          lines_per_poem, chars_per_line
//   f64    lambda
//   u64    parameter count P
//   P ×    u32 name length, name bytes (path-style, e.g. "decoder.Wz"),
//          u32 rank, rank × u64 extents, numel × f64 row-major values
//
// Parameters appear in MipgModel declaration order. Doubles are stored as
// their IEEE-754 bit patterns, so a round trip is bitwise exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "mipg/model.hpp"

namespace mipg {

inline constexpr std::string_view kCheckpointMagic = "MIPGCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint64_t kMaxCheckpointExtent = std::uint64_t{1} << 24;

namespace detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      throw CheckpointTruncatedError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

/// Parameter tensors shaped for `config`, zero-filled.
inline MipgModel zero_model(const MipgConfig& config) {
  Rng rng(0);
  MipgModel m = init_params(config, rng);
  for (Tensor* t : m.parameters()) std::fill(t->values().begin(), t->values().end(), 0.0);
  return m;
}

}  // namespace detail

inline std::string encode_checkpoint(const MipgModel& model) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto& c = model.config;
  for (std::size_t v : {c.vocab_size, c.hidden_dim, c.memory_dim, c.visual_count, c.visual_dim, c.lines_per_poem,
                        c.chars_per_line})
    w.u64(v);
  w.f64(c.lambda);
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  w.u64(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(names[i].size()));
    w.bytes(names[i]);
    w.u32(static_cast<std::uint32_t>(params[i]->rank()));
    for (std::size_t e : params[i]->shape()) w.u64(e);
    for (double v : params[i]->values()) w.f64(v);
  }
  return w.take();
}

inline MipgModel decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() + 4) throw CheckpointTruncatedError("checkpoint shorter than its header");
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw CheckpointVersionError("not a checkpoint: bad magic");
  if (const auto version = r.u32(); version != kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));
  MipgConfig c;
  for (std::size_t* field : {&c.vocab_size, &c.hidden_dim, &c.memory_dim, &c.visual_count, &c.visual_dim,
                             &c.lines_per_poem, &c.chars_per_line}) {
    const std::uint64_t v = r.u64();
    if (v > kMaxCheckpointExtent)
      throw CheckpointShapeError("checkpoint config field " + std::to_string(v) + " is implausible");
    *field = static_cast<std::size_t>(v);
  }
  c.lambda = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointShapeError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (parameter_count(c) > r.remaining() / sizeof(double))
    throw CheckpointTruncatedError("checkpoint holds fewer values than its config requires");
  MipgModel model = detail::zero_model(c);
  const auto names = model.parameter_names();
  auto params = model.parameters();
  if (r.u64() != params.size()) throw CheckpointShapeError("checkpoint parameter count does not match its config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name(r.bytes(r.u32()));
    if (name != names[i]) throw CheckpointShapeError("expected parameter " + names[i] + ", found " + name);
    Shape shape(r.u32());
    for (auto& e : shape) e = static_cast<std::size_t>(r.u64());
    if (shape != params[i]->shape())
      throw CheckpointShapeError("parameter " + name + " has shape " + shape_string(shape) + ", config implies " +
                                 shape_string(params[i]->shape()));
    for (double& v : params[i]->values()) v = r.f64();
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return model;
}

inline void save_checkpoint(const MipgModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  const auto bytes = encode_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

inline MipgModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mipg
