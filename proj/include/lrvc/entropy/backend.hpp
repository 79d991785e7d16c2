#pragma once

// Pluggable range-coder backends. The boundary is integer-only: a call carries
// quantized CDF tables, a table index per position and residual symbols, so
// any backend that implements the reference coding rules is bit-exact with it.
//
// Subprocess frame format (version 1, little-endian), one request and one
// response per call over the child's stdin/stdout:
//
//   request   u32 payload_len | payload
//     payload u8 version | u8 op (1 encode, 2 decode) |
//             u32 n_tables | { i32 offset | u16 n_bins | n_bins x u16 cdf }* |
//             u32 n_positions | n_positions x u32 table_index |
//             encode: n_positions x i32 residual
//             decode: u32 n_bytes | n_bytes x u8
//   response  u32 payload_len | u8 status (0 ok, 1 error) |
//             ok: encode -> coded bytes, decode -> n_positions x i32
//             error: UTF-8 message
//
// The on-wire cdf omits the terminal 2^16 entry; cdf[0] must be 0 and entries
// must be strictly increasing below 2^16.

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lrvc/entropy/range_coder.hpp"

namespace lrvc {

inline constexpr uint8_t kCoderProtocolVersion = 1;

struct CoderCall {
  std::span<const CdfTable> tables;
  std::vector<uint32_t> table_index;
  std::vector<int32_t> symbols;  // residuals; unused on decode
};

/// Throws FormatError naming the first malformed table or index.
inline void validate_call(const CoderCall& call) {
  for (size_t t = 0; t < call.tables.size(); ++t) {
    const auto& cdf = call.tables[t].cdf;
    if (cdf.size() < 2 || cdf.front() != 0 || cdf.back() != kProbTotal)
      throw FormatError("cdf table " + std::to_string(t) + ": must start at 0 and end at 2^16");
    for (size_t i = 1; i < cdf.size(); ++i)
      if (cdf[i] <= cdf[i - 1])
        throw FormatError("cdf table " + std::to_string(t) + ": not strictly increasing at entry " + std::to_string(i));
  }
  for (size_t i = 0; i < call.table_index.size(); ++i)
    if (call.table_index[i] >= call.tables.size())
      throw FormatError("position " + std::to_string(i) + ": table index " + std::to_string(call.table_index[i]) +
                        " out of range");
}

class CoderBackend {
 public:
  virtual ~CoderBackend() = default;
  virtual std::string name() const = 0;
  virtual std::vector<uint8_t> encode(const CoderCall& call) = 0;
  /// Decodes call.table_index.size() residuals.
  virtual std::vector<int32_t> decode(std::span<const uint8_t> bytes, const CoderCall& call) = 0;
};

class ReferenceBackend final : public CoderBackend {
 public:
  std::string name() const override { return "reference"; }

  std::vector<uint8_t> encode(const CoderCall& call) override {
    if (call.symbols.size() != call.table_index.size())
      throw FormatError("encode: " + std::to_string(call.symbols.size()) + " symbols but " +
                        std::to_string(call.table_index.size()) + " table indexes");
    RangeEncoder enc;
    for (size_t i = 0; i < call.symbols.size(); ++i) encode_residual(enc, table_at(call, i), call.symbols[i]);
    return enc.finish();
  }

  std::vector<int32_t> decode(std::span<const uint8_t> bytes, const CoderCall& call) override {
    RangeDecoder dec(bytes);
    std::vector<int32_t> out(call.table_index.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int32_t>(decode_residual(dec, table_at(call, i)));
    return out;
  }

 private:
  static const CdfTable& table_at(const CoderCall& call, size_t i) {
    const uint32_t t = call.table_index[i];
    if (t >= call.tables.size()) throw FormatError("position " + std::to_string(i) + ": table index out of range");
    return call.tables[t];
  }
};

inline ReferenceBackend& reference_backend() {
  static ReferenceBackend r;
  return r;
}

// ---------------------------------------------------------------------------
// Wire encoding of calls

namespace wire {

inline void put_u16(std::vector<uint8_t>& o, uint16_t v) {
  o.push_back(static_cast<uint8_t>(v));
  o.push_back(static_cast<uint8_t>(v >> 8));
}
inline void put_u32(std::vector<uint8_t>& o, uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class In {
 public:
  explicit In(std::span<const uint8_t> d) : d_(d) {}
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(d_[p_ + i]) << (8 * i);
    p_ += 4;
    return v;
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(d_[p_] | (d_[p_ + 1] << 8));
    p_ += 2;
    return v;
  }
  uint8_t u8() {
    need(1);
    return d_[p_++];
  }
  std::span<const uint8_t> take(size_t n) {
    need(n);
    auto s = d_.subspan(p_, n);
    p_ += n;
    return s;
  }
  std::span<const uint8_t> rest() { return take(d_.size() - p_); }

 private:
  void need(size_t n) const {
    if (d_.size() - p_ < n) throw FormatError("coder frame: premature end of payload at byte " + std::to_string(p_));
  }
  std::span<const uint8_t> d_;
  size_t p_ = 0;
};

enum class Op : uint8_t { kEncode = 1, kDecode = 2 };

/// A call decoded from the wire owns its tables.
struct OwnedCall {
  Op op = Op::kEncode;
  std::vector<CdfTable> tables;
  std::vector<uint32_t> table_index;
  std::vector<int32_t> symbols;
  std::vector<uint8_t> bytes;

  CoderCall view() const { return CoderCall{tables, table_index, symbols}; }
};

inline std::vector<uint8_t> encode_request(Op op, const CoderCall& call, std::span<const uint8_t> bytes = {}) {
  std::vector<uint8_t> p;
  p.push_back(kCoderProtocolVersion);
  p.push_back(static_cast<uint8_t>(op));
  put_u32(p, static_cast<uint32_t>(call.tables.size()));
  for (const auto& t : call.tables) {
    put_u32(p, static_cast<uint32_t>(t.offset));
    put_u16(p, static_cast<uint16_t>(t.bins()));
    for (int i = 0; i < t.bins(); ++i) put_u16(p, static_cast<uint16_t>(t.cdf[i]));
  }
  put_u32(p, static_cast<uint32_t>(call.table_index.size()));
  for (uint32_t t : call.table_index) put_u32(p, t);
  if (op == Op::kEncode) {
    for (int32_t s : call.symbols) put_u32(p, static_cast<uint32_t>(s));
  } else {
    put_u32(p, static_cast<uint32_t>(bytes.size()));
    p.insert(p.end(), bytes.begin(), bytes.end());
  }
  std::vector<uint8_t> frame;
  put_u32(frame, static_cast<uint32_t>(p.size()));
  frame.insert(frame.end(), p.begin(), p.end());
  return frame;
}

inline OwnedCall decode_request(std::span<const uint8_t> payload) {
  In in(payload);
  const uint8_t version = in.u8();
  if (version != kCoderProtocolVersion)
    throw FormatError("coder frame: unsupported protocol version " + std::to_string(version));
  OwnedCall c;
  const uint8_t op = in.u8();
  if (op != 1 && op != 2) throw FormatError("coder frame: unknown op " + std::to_string(op));
  c.op = static_cast<Op>(op);
  const uint32_t nt = in.u32();
  c.tables.resize(nt);
  for (auto& t : c.tables) {
    t.offset = static_cast<int32_t>(in.u32());
    const uint16_t n = in.u16();
    t.cdf.resize(n + 1);
    for (uint16_t i = 0; i < n; ++i) t.cdf[i] = in.u16();
    t.cdf[n] = kProbTotal;
  }
  const uint32_t np = in.u32();
  c.table_index.resize(np);
  for (auto& t : c.table_index) t = in.u32();
  if (c.op == Op::kEncode) {
    c.symbols.resize(np);
    for (auto& s : c.symbols) s = static_cast<int32_t>(in.u32());
  } else {
    const uint32_t nb = in.u32();
    auto b = in.take(nb);
    c.bytes.assign(b.begin(), b.end());
  }
  validate_call(c.view());
  return c;
}

inline std::vector<uint8_t> make_response(bool ok, std::span<const uint8_t> body) {
  std::vector<uint8_t> f;
  put_u32(f, static_cast<uint32_t>(body.size() + 1));
  f.push_back(ok ? 0 : 1);
  f.insert(f.end(), body.begin(), body.end());
  return f;
}

/// Serves one decoded request with `backend`; returns the response frame.
inline std::vector<uint8_t> serve(CoderBackend& backend, std::span<const uint8_t> payload) {
  try {
    OwnedCall c = decode_request(payload);
    if (c.op == Op::kEncode) return make_response(true, backend.encode(c.view()));
    auto syms = backend.decode(c.bytes, c.view());
    std::vector<uint8_t> body;
    for (int32_t s : syms) put_u32(body, static_cast<uint32_t>(s));
    return make_response(true, body);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    return make_response(false, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(msg.data()), msg.size()));
  }
}

}  // namespace wire

/// Runs an external coder process and talks the frame protocol over pipes.
class SubprocessBackend final : public CoderBackend {
 public:
  explicit SubprocessBackend(std::vector<std::string> argv) : argv_(std::move(argv)) { spawn(); }
  ~SubprocessBackend() override { shutdown(); }
  SubprocessBackend(const SubprocessBackend&) = delete;
  SubprocessBackend& operator=(const SubprocessBackend&) = delete;

  std::string name() const override { return "subprocess:" + argv_.at(0); }

  std::vector<uint8_t> encode(const CoderCall& call) override {
    auto body = roundtrip(wire::encode_request(wire::Op::kEncode, call));
    return body;
  }

  std::vector<int32_t> decode(std::span<const uint8_t> bytes, const CoderCall& call) override {
    auto body = roundtrip(wire::encode_request(wire::Op::kDecode, call, bytes));
    if (body.size() != call.table_index.size() * 4) throw FormatError("subprocess coder: short decode response");
    std::vector<int32_t> out(call.table_index.size());
    wire::In in(body);
    for (auto& s : out) s = static_cast<int32_t>(in.u32());
    return out;
  }

 private:
  void spawn() {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) throw std::runtime_error("subprocess coder: pipe failed");
    pid_ = fork();
    if (pid_ < 0) throw std::runtime_error("subprocess coder: fork failed");
    if (pid_ == 0) {
      dup2(to_child[0], 0);
      dup2(from_child[1], 1);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      std::vector<char*> args;
      for (auto& a : argv_) args.push_back(a.data());
      args.push_back(nullptr);
      execvp(args[0], args.data());
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_fd_ = from_child[0];
    out_fd_ = to_child[1];
    signal(SIGPIPE, SIG_IGN);
  }

  void shutdown() {
    if (out_fd_ >= 0) close(out_fd_);
    if (in_fd_ >= 0) close(in_fd_);
    out_fd_ = in_fd_ = -1;
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  void write_all(std::span<const uint8_t> d) {
    size_t off = 0;
    while (off < d.size()) {
      ssize_t n = ::write(out_fd_, d.data() + off, d.size() - off);
      if (n <= 0) throw std::runtime_error("subprocess coder: write failed");
      off += static_cast<size_t>(n);
    }
  }

  std::vector<uint8_t> read_exact(size_t n) {
    std::vector<uint8_t> b(n);
    size_t off = 0;
    while (off < n) {
      ssize_t r = ::read(in_fd_, b.data() + off, n - off);
      if (r <= 0) throw std::runtime_error("subprocess coder: child closed the stream");
      off += static_cast<size_t>(r);
    }
    return b;
  }

  std::vector<uint8_t> roundtrip(const std::vector<uint8_t>& request) {
    write_all(request);
    auto len_b = read_exact(4);
    const uint32_t len = wire::In(len_b).u32();
    if (len == 0) throw FormatError("subprocess coder: empty response");
    auto payload = read_exact(len);
    if (payload[0] != 0) throw FormatError("subprocess coder: " + std::string(payload.begin() + 1, payload.end()));
    return std::vector<uint8_t>(payload.begin() + 1, payload.end());
  }

  std::vector<std::string> argv_;
  pid_t pid_ = -1;
  int in_fd_ = -1, out_fd_ = -1;
};

/// Backend by name: "reference", or "subprocess:<command>". Falls back to the
/// reference coder when the external backend cannot be started.
inline std::unique_ptr<CoderBackend> make_backend(const std::string& spec, std::string* note = nullptr) {
  const std::string prefix = "subprocess:";
  if (spec.rfind(prefix, 0) == 0) {
    std::string cmd = spec.substr(prefix.size());
    if (access(cmd.c_str(), X_OK) == 0) return std::make_unique<SubprocessBackend>(std::vector<std::string>{cmd});
    if (note) *note = "backend '" + cmd + "' not executable; using reference coder";
  } else if (spec != "reference" && !spec.empty() && note) {
    *note = "unknown backend '" + spec + "'; using reference coder";
  }
  return std::make_unique<ReferenceBackend>();
}

}  // namespace lrvc
