#pragma once

// On-disk stream layout (all integers little-endian):
//
//   header   "LRVC" | version u8 | width u16 | height u16 | intra_period u8 |
//            frame_count u16 | lambda_index u8 | config_digest [8]
//   frame    frame_type u8 | chunk_count u8 | { length u32 | bytes }*
//
// I-frames carry chunks (z_I, y_I); P-frames carry (z_mv, mv, z_ctx, y_ctx).
// width/height are the source dimensions before padding.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrvc/entropy/range_coder.hpp"

namespace lrvc {

enum class FrameType : uint8_t { kIntra = 0, kInter = 1 };

inline constexpr std::array<uint8_t, 4> kStreamMagic = {'L', 'R', 'V', 'C'};
inline constexpr uint8_t kStreamVersion = 1;
inline constexpr size_t kHeaderBytes = 21;

using ConfigDigest = std::array<uint8_t, 8>;

struct StreamHeader {
  uint8_t version = kStreamVersion;
  uint16_t width = 0;
  uint16_t height = 0;
  uint8_t intra_period = 32;
  uint16_t frame_count = 0;
  uint8_t lambda_index = 0;
  ConfigDigest config_digest{};

  bool operator==(const StreamHeader&) const = default;
};

struct FramePayload {
  FrameType type = FrameType::kIntra;
  std::vector<std::vector<uint8_t>> chunks;

  bool operator==(const FramePayload&) const = default;
};

struct BitstreamContainer {
  StreamHeader header;
  std::vector<FramePayload> frames;

  bool operator==(const BitstreamContainer&) const = default;
};

/// Frame t is intra iff t mod intra_period == 0.
inline FrameType frame_type_at(int t, int intra_period) {
  return t % intra_period == 0 ? FrameType::kIntra : FrameType::kInter;
}

inline size_t expected_chunks(FrameType t) { return t == FrameType::kIntra ? 2 : 4; }

namespace detail {
inline void put_u16(std::vector<uint8_t>& o, uint16_t v) {
  o.push_back(static_cast<uint8_t>(v));
  o.push_back(static_cast<uint8_t>(v >> 8));
}
inline void put_u32(std::vector<uint8_t>& o, uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> d) : d_(d) {}
  size_t pos() const { return pos_; }
  size_t remaining() const { return d_.size() - pos_; }
  void need(size_t n, const std::string& what) const {
    if (remaining() < n)
      throw FormatError("stream truncated at byte " + std::to_string(pos_) + " while reading " + what + " (need " +
                        std::to_string(n) + ", have " + std::to_string(remaining()) + ")");
  }
  uint8_t u8(const std::string& what) {
    need(1, what);
    return d_[pos_++];
  }
  uint16_t u16(const std::string& what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(d_[pos_] | (d_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t u32(const std::string& what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(d_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const uint8_t> bytes(size_t n, const std::string& what) {
    need(n, what);
    auto s = d_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const uint8_t> d_;
  size_t pos_ = 0;
};
}  // namespace detail

inline std::vector<uint8_t> serialize_header(const StreamHeader& h) {
  std::vector<uint8_t> o(kStreamMagic.begin(), kStreamMagic.end());
  o.push_back(h.version);
  detail::put_u16(o, h.width);
  detail::put_u16(o, h.height);
  o.push_back(h.intra_period);
  detail::put_u16(o, h.frame_count);
  o.push_back(h.lambda_index);
  o.insert(o.end(), h.config_digest.begin(), h.config_digest.end());
  return o;
}

inline void serialize_frame(std::vector<uint8_t>& o, const FramePayload& f) {
  o.push_back(static_cast<uint8_t>(f.type));
  o.push_back(static_cast<uint8_t>(f.chunks.size()));
  for (const auto& c : f.chunks) {
    detail::put_u32(o, static_cast<uint32_t>(c.size()));
    o.insert(o.end(), c.begin(), c.end());
  }
}

inline std::vector<uint8_t> serialize(const BitstreamContainer& s) {
  if (s.frames.size() != s.header.frame_count)
    throw FormatError("serialize: header frame_count " + std::to_string(s.header.frame_count) + " but " +
                      std::to_string(s.frames.size()) + " frames");
  auto o = serialize_header(s.header);
  for (const auto& f : s.frames) serialize_frame(o, f);
  return o;
}

inline std::string digest_hex(const ConfigDigest& d) {
  static const char* kHex = "0123456789abcdef";
  std::string s;
  for (uint8_t b : d) {
    s += kHex[b >> 4];
    s += kHex[b & 15];
  }
  return s;
}

/// Parses a stream. When `expected` is given, a differing config digest is a
/// hard error.
inline BitstreamContainer parse(std::span<const uint8_t> data, const ConfigDigest* expected = nullptr) {
  detail::Reader r(data);
  BitstreamContainer s;
  auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kStreamMagic.begin())) throw FormatError("not an LRVC stream (bad magic)");
  auto& h = s.header;
  h.version = r.u8("version");
  if (h.version != kStreamVersion)
    throw FormatError("unsupported stream version " + std::to_string(h.version) + " (expected " +
                      std::to_string(kStreamVersion) + ")");
  h.width = r.u16("width");
  h.height = r.u16("height");
  h.intra_period = r.u8("intra_period");
  h.frame_count = r.u16("frame_count");
  h.lambda_index = r.u8("lambda_index");
  auto dg = r.bytes(8, "config_digest");
  std::copy(dg.begin(), dg.end(), h.config_digest.begin());
  if (expected && *expected != h.config_digest)
    throw FormatError("config digest mismatch: stream " + digest_hex(h.config_digest) + ", model " +
                      digest_hex(*expected));
  if (h.intra_period == 0) throw FormatError("intra_period must be >= 1");
  for (uint16_t fi = 0; fi < h.frame_count; ++fi) {
    const std::string where = "frame " + std::to_string(fi);
    FramePayload f;
    const uint8_t type = r.u8(where + " type");
    if (type > 1) throw FormatError(where + ": unknown frame type " + std::to_string(type));
    f.type = static_cast<FrameType>(type);
    const uint8_t n = r.u8(where + " chunk count");
    if (n != expected_chunks(f.type))
      throw FormatError(where + ": expected " + std::to_string(expected_chunks(f.type)) + " chunks, got " +
                        std::to_string(n));
    for (uint8_t ci = 0; ci < n; ++ci) {
      const std::string cw = where + " chunk " + std::to_string(ci);
      const uint32_t len = r.u32(cw + " length");
      auto b = r.bytes(len, cw);
      f.chunks.emplace_back(b.begin(), b.end());
    }
    s.frames.push_back(std::move(f));
  }
  if (r.remaining() != 0) throw FormatError("trailing " + std::to_string(r.remaining()) + " bytes after last frame");
  return s;
}

}  // namespace lrvc
