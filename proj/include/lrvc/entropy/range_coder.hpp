#pragma once

// 32-bit range coder over 16-bit frequency tables. Carry handling follows the
// LZMA scheme: a 64-bit low register with a pending byte and a run of 0xFF
// bytes, resolved when the carry is known. The decoder is integer-only.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvc/entropy/laplace.hpp"

namespace lrvc {

/// Malformed or truncated coded data, or a container-level format error.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeEncoder {
 public:
  /// Codes the interval [start, start + freq) out of 2^16.
  void encode(uint32_t start, uint32_t freq) {
    used_ = true;
    const uint32_t r = range_ >> kProbBits;
    low_ += static_cast<uint64_t>(start) * r;
    range_ = freq * r;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  void encode_bin(const CdfTable& t, int bin) { encode(t.cdf[bin], t.freq(bin)); }

  /// One equiprobable bit.
  void encode_bit(int bit) { encode(bit ? kProbTotal / 2 : 0, kProbTotal / 2); }

  /// Flushes and returns the stream. A coder that saw no symbols yields no
  /// bytes.
  std::vector<uint8_t> finish() {
    if (!used_) return {};
    for (int i = 0; i < 5; ++i) shift_low();
    // The first emitted byte is always zero; the decoder assumes it.
    return std::vector<uint8_t>(out_.begin() + 1, out_.end());
  }

 private:
  static constexpr uint32_t kTop = 1u << 24;

  void shift_low() {
    if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
      uint8_t temp = cache_;
      do {
        out_.push_back(static_cast<uint8_t>(temp + carry));
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<uint8_t>(static_cast<uint32_t>(low_) >> 24);
    }
    ++cache_size_;
    low_ = static_cast<uint64_t>(static_cast<uint32_t>(low_) << 8);
  }

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  bool used_ = false;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> data) : data_(data) {}

  /// Returns the bin of `t` the next symbol falls in.
  int decode_bin(const CdfTable& t) {
    init();
    const uint32_t r = range_ >> kProbBits;
    uint32_t v = code_ / r;
    if (v >= kProbTotal) v = kProbTotal - 1;
    // Binary search for the last cdf entry <= v.
    int lo = 0, hi = t.bins() - 1;
    while (lo < hi) {
      int mid = (lo + hi + 1) / 2;
      if (t.cdf[mid] <= v)
        lo = mid;
      else
        hi = mid - 1;
    }
    consume(t.cdf[lo], t.freq(lo), r);
    return lo;
  }

  int decode_bit() {
    init();
    const uint32_t r = range_ >> kProbBits;
    const uint32_t v = code_ / r;
    const int bit = v >= kProbTotal / 2 ? 1 : 0;
    consume(bit ? kProbTotal / 2 : 0, kProbTotal / 2, r);
    return bit;
  }

  size_t consumed() const { return pos_; }

 private:
  static constexpr uint32_t kTop = 1u << 24;

  void init() {
    if (started_) return;
    started_ = true;
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  void consume(uint32_t start, uint32_t freq, uint32_t r) {
    code_ -= start * r;
    range_ = freq * r;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
  }

  uint8_t next_byte() {
    if (pos_ >= data_.size())
      throw FormatError("range decoder: premature end of data after " + std::to_string(data_.size()) + " bytes");
    return data_[pos_++];
  }

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
  bool started_ = false;
};

// ---------------------------------------------------------------------------
// Residual coding against one CdfTable, with Elias-gamma escapes.

namespace detail {
inline int bit_length(uint64_t v) {
  int n = 0;
  while (v) {
    ++n;
    v >>= 1;
  }
  return n;
}
}  // namespace detail

/// Number of equiprobable bits spent after an escape for residual `r`.
inline int escape_bits(const CdfTable& t, int64_t r) {
  const int64_t lo = -static_cast<int64_t>(t.offset);
  const int64_t hi = t.escape_bin() - 1 - t.offset;
  const uint64_t e = r < lo ? static_cast<uint64_t>(lo - r) : static_cast<uint64_t>(r - hi);  // >= 1
  return 1 + 2 * detail::bit_length(e) - 1;
}

inline bool in_table(const CdfTable& t, int64_t r) {
  const int64_t bin = r + t.offset;
  return bin >= 0 && bin < t.escape_bin();
}

inline void encode_residual(RangeEncoder& enc, const CdfTable& t, int64_t r) {
  if (in_table(t, r)) {
    enc.encode_bin(t, static_cast<int>(r + t.offset));
    return;
  }
  enc.encode_bin(t, t.escape_bin());
  const int64_t lo = -static_cast<int64_t>(t.offset);
  const int64_t hi = t.escape_bin() - 1 - t.offset;
  const bool negative = r < lo;
  const uint64_t e = negative ? static_cast<uint64_t>(lo - r) : static_cast<uint64_t>(r - hi);
  enc.encode_bit(negative ? 1 : 0);
  const int n = detail::bit_length(e);
  for (int i = 1; i < n; ++i) enc.encode_bit(0);
  for (int i = n - 1; i >= 0; --i) enc.encode_bit(static_cast<int>((e >> i) & 1));
}

inline int64_t decode_residual(RangeDecoder& dec, const CdfTable& t) {
  const int bin = dec.decode_bin(t);
  if (bin != t.escape_bin()) return static_cast<int64_t>(bin) - t.offset;
  const int64_t lo = -static_cast<int64_t>(t.offset);
  const int64_t hi = t.escape_bin() - 1 - t.offset;
  const bool negative = dec.decode_bit() != 0;
  int zeros = 0;
  while (dec.decode_bit() == 0) {
    if (++zeros > 62) throw FormatError("range decoder: escape code too long");
  }
  uint64_t e = 1;
  for (int i = 0; i < zeros; ++i) e = (e << 1) | static_cast<uint64_t>(dec.decode_bit());
  return negative ? lo - static_cast<int64_t>(e) : hi + static_cast<int64_t>(e);
}

/// Ideal code length in bits of residual r under table t, escapes included.
inline double residual_bits(const CdfTable& t, int64_t r) {
  if (in_table(t, r)) return -std::log2(static_cast<double>(t.freq(static_cast<int>(r + t.offset))) / kProbTotal);
  return -std::log2(static_cast<double>(t.freq(t.escape_bin())) / kProbTotal) + escape_bits(t, r);
}

}  // namespace lrvc
