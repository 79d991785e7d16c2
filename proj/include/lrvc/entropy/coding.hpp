#pragma once

// Latent symbol coding: quadtree group schedule, probability-based skipping
// and the per-chunk layout of group sub-streams.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lrvc/entropy/backend.hpp"

namespace lrvc {

inline constexpr int kNumGroups = 4;
inline constexpr double kDefaultSkipThreshold = 0.99;

/// Quantized latent. symbols are integers in (C, h, w) order; pre_quant holds
/// the real-valued encoder output when available.
struct LatentCode {
  std::vector<int> shape;  // (C, h, w)
  std::vector<int32_t> symbols;
  Tensor<float> pre_quant;
  int scale = 16;  // downsampling factor relative to the padded frame

  size_t size() const { return symbols.size(); }
  bool operator==(const LatentCode& o) const { return shape == o.shape && symbols == o.symbols; }
};

/// Per-element Laplace parameters for a latent plus the derived skip mask.
struct EntropyParams {
  Tensor<float> mu;
  Tensor<float> b;
  std::vector<uint8_t> skip;
  int schedule_id = 0;

  size_t size() const { return mu.size(); }
};

/// Group id (0..3) of every position of a (C, h, w) latent. Spatial 2x2
/// phases are ordered (0,0), (1,1), (0,1), (1,0); even channels take the
/// phases in that order, odd channels take them pairwise swapped, so each
/// group mixes both channel parities.
inline std::vector<uint8_t> quadtree_groups(int c, int h, int w) {
  std::vector<uint8_t> g(static_cast<size_t>(c) * h * w);
  size_t i = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int py = y & 1, px = x & 1;
        int q = (py == px) ? py : (px == 1 ? 2 : 3);
        if (ci & 1) q ^= 1;
        g[i++] = static_cast<uint8_t>(q);
      }
  return g;
}

/// The schedule as four disjoint position masks.
inline std::array<std::vector<uint8_t>, kNumGroups> quadtree_schedule(int c, int h, int w) {
  const auto g = quadtree_groups(c, h, w);
  std::array<std::vector<uint8_t>, kNumGroups> masks;
  for (int k = 0; k < kNumGroups; ++k) {
    masks[k].resize(g.size());
    for (size_t i = 0; i < g.size(); ++i) masks[k][i] = g[i] == k;
  }
  return masks;
}

/// True when the modeled mode probability exceeds tau: such a position is not
/// coded and decodes as round(mu).
inline bool skip_position(double mu, double b, double tau) {
  return laplace_bin_prob(mu, b, quantize_symbol(mu)) > tau;
}

inline std::vector<uint8_t> skip_mask(const EntropyParams& p, double tau) {
  std::vector<uint8_t> s(p.size());
  for (size_t i = 0; i < s.size(); ++i) s[i] = skip_position(p.mu[i], p.b[i], tau) ? 1 : 0;
  return s;
}

// ---------------------------------------------------------------------------
// Chunk layout: three LEB128 lengths for group sub-streams 0..2, then the four
// sub-streams back to back (the last one runs to the end of the chunk).

inline void put_varint(std::vector<uint8_t>& out, uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<uint8_t>(v));
}

inline uint64_t get_varint(std::span<const uint8_t> in, size_t& pos) {
  uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (pos >= in.size()) throw FormatError("chunk: truncated length prefix");
    const uint8_t b = in[pos++];
    v |= static_cast<uint64_t>(b & 0x7F) << shift;
    if (!(b & 0x80)) return v;
  }
  throw FormatError("chunk: malformed length prefix");
}

inline std::vector<uint8_t> pack_group_streams(const std::array<std::vector<uint8_t>, kNumGroups>& s) {
  std::vector<uint8_t> out;
  for (int g = 0; g < kNumGroups - 1; ++g) put_varint(out, s[g].size());
  for (const auto& v : s) out.insert(out.end(), v.begin(), v.end());
  return out;
}

inline std::array<std::span<const uint8_t>, kNumGroups> unpack_group_streams(std::span<const uint8_t> chunk) {
  size_t pos = 0;
  std::array<uint64_t, kNumGroups> len{};
  uint64_t sum = 0;
  for (int g = 0; g < kNumGroups - 1; ++g) {
    len[g] = get_varint(chunk, pos);
    sum += len[g];
  }
  if (pos + sum > chunk.size()) throw FormatError("chunk: group lengths exceed chunk size");
  len[kNumGroups - 1] = chunk.size() - pos - sum;
  std::array<std::span<const uint8_t>, kNumGroups> out;
  for (int g = 0; g < kNumGroups; ++g) {
    out[g] = chunk.subspan(pos, len[g]);
    pos += len[g];
  }
  return out;
}

/// Builds the coder call for one group (raster order, skipped positions
/// excluded). Symbols become residuals against round(mu).
inline CoderCall group_call(std::span<const int32_t> symbols, const EntropyParams& p, std::span<const uint8_t> groups,
                            int group, const LaplaceTables& tables, bool with_symbols) {
  CoderCall call;
  call.tables = tables.tables();
  for (size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] != group || p.skip[i]) continue;
    const double mu = p.mu[i];
    call.table_index.push_back(static_cast<uint32_t>(tables.table_index(mu, p.b[i])));
    if (with_symbols) call.symbols.push_back(static_cast<int32_t>(symbols[i] - quantize_symbol(mu)));
  }
  return call;
}

/// Codes one group into a fresh sub-stream.
inline std::vector<uint8_t> encode_group(std::span<const int32_t> symbols, const EntropyParams& p,
                                         std::span<const uint8_t> groups, int group, const LaplaceTables& tables,
                                         CoderBackend& backend = reference_backend()) {
  ScopedPhase phase("entropy_enc");
  return backend.encode(group_call(symbols, p, groups, group, tables, true));
}

/// Inverse of encode_group; writes the group's positions into `symbols`.
inline void decode_group(std::span<const uint8_t> stream, std::span<int32_t> symbols, const EntropyParams& p,
                         std::span<const uint8_t> groups, int group, const LaplaceTables& tables,
                         CoderBackend& backend = reference_backend()) {
  ScopedPhase phase("entropy_dec");
  const CoderCall call = group_call(symbols, p, groups, group, tables, false);
  const auto residuals = call.table_index.empty() ? std::vector<int32_t>{} : backend.decode(stream, call);
  size_t k = 0;
  for (size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] != group) continue;
    const long base = quantize_symbol(p.mu[i]);
    symbols[i] = static_cast<int32_t>(p.skip[i] ? base : base + residuals[k++]);
  }
}

/// Ideal bits for the coded (non-skipped) positions of a group.
inline double estimate_group_bits(std::span<const int32_t> symbols, const EntropyParams& p,
                                  std::span<const uint8_t> groups, int group, const LaplaceTables& tables) {
  double bits = 0;
  for (size_t i = 0; i < symbols.size(); ++i) {
    if (groups[i] != group || p.skip[i]) continue;
    const double mu = p.mu[i];
    const CdfTable& t = tables.table(tables.table_index(mu, p.b[i]));
    bits += residual_bits(t, static_cast<int64_t>(symbols[i]) - quantize_symbol(mu));
  }
  return bits;
}

/// Whole-latent coding when every group's parameters are known up front.
inline std::vector<uint8_t> range_encode(const LatentCode& code, const EntropyParams& p, double b_min,
                                         CoderBackend& backend = reference_backend()) {
  const auto& tables = LaplaceTables::get(b_min);
  const auto groups = quadtree_groups(code.shape[0], code.shape[1], code.shape[2]);
  if (p.size() != code.size() || p.skip.size() != code.size())
    throw ShapeError("range_encode: params do not match latent shape " + shape_str(code.shape));
  std::array<std::vector<uint8_t>, kNumGroups> streams;
  for (int g = 0; g < kNumGroups; ++g) streams[g] = encode_group(code.symbols, p, groups, g, tables, backend);
  return pack_group_streams(streams);
}

inline LatentCode range_decode(std::span<const uint8_t> chunk, std::vector<int> shape, const EntropyParams& p,
                               double b_min, CoderBackend& backend = reference_backend()) {
  const auto& tables = LaplaceTables::get(b_min);
  LatentCode code;
  code.shape = std::move(shape);
  code.symbols.assign(Tensor<float>::count(code.shape), 0);
  if (p.size() != code.size() || p.skip.size() != code.size())
    throw ShapeError("range_decode: params do not match latent shape " + shape_str(code.shape));
  const auto groups = quadtree_groups(code.shape[0], code.shape[1], code.shape[2]);
  const auto streams = unpack_group_streams(chunk);
  for (int g = 0; g < kNumGroups; ++g) decode_group(streams[g], code.symbols, p, groups, g, tables, backend);
  return code;
}

/// Sum of -log2 p over coded positions of all groups.
inline double estimate_bits(const LatentCode& code, const EntropyParams& p, double b_min) {
  const auto& tables = LaplaceTables::get(b_min);
  const auto groups = quadtree_groups(code.shape[0], code.shape[1], code.shape[2]);
  double bits = 0;
  for (int g = 0; g < kNumGroups; ++g) bits += estimate_group_bits(code.symbols, p, groups, g, tables);
  return bits;
}

}  // namespace lrvc
