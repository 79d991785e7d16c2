#pragma once

// Learned entropy models: the factorized prior for hyper-latents and the
// quadtree-grouped Laplace parameter heads for main latents. One routine
// drives training (noise proxy), encoding and decoding so the three agree.

#include <functional>
#include <random>

#include "lrvc/core/layers.hpp"
#include "lrvc/entropy/coding.hpp"

namespace lrvc {

enum class Quant {
  kNoise,  // rate on y + U(-0.5, 0.5), straight-through rounding elsewhere
  kRound,  // inference rounding with the skip rule applied
};

struct QuantOptions {
  Quant mode = Quant::kRound;
  std::mt19937_64* rng = nullptr;  // required for kNoise
  double tau = kDefaultSkipThreshold;
  double b_min = 0.01;
};

/// Result of modeling one latent.
template <typename T>
struct CodedLatent {
  Var<T> y_hat;  // quantized latent as seen by the decoder
  Var<T> bits;   // scalar rate estimate (training proxy or rounded bits)
  LatentCode code;
  EntropyParams params;  // merged per-position params (kRound / decode)
};

namespace detail {

/// Graph-side quantize_symbol: forward value equals the coded symbol.
template <typename T>
Var<T> ste_symbol(const Var<T>& y) {
  return ste_round(clamp_ste(y, static_cast<T>(-kSymbolLimit), static_cast<T>(kSymbolLimit)));
}

template <typename T>
Tensor<T> group_mask(const std::vector<uint8_t>& groups, const std::vector<int>& shape, int g) {
  Tensor<T> m(shape);
  for (size_t i = 0; i < groups.size(); ++i) m[i] = groups[i] == g ? T(1) : T(0);
  return m;
}

template <typename T>
Tensor<T> uniform_noise(const std::vector<int>& shape, std::mt19937_64& rng) {
  Tensor<T> n(shape);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& v : n.vec()) v = static_cast<T>(u(rng));
  return n;
}

/// Fills the group-g entries of merged params and skip flags.
template <typename T>
void merge_group(EntropyParams& p, const Tensor<T>& mu, const Tensor<T>& b, const std::vector<uint8_t>& groups,
                 int g, double tau) {
  for (size_t i = 0; i < groups.size(); ++i) {
    if (groups[i] != g) continue;
    p.mu[i] = static_cast<float>(mu[i]);
    p.b[i] = static_cast<float>(b[i]);
    p.skip[i] = skip_position(p.mu[i], p.b[i], tau) ? 1 : 0;
  }
}

inline EntropyParams empty_params(const std::vector<int>& shape) {
  EntropyParams p;
  p.mu = Tensor<float>(shape);
  p.b = Tensor<float>(shape);
  p.skip.assign(p.mu.size(), 0);
  return p;
}

}  // namespace detail

/// Source of coded data when decoding: the chunk plus the backend.
struct ChunkSource {
  std::span<const uint8_t> chunk;
  CoderBackend* backend = nullptr;
};

/// Per-channel learned Laplace prior for hyper-latents (not conditioned on
/// anything decoded, so it bootstraps the decode).
template <typename T>
class FactorizedPrior {
 public:
  FactorizedPrior() = default;
  FactorizedPrior(const Scope<T>& s, int channels) : name_(s.prefix), side_(s.side), channels_(channels) {
    loc_ = s.store->create_filled(s.prefix + ".loc", s.group, s.side, {channels}, T(0));
    scale_ = s.store->create_filled(s.prefix + ".scale", s.group, s.side, {channels}, T(1));
  }

  /// Quantizes and models z (encoder / training). With `src` set, z is
  /// ignored and symbols are decoded instead.
  CodedLatent<T> operator()(const Var<T>& z, const QuantOptions& q, const std::vector<int>& shape,
                            const ChunkSource* src = nullptr) const {
    // A table lookup, not arithmetic on activations: executed, zero MACs.
    if (Instrument* ins = current_instrument()) ins->on_layer(name_, side_, 0);
    const int h = shape[1], w = shape[2];
    Var<T> mu = expand_channels(loc_, h, w);
    Var<T> b = add_scalar(softplus(expand_channels(scale_, h, w)), static_cast<T>(q.b_min));
    CodedLatent<T> out;
    out.code.shape = shape;
    out.params = detail::empty_params(shape);
    const auto groups = quadtree_groups(shape[0], h, w);
    for (int g = 0; g < kNumGroups; ++g) detail::merge_group(out.params, mu.value(), b.value(), groups, g, q.tau);
    if (src) {
      out.code = range_decode(src->chunk, shape, out.params, q.b_min, *src->backend);
      Tensor<T> v(shape);
      for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(out.code.symbols[i]);
      out.y_hat = Var<T>(std::move(v));
      out.bits = sum(laplace_bits(out.y_hat, mu, b));
      return out;
    }
    if (q.mode == Quant::kNoise) {
      Var<T> noisy = add(z, Var<T>(detail::uniform_noise<T>(shape, *q.rng)));
      out.bits = sum(laplace_bits(noisy, mu, b));
      out.y_hat = ste_round(z);
      return out;
    }
    // Round mode: skipped positions take round(mu), which the decoder can
    // reproduce without coded data.
    Tensor<T> coded_mask(shape), skip_vals(shape);
    out.code.symbols.resize(z.value().size());
    for (size_t i = 0; i < coded_mask.size(); ++i) {
      const bool skip = out.params.skip[i];
      coded_mask[i] = skip ? T(0) : T(1);
      skip_vals[i] = skip ? static_cast<T>(quantize_symbol(out.params.mu[i])) : T(0);
      out.code.symbols[i] =
          static_cast<int32_t>(skip ? quantize_symbol(out.params.mu[i]) : quantize_symbol(z.value()[i]));
    }
    Var<T> cm(coded_mask);
    out.y_hat = add(mul(detail::ste_symbol(z), cm), Var<T>(skip_vals));
    out.bits = sum(mul(laplace_bits(out.y_hat, mu, b), cm));
    return out;
  }

 private:
  std::string name_;
  Side side_ = Side::kDecoder;
  int channels_ = 0;
  Var<T> loc_, scale_;
};

/// Four parameter heads, one per quadtree group. Head g sees the condition
/// features and the latent with only groups < g filled in.
template <typename T>
class GroupedParamHeads {
 public:
  GroupedParamHeads() = default;
  GroupedParamHeads(const Scope<T>& s, int cond_channels, int latent_channels, int hidden) : c_(latent_channels) {
    for (int g = 0; g < kNumGroups; ++g) {
      auto sg = s.sub("group" + std::to_string(g));
      a_[g] = Conv2d<T>(sg.sub("conv1"), cond_channels + latent_channels, hidden, 3);
      b_[g] = Conv2d<T>(sg.sub("conv2"), hidden, 2 * latent_channels, 1, 1, T(0.1));
    }
  }

  int latent_channels() const { return c_; }

  /// (mu, b) for group g.
  std::pair<Var<T>, Var<T>> params(int g, const Var<T>& cond, const Var<T>& partial, double b_min) const {
    Var<T> h = b_[g](leaky_relu(a_[g](concat_channels<T>({cond, partial}))));
    Var<T> mu = slice_channels(h, 0, c_);
    Var<T> b = add_scalar(softplus(slice_channels(h, c_, c_)), static_cast<T>(b_min));
    return {mu, b};
  }

  /// Models y (training / encoding) or decodes it from `src`. The group loop
  /// is shared so the decoder sees exactly the encoder's params.
  CodedLatent<T> operator()(const Var<T>& y, const Var<T>& cond, const QuantOptions& q, std::vector<int> shape,
                            const ChunkSource* src = nullptr) const {
    if (shape[0] != c_) throw ShapeError("param heads: latent has " + std::to_string(shape[0]) + " channels, expected " +
                                         std::to_string(c_));
    const auto groups = quadtree_groups(shape[0], shape[1], shape[2]);
    CodedLatent<T> out;
    out.code.shape = shape;
    out.code.symbols.assign(Tensor<T>::count(shape), 0);
    out.params = detail::empty_params(shape);
    Var<T> partial{Tensor<T>(shape)};
    Var<T> bits;
    std::array<std::span<const uint8_t>, kNumGroups> streams;
    if (src) streams = unpack_group_streams(src->chunk);
    const auto& tables = LaplaceTables::get(q.b_min);
    Var<T> noisy;
    if (!src && q.mode == Quant::kNoise) noisy = add(y, Var<T>(detail::uniform_noise<T>(shape, *q.rng)));
    for (int g = 0; g < kNumGroups; ++g) {
      auto [mu, b] = params(g, cond, partial, q.b_min);
      Var<T> mask(detail::group_mask<T>(groups, shape, g));
      Var<T> yq, bits_g;
      if (!src && q.mode == Quant::kNoise) {
        yq = ste_round(y);
        bits_g = sum(mul(laplace_bits(noisy, mu, b), mask));
      } else {
        detail::merge_group(out.params, mu.value(), b.value(), groups, g, q.tau);
        if (src) {
          decode_group(streams[g], out.code.symbols, out.params, groups, g, tables, *src->backend);
        } else {
          for (size_t i = 0; i < groups.size(); ++i) {
            if (groups[i] != g) continue;
            const double v = out.params.skip[i] ? out.params.mu[i] : static_cast<double>(y.value()[i]);
            out.code.symbols[i] = static_cast<int32_t>(quantize_symbol(v));
          }
        }
        Tensor<T> coded(shape), fixed(shape);
        for (size_t i = 0; i < groups.size(); ++i) {
          if (groups[i] != g) continue;
          const bool from_y = !src && !out.params.skip[i];
          coded[i] = from_y ? T(1) : T(0);
          fixed[i] = from_y ? T(0) : static_cast<T>(out.code.symbols[i]);
        }
        // Coded positions keep a straight-through path to y; skipped (and
        // decoded) positions are constants.
        yq = src ? Var<T>(fixed) : add(mul(detail::ste_symbol(y), Var<T>(coded)), Var<T>(fixed));
        Tensor<T> rate_mask(shape);
        for (size_t i = 0; i < groups.size(); ++i) rate_mask[i] = (groups[i] == g && !out.params.skip[i]) ? T(1) : T(0);
        bits_g = sum(mul(laplace_bits(yq, mu, b), Var<T>(rate_mask)));
      }
      partial = add(partial, mul(yq, mask));
      bits = bits.defined() ? add(bits, bits_g) : bits_g;
    }
    out.y_hat = partial;
    out.bits = bits;
    return out;
  }

 private:
  int c_ = 0;
  std::array<Conv2d<T>, kNumGroups> a_, b_;
};

}  // namespace lrvc
