#pragma once

// Laplace symbol model and its 16-bit quantized CDF tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "lrvc/core/ops.hpp"

namespace lrvc {

inline constexpr int kProbBits = 16;
inline constexpr uint32_t kProbTotal = 1u << kProbBits;
inline constexpr double kProbFloor = 1.0 / kProbTotal;

/// P(k) = F(k + 1/2) - F(k - 1/2) under Laplace(mu, b), floored at 2^-16.
inline double laplace_bin_prob(double mu, double b, long k) {
  return std::max(laplace_bin_mass<double>(static_cast<double>(k), mu, b), kProbFloor);
}

/// Probability mass outside the bins [lo, hi].
inline double laplace_tail_mass(double mu, double b, long lo, long hi) {
  return laplace_cdf<double>(lo - 0.5, mu, b) + (1.0 - laplace_cdf<double>(hi + 0.5, mu, b));
}

/// Round half away from zero.
inline long round_half_away(double v) { return static_cast<long>(std::round(v)); }

/// Largest coded symbol magnitude. Values beyond it saturate, so symbols and
/// residuals always fit 32 bits and stay exact in float.
inline constexpr long kSymbolLimit = 1L << 20;

/// round_half_away with saturation at kSymbolLimit; NaN maps to 0.
inline long quantize_symbol(double v) {
  if (std::isnan(v)) return 0;
  return round_half_away(std::clamp(v, double(-kSymbolLimit), double(kSymbolLimit)));
}

/// One quantized CDF. Bins cover residuals [-offset, n - 2 - offset]; the last
/// bin is the escape bin for residuals outside that range.
struct CdfTable {
  int32_t offset = 0;
  std::vector<uint32_t> cdf;  // n + 1 entries, cdf[0] = 0, cdf[n] = 2^16

  int bins() const { return static_cast<int>(cdf.size()) - 1; }
  int escape_bin() const { return bins() - 1; }
  uint32_t freq(int bin) const { return cdf[bin + 1] - cdf[bin]; }
};

/// Converts bin probabilities into frequencies that sum to 2^16 with every
/// bin at least 1.
inline std::vector<uint32_t> quantize_cdf(const std::vector<double>& probs) {
  const size_t n = probs.size();
  std::vector<int64_t> f(n);
  int64_t total = 0;
  size_t largest = 0;
  for (size_t i = 0; i < n; ++i) {
    f[i] = std::max<int64_t>(1, static_cast<int64_t>(std::floor(probs[i] * kProbTotal + 0.5)));
    total += f[i];
    if (f[i] > f[largest]) largest = i;
  }
  f[largest] += static_cast<int64_t>(kProbTotal) - total;
  if (f[largest] < 1) {
    // Pathological: too many bins for the precision; flatten.
    std::fill(f.begin(), f.end(), 1);
    f[0] += static_cast<int64_t>(kProbTotal) - static_cast<int64_t>(n);
  }
  std::vector<uint32_t> cdf(n + 1, 0);
  for (size_t i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + static_cast<uint32_t>(f[i]);
  return cdf;
}

/// Bank of quantized Laplace CDFs indexed by (scale level, mean phase). The
/// scale axis is log-spaced over [b_min, kMaxScale]; the phase axis quantizes
/// mu - round(mu) to eighths. The coder only ever sees these integer tables.
class LaplaceTables {
 public:
  static constexpr int kScaleLevels = 64;
  static constexpr int kPhases = 9;
  static constexpr double kMaxScale = 32.0;
  static constexpr int kMaxOffset = 400;

  explicit LaplaceTables(double b_min) : b_min_(b_min) {
    log_step_ = std::log(kMaxScale / b_min_) / (kScaleLevels - 1);
    tables_.reserve(kScaleLevels * kPhases);
    for (int s = 0; s < kScaleLevels; ++s) {
      const double b = scale_level(s);
      const int k = std::clamp(static_cast<int>(std::ceil(b * 12.0 + 1.0)), 1, kMaxOffset);
      for (int ph = 0; ph < kPhases; ++ph) {
        const double mu = phase_value(ph);
        std::vector<double> p(2 * k + 2);
        for (int r = -k; r <= k; ++r) p[r + k] = laplace_bin_mass<double>(r, mu, b);
        p.back() = laplace_tail_mass(mu, b, -k, k);
        CdfTable t;
        t.offset = k;
        t.cdf = quantize_cdf(p);
        tables_.push_back(std::move(t));
      }
    }
  }

  /// Shared instance per b_min.
  static const LaplaceTables& get(double b_min) {
    static std::mutex mu;
    static std::map<double, std::unique_ptr<LaplaceTables>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[b_min];
    if (!slot) slot = std::make_unique<LaplaceTables>(b_min);
    return *slot;
  }

  double b_min() const { return b_min_; }
  double scale_level(int s) const { return b_min_ * std::exp(log_step_ * s); }
  static double phase_value(int ph) { return (ph - (kPhases / 2)) / 8.0; }

  int scale_index(double b) const {
    if (!(b > b_min_)) return 0;
    long s = std::lround(std::log(b / b_min_) / log_step_);
    return static_cast<int>(std::clamp<long>(s, 0, kScaleLevels - 1));
  }
  static int phase_index(double frac) {
    long ph = std::lround(frac * 8.0) + kPhases / 2;
    return static_cast<int>(std::clamp<long>(ph, 0, kPhases - 1));
  }

  /// Table used for a symbol modeled by Laplace(mu, b); residuals are taken
  /// relative to round(mu).
  int table_index(double mu, double b) const {
    const double frac = mu - static_cast<double>(quantize_symbol(mu));
    return scale_index(b) * kPhases + phase_index(frac);
  }

  const CdfTable& table(int index) const { return tables_[index]; }
  const std::vector<CdfTable>& tables() const { return tables_; }

 private:
  double b_min_;
  double log_step_;
  std::vector<CdfTable> tables_;
};

}  // namespace lrvc
