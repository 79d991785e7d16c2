#pragma once

// Quality metrics and BD-rate.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lrvc/core/ops.hpp"

namespace lrvc {

/// Returned by psnr() for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) over all channels jointly.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  a.check_same(b, "psnr");
  double se = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    se += d * d;
  }
  if (se == 0) return kPsnrIdentical;
  return 10.0 * std::log10(double(a.size()) / se);
}

/// Frame-averaged PSNR (infinite frames are skipped when any finite exists).
inline double mean_psnr(const std::vector<double>& per_frame) {
  double s = 0;
  int n = 0;
  for (double v : per_frame)
    if (std::isfinite(v)) s += v, ++n;
  return n ? s / n : kPsnrIdentical;
}

// ---------------------------------------------------------------------------
// MS-SSIM: 11-tap Gaussian (sigma 1.5) with valid extent, K1 = 0.01,
// K2 = 0.03, data range 1, 2x2 average pooling between scales (padding odd
// sizes), per-channel products of relu'd terms averaged over channels.

inline constexpr std::array<double, 5> kMsssimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

template <typename T>
std::vector<T> gaussian_window(int size = 11, double sigma = 1.5) {
  std::vector<double> g(size);
  double s = 0;
  for (int i = 0; i < size; ++i) {
    const double x = i - size / 2;
    g[i] = std::exp(-(x * x) / (2 * sigma * sigma));
    s += g[i];
  }
  std::vector<T> out(size);
  for (int i = 0; i < size; ++i) out[i] = static_cast<T>(g[i] / s);
  return out;
}

/// Number of scales usable at this size: 5 when min(H, W) > 160, fewer for
/// smaller inputs (weights renormalized).
inline int msssim_scales(int h, int w, int win = 11) {
  int s = 5;
  while (s > 1 && std::min(h, w) <= (win - 1) * (1 << (s - 1))) --s;
  return s;
}

/// Differentiable MS-SSIM of (C, H, W) images in [0,1].
template <typename T>
Var<T> ms_ssim(const Var<T>& x, const Var<T>& y) {
  x.value().check_same(y.value(), "ms_ssim");
  const int scales = msssim_scales(x.value().height(), x.value().width());
  // The standard weights are used as published at full depth; a reduced
  // pyramid renormalizes the ones it keeps.
  double wsum = 1.0;
  if (scales < 5) {
    wsum = 0;
    for (int i = 0; i < scales; ++i) wsum += kMsssimWeights[i];
  }
  const auto win = gaussian_window<T>();
  const T c1 = T(0.01 * 0.01), c2 = T(0.03 * 0.03);
  Var<T> a = x, b = y, prod;
  for (int s = 0; s < scales; ++s) {
    Var<T> mu1 = separable_filter_valid(a, win), mu2 = separable_filter_valid(b, win);
    Var<T> mu1_sq = square(mu1), mu2_sq = square(mu2), mu12 = mul(mu1, mu2);
    Var<T> s1 = sub(separable_filter_valid(square(a), win), mu1_sq);
    Var<T> s2 = sub(separable_filter_valid(square(b), win), mu2_sq);
    Var<T> s12 = sub(separable_filter_valid(mul(a, b), win), mu12);
    Var<T> cs_map = div(add_scalar(mul_scalar(s12, T(2)), c2), add_scalar(add(s1, s2), c2));
    const T wgt = static_cast<T>(kMsssimWeights[s] / wsum);
    Var<T> term;
    if (s == scales - 1) {
      Var<T> l_map = div(add_scalar(mul_scalar(mu12, T(2)), c1), add_scalar(add(mu1_sq, mu2_sq), c1));
      term = pow_scalar(relu(channel_mean(mul(l_map, cs_map))), wgt);
    } else {
      term = pow_scalar(relu(channel_mean(cs_map)), wgt);
      a = avg_pool2(a, a.value().height() % 2, a.value().width() % 2);
      b = avg_pool2(b, b.value().height() % 2, b.value().width() % 2);
    }
    prod = prod.defined() ? mul(prod, term) : term;
  }
  return mean(prod);
}

template <typename T>
double ms_ssim_value(const Tensor<T>& x, const Tensor<T>& y) {
  NoGradGuard ng;
  return double(ms_ssim(Var<T>(x), Var<T>(y)).value()[0]);
}

// ---------------------------------------------------------------------------
// Rate-distortion curves

struct RDPoint {
  std::string label;
  int lambda_index = 0;
  double bpp = 0, psnr = 0, ms_ssim = 0, enc_ms = 0, dec_ms = 0;

  bool operator==(const RDPoint&) const = default;
};

enum class Quality { kPSNR, kMSSSIM };

struct RDCurve {
  std::string label;
  Quality quality = Quality::kPSNR;
  std::vector<std::pair<double, double>> points;  // (bpp, quality)

  static RDCurve from_points(const std::vector<RDPoint>& pts, Quality q) {
    RDCurve c;
    c.quality = q;
    if (!pts.empty()) c.label = pts.front().label;
    for (const auto& p : pts) c.points.emplace_back(p.bpp, q == Quality::kPSNR ? p.psnr : p.ms_ssim);
    std::sort(c.points.begin(), c.points.end());
    return c;
  }
};

inline constexpr const char* kCurveHeader = "label,lambda_index,bpp,psnr,ms_ssim,enc_ms,dec_ms";

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_curve_file(const std::string& path, const std::vector<RDPoint>& pts) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kCurveHeader << "\n";
  for (const auto& p : pts)
    out << p.label << ',' << p.lambda_index << ',' << format_double(p.bpp) << ',' << format_double(p.psnr) << ','
        << format_double(p.ms_ssim) << ',' << format_double(p.enc_ms) << ',' << format_double(p.dec_ms) << "\n";
}

inline std::vector<RDPoint> read_curve_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw std::runtime_error(path + ": missing curve header");
  std::vector<RDPoint> pts;
  int ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
    if (f.size() != 7) throw std::runtime_error(path + ":" + std::to_string(ln) + ": expected 7 fields");
    RDPoint p;
    p.label = f[0];
    p.lambda_index = std::stoi(f[1]);
    p.bpp = std::stod(f[2]);
    p.psnr = std::stod(f[3]);
    p.ms_ssim = std::stod(f[4]);
    p.enc_ms = std::stod(f[5]);
    p.dec_ms = std::stod(f[6]);
    pts.push_back(p);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// BD-rate: PCHIP of ln(rate) over quality, integrated over the common quality
// interval. Positive means the test curve spends more bits.

namespace detail {

/// Monotone piecewise-cubic Hermite slopes (Fritsch-Carlson with the
/// three-point end rule).
inline std::vector<double> pchip_slopes(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  std::vector<double> h(n - 1), d(n - 1), m(n, 0.0);
  for (size_t i = 0; i + 1 < n; ++i) {
    h[i] = x[i + 1] - x[i];
    d[i] = (y[i + 1] - y[i]) / h[i];
  }
  if (n == 2) return {d[0], d[0]};
  for (size_t i = 1; i + 1 < n; ++i) {
    if (d[i - 1] * d[i] <= 0) continue;
    const double w1 = 2 * h[i] + h[i - 1], w2 = h[i] + 2 * h[i - 1];
    m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
  }
  auto end = [](double h0, double h1, double d0, double d1) {
    double s = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (s * d0 <= 0) return 0.0;
    if (d0 * d1 <= 0 && std::abs(s) > std::abs(3 * d0)) return 3 * d0;
    return s;
  };
  m[0] = end(h[0], h[1], d[0], d[1]);
  m[n - 1] = end(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
  return m;
}

/// Integral of the PCHIP interpolant over [a, b] (within the data range).
inline double pchip_integral(const std::vector<double>& x, const std::vector<double>& y, double a, double b) {
  const auto m = pchip_slopes(x, y);
  double total = 0;
  for (size_t i = 0; i + 1 < x.size(); ++i) {
    const double lo = std::max(a, x[i]), hi = std::min(b, x[i + 1]);
    if (hi <= lo) continue;
    const double h = x[i + 1] - x[i];
    // Hermite basis integrated from t0 to t1 in local coordinates.
    auto prim = [&](double t) {
      const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
      const double h00 = t4 / 2 - t3 + t, h10 = t4 / 4 - 2 * t3 / 3 + t2 / 2, h01 = -t4 / 2 + t3,
                   h11 = t4 / 4 - t3 / 3;
      return h * (h00 * y[i] + h10 * h * m[i] + h01 * y[i + 1] + h11 * h * m[i + 1]);
    };
    total += prim((hi - x[i]) / h) - prim((lo - x[i]) / h);
  }
  return total;
}

}  // namespace detail

inline double bd_rate(const RDCurve& anchor, const RDCurve& test) {
  auto prep = [](const RDCurve& c, const char* who) {
    if (c.points.size() < 4) throw std::invalid_argument(std::string("bd_rate: ") + who + " curve needs >= 4 points");
    std::vector<std::pair<double, double>> q;  // (quality, ln rate)
    for (const auto& [r, v] : c.points) {
      if (!(r > 0)) throw std::invalid_argument(std::string("bd_rate: ") + who + " curve has non-positive rate");
      q.emplace_back(v, std::log(r));
    }
    std::sort(q.begin(), q.end());
    for (size_t i = 1; i < q.size(); ++i)
      if (q[i].first <= q[i - 1].first)
        throw std::invalid_argument(std::string("bd_rate: ") + who + " curve quality not strictly increasing");
    std::vector<double> x, y;
    for (auto& [a, b] : q) x.push_back(a), y.push_back(b);
    return std::pair{x, y};
  };
  auto [xa, ya] = prep(anchor, "anchor");
  auto [xt, yt] = prep(test, "test");
  const double lo = std::max(xa.front(), xt.front()), hi = std::min(xa.back(), xt.back());
  if (!(hi > lo)) {
    std::ostringstream os;
    os << "bd_rate: no quality overlap: anchor [" << xa.front() << ", " << xa.back() << "], test [" << xt.front()
       << ", " << xt.back() << "]";
    throw std::invalid_argument(os.str());
  }
  const double ia = detail::pchip_integral(xa, ya, lo, hi), it = detail::pchip_integral(xt, yt, lo, hi);
  return (std::exp((it - ia) / (hi - lo)) - 1.0) * 100.0;
}

}  // namespace lrvc
