#pragma once

// Differentiable operations on (C, H, W) feature maps.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <limits>

#include "lrvc/core/autograd.hpp"

namespace lrvc {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

namespace detail {

template <typename T>
void require_rank3(const Tensor<T>& t, const char* op) {
  if (t.rank() != 3) throw ShapeError(std::string(op) + ": expected (C, H, W), got " + shape_str(t.shape()));
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  const auto& x = a.value();
  Tensor<T> y = Tensor<T>::like(x);
  for (size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  auto na = a.node();
  auto yv = std::make_shared<Tensor<T>>(y);
  return make_result<T>(std::move(y), {na}, [na, yv, df](const Tensor<T>& g) {
    auto& ga = na->grad_buffer();
    const auto& xv = na->value;
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], (*yv)[i]);
  });
}

/// Bilinear tap with replicate border: positions are clamped into the image.
template <typename T>
struct BilinearTap {
  int x0, x1, y0, y1;
  T fx, fy;
  bool free_x, free_y;  // false when clamped (zero positional gradient)

  BilinearTap(T sx, T sy, int w, int h) {
    // Non-finite positions would index out of bounds; pin them to the origin.
    if (std::isnan(sx)) sx = T(0);
    if (std::isnan(sy)) sy = T(0);
    free_x = sx > T(0) && sx < T(w - 1);
    free_y = sy > T(0) && sy < T(h - 1);
    T cx = std::clamp(sx, T(0), T(w - 1));
    T cy = std::clamp(sy, T(0), T(h - 1));
    x0 = static_cast<int>(std::floor(cx));
    y0 = static_cast<int>(std::floor(cy));
    x1 = std::min(x0 + 1, w - 1);
    y1 = std::min(y0 + 1, h - 1);
    fx = cx - T(x0);
    fy = cy - T(y0);
  }

  T sample(const T* img, int w) const {
    T v00 = img[y0 * w + x0], v01 = img[y0 * w + x1];
    T v10 = img[y1 * w + x0], v11 = img[y1 * w + x1];
    return (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) + fy * ((T(1) - fx) * v10 + fx * v11);
  }

  void scatter(T* gimg, int w, T g) const {
    gimg[y0 * w + x0] += g * (T(1) - fy) * (T(1) - fx);
    gimg[y0 * w + x1] += g * (T(1) - fy) * fx;
    gimg[y1 * w + x0] += g * fy * (T(1) - fx);
    gimg[y1 * w + x1] += g * fy * fx;
  }

  T d_dx(const T* img, int w) const {
    if (!free_x) return T(0);
    T v00 = img[y0 * w + x0], v01 = img[y0 * w + x1];
    T v10 = img[y1 * w + x0], v11 = img[y1 * w + x1];
    return (T(1) - fy) * (v01 - v00) + fy * (v11 - v10);
  }

  T d_dy(const T* img, int w) const {
    if (!free_y) return T(0);
    T v00 = img[y0 * w + x0], v01 = img[y0 * w + x1];
    T v10 = img[y1 * w + x0], v11 = img[y1 * w + x1];
    return (T(1) - fx) * (v10 - v00) + fx * (v11 - v01);
  }
};

template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, int ho, int wo, T* cols) {
  const int c = x.channels(), h = x.height(), w = x.width();
  const size_t n = static_cast<size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    const T* src = x.channel_ptr(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<size_t>(ci) * k * k + ky * k + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* srow = src + static_cast<size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int k, int stride, int pad, int ho, int wo, Tensor<T>& gx) {
  const int c = gx.channels(), h = gx.height(), w = gx.width();
  const size_t n = static_cast<size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    T* dst = gx.channel_ptr(ci);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<size_t>(ci) * k * k + ky * k + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* drow = dst + static_cast<size_t>(iy) * w;
          const T* srow = row + static_cast<size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a.value().check_same(b.value(), "add");
  Tensor<T> y = a.value();
  y += b.value();
  auto na = a.node(), nb = b.node();
  return make_result<T>(std::move(y), {na, nb}, [na, nb](const Tensor<T>& g) {
    if (na->requires_grad) na->grad_buffer() += g;
    if (nb->requires_grad) nb->grad_buffer() += g;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a.value().check_same(b.value(), "sub");
  Tensor<T> y = a.value();
  for (size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  auto na = a.node(), nb = b.node();
  return make_result<T>(std::move(y), {na, nb}, [na, nb](const Tensor<T>& g) {
    if (na->requires_grad) na->grad_buffer() += g;
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  a.value().check_same(b.value(), "mul");
  Tensor<T> y = a.value();
  for (size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  auto na = a.node(), nb = b.node();
  return make_result<T>(std::move(y), {na, nb}, [na, nb](const Tensor<T>& g) {
    if (na->requires_grad) {
      auto& ga = na->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nb->value[i];
    }
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * na->value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  a.value().check_same(b.value(), "div");
  Tensor<T> y = a.value();
  for (size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  auto na = a.node(), nb = b.node();
  return make_result<T>(std::move(y), {na, nb}, [na, nb](const Tensor<T>& g) {
    if (na->requires_grad) {
      auto& ga = na->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / nb->value[i];
    }
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) {
        T bv = nb->value[i];
        gb[i] -= g[i] * na->value[i] / (bv * bv);
      }
    }
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.1)) {
  return detail::unary(
      a, [slope](T x) { return x > T(0) ? x : slope * x; }, [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

/// x^p for x > 0.
template <typename T>
Var<T> pow_scalar(const Var<T>& a, T p) {
  return detail::unary(
      a, [p](T x) { return std::pow(x, p); },
      [p](T x, T y) { return x > T(0) ? p * y / x : T(0); });
}

/// Clamp with zero gradient outside [lo, hi].
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return detail::unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

/// Clamps in the forward pass; the gradient passes through unchanged.
template <typename T>
Var<T> clamp_ste(const Var<T>& a, T lo, T hi) {
  return detail::unary(a, [lo, hi](T x) { return std::clamp(x, lo, hi); }, [](T, T) { return T(1); });
}

/// Rounds half away from zero; passes the gradient straight through.
template <typename T>
Var<T> ste_round(const Var<T>& a) {
  return detail::unary(a, [](T x) { return std::round(x); }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  auto na = a.node();
  return make_result<T>(Tensor<T>::scalar(a.value().sum()), {na}, [na](const Tensor<T>& g) {
    auto& ga = na->grad_buffer();
    for (auto& v : ga.vec()) v += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.value().size()));
}

/// Mean squared error between same-shaped tensors.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  a.value().check_same(b.value(), "mse");
  const size_t n = a.value().size();
  T acc = 0;
  for (size_t i = 0; i < n; ++i) {
    T d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  auto na = a.node(), nb = b.node();
  return make_result<T>(Tensor<T>::scalar(acc / T(n)), {na, nb}, [na, nb, n](const Tensor<T>& g) {
    T s = T(2) * g[0] / T(n);
    if (na->requires_grad) {
      auto& ga = na->grad_buffer();
      for (size_t i = 0; i < n; ++i) ga[i] += s * (na->value[i] - nb->value[i]);
    }
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (size_t i = 0; i < n; ++i) gb[i] -= s * (na->value[i] - nb->value[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Channel plumbing

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const int h = parts[0].value().height(), w = parts[0].value().width();
  int c = 0;
  for (const auto& p : parts) {
    detail::require_rank3(p.value(), "concat_channels");
    if (p.value().height() != h || p.value().width() != w)
      throw ShapeError("concat_channels: spatial mismatch " + shape_str(p.shape()));
    c += p.value().channels();
  }
  Tensor<T> y(c, h, w);
  std::vector<std::shared_ptr<Node<T>>> nodes;
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().vec().begin(), p.value().vec().end(), y.vec().begin() + off);
    off += p.value().size();
    nodes.push_back(p.node());
  }
  return make_result<T>(std::move(y), nodes, [nodes](const Tensor<T>& g) {
    size_t o = 0;
    for (const auto& n : nodes) {
      const size_t sz = n->value.size();
      if (n->requires_grad) {
        auto& gn = n->grad_buffer();
        for (size_t i = 0; i < sz; ++i) gn[i] += g[o + i];
      }
      o += sz;
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& a, int begin, int count) {
  const auto& x = a.value();
  detail::require_rank3(x, "slice_channels");
  if (begin < 0 || count < 0 || begin + count > x.channels())
    throw ShapeError("slice_channels: range out of bounds for " + shape_str(x.shape()));
  Tensor<T> y(count, x.height(), x.width());
  const size_t off = static_cast<size_t>(begin) * x.plane();
  std::copy(x.vec().begin() + off, x.vec().begin() + off + y.size(), y.vec().begin());
  auto na = a.node();
  return make_result<T>(std::move(y), {na}, [na, off](const Tensor<T>& g) {
    auto& ga = na->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

/// Broadcasts a (C) vector over (C, H, W).
template <typename T>
Var<T> expand_channels(const Var<T>& v, int h, int w) {
  const int c = static_cast<int>(v.value().size());
  Tensor<T> y(c, h, w);
  for (int ci = 0; ci < c; ++ci) std::fill(y.channel_ptr(ci), y.channel_ptr(ci) + y.plane(), v.value()[ci]);
  auto nv = v.node();
  const size_t plane = static_cast<size_t>(h) * w;
  return make_result<T>(std::move(y), {nv}, [nv, c, plane](const Tensor<T>& g) {
    auto& gv = nv->grad_buffer();
    for (int ci = 0; ci < c; ++ci) {
      T acc = 0;
      for (size_t i = 0; i < plane; ++i) acc += g[ci * plane + i];
      gv[ci] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and resampling

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// 2-D convolution. weight (Cout, Cin, K, K); bias (Cout) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  detail::require_rank3(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(1) != xv.channels() || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  const int cout = wv.dim(0), cin = wv.dim(1), k = wv.dim(2);
  const int ho = conv_out_size(xv.height(), k, stride, pad);
  const int wo = conv_out_size(xv.width(), k, stride, pad);
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input too small " + shape_str(xv.shape()));
  const int kk = cin * k * k;
  const size_t n = static_cast<size_t>(ho) * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  Tensor<T> y(cout, ho, wo);
  auto cols = std::make_shared<AlignedVector<T>>();
  if (!dry_run()) {
    const T* colp = xv.data();
    if (!direct) {
      cols->resize(static_cast<size_t>(kk) * n);
      detail::im2col(xv, k, stride, pad, ho, wo, cols->data());
      colp = cols->data();
    }
    CMapRM<T> W(wv.data(), cout, kk);
    CMapRM<T> C(colp, kk, n);
    MapRM<T> Y(y.data(), cout, n);
    Y.noalias() = W * C;
    if (bias.defined())
      for (int o = 0; o < cout; ++o) Y.row(o).array() += bias.value()[o];
  }
  auto nx = x.node(), nw = weight.node();
  std::vector<std::shared_ptr<Node<T>>> parents{nx, nw};
  auto nb = bias.defined() ? bias.node() : nullptr;
  if (nb) parents.push_back(nb);
  if (direct) cols = nullptr;
  return make_result<T>(std::move(y), parents, [=](const Tensor<T>& g) {
    CMapRM<T> G(g.data(), cout, n);
    const T* colp = direct ? nx->value.data() : cols->data();
    if (nw->requires_grad) {
      MapRM<T> GW(nw->grad_buffer().data(), cout, kk);
      GW.noalias() += G * CMapRM<T>(colp, kk, n).transpose();
    }
    if (nb && nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (int o = 0; o < cout; ++o) gb[o] += G.row(o).sum();
    }
    if (nx->requires_grad) {
      CMapRM<T> W(nw->value.data(), cout, kk);
      if (direct) {
        MapRM<T> GX(nx->grad_buffer().data(), kk, n);
        GX.noalias() += W.transpose() * G;
      } else {
        AlignedVector<T> gcols(static_cast<size_t>(kk) * n);
        MapRM<T> GC(gcols.data(), kk, n);
        GC.noalias() = W.transpose() * G;
        detail::col2im(gcols.data(), k, stride, pad, ho, wo, nx->grad_buffer());
      }
    }
  });
}

/// Deformable convolution (stride 1, "same" padding). offsets has
/// groups * 2 * K * K channels laid out as [(g * K*K + tap) * 2 + {0: dx, 1: dy}];
/// input channels are split into `groups` contiguous groups sharing offsets.
/// Sampling is bilinear with replicated borders.
template <typename T>
Var<T> deform_conv2d(const Var<T>& x, const Var<T>& offsets, const Var<T>& weight, const Var<T>& bias,
                     int groups) {
  const auto& xv = x.value();
  const auto& ov = offsets.value();
  const auto& wv = weight.value();
  detail::require_rank3(xv, "deform_conv2d");
  detail::require_rank3(ov, "deform_conv2d");
  if (wv.rank() != 4 || wv.dim(1) != xv.channels() || wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0)
    throw ShapeError("deform_conv2d: weight " + shape_str(wv.shape()) + " incompatible with " +
                     shape_str(xv.shape()));
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  const int k = wv.dim(2), taps = k * k, r = k / 2, cout = wv.dim(0);
  if (groups <= 0 || c % groups != 0)
    throw ShapeError("deform_conv2d: channels " + std::to_string(c) + " not divisible by groups " +
                     std::to_string(groups));
  if (ov.channels() != groups * 2 * taps)
    throw ShapeError("deform_conv2d: offsets need " + std::to_string(groups * 2 * taps) + " channels, got " +
                     std::to_string(ov.channels()));
  if (ov.height() != h || ov.width() != w) throw ShapeError("deform_conv2d: offsets spatial mismatch");
  const int cpg = c / groups;
  const size_t n = static_cast<size_t>(h) * w;
  const int kk = c * taps;

  Tensor<T> y(cout, h, w);
  auto cols = std::make_shared<AlignedVector<T>>();
  if (!dry_run()) {
    cols->resize(static_cast<size_t>(kk) * n);
    for (int ci = 0; ci < c; ++ci) {
      const int g = ci / cpg;
      const T* src = xv.channel_ptr(ci);
      for (int t = 0; t < taps; ++t) {
        const T* odx = ov.channel_ptr((g * taps + t) * 2);
        const T* ody = ov.channel_ptr((g * taps + t) * 2 + 1);
        const int ky = t / k - r, kx = t % k - r;
        T* row = cols->data() + (static_cast<size_t>(ci) * taps + t) * n;
        for (int py = 0; py < h; ++py)
          for (int px = 0; px < w; ++px) {
            size_t p = static_cast<size_t>(py) * w + px;
            detail::BilinearTap<T> tap(T(px + kx) + odx[p], T(py + ky) + ody[p], w, h);
            row[p] = tap.sample(src, w);
          }
      }
    }
    CMapRM<T> W(wv.data(), cout, kk);
    MapRM<T> Y(y.data(), cout, n);
    Y.noalias() = W * CMapRM<T>(cols->data(), kk, n);
    if (bias.defined())
      for (int o = 0; o < cout; ++o) Y.row(o).array() += bias.value()[o];
  }
  auto nx = x.node(), no = offsets.node(), nw = weight.node();
  auto nb = bias.defined() ? bias.node() : nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents{nx, no, nw};
  if (nb) parents.push_back(nb);
  return make_result<T>(std::move(y), parents, [=](const Tensor<T>& g) {
    CMapRM<T> G(g.data(), cout, n);
    if (nw->requires_grad) {
      MapRM<T> GW(nw->grad_buffer().data(), cout, kk);
      GW.noalias() += G * CMapRM<T>(cols->data(), kk, n).transpose();
    }
    if (nb && nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (int o = 0; o < cout; ++o) gb[o] += G.row(o).sum();
    }
    if (!nx->requires_grad && !no->requires_grad) return;
    AlignedVector<T> gcols(static_cast<size_t>(kk) * n);
    MapRM<T> GC(gcols.data(), kk, n);
    GC.noalias() = CMapRM<T>(nw->value.data(), cout, kk).transpose() * G;
    const auto& xin = nx->value;
    const auto& off = no->value;
    Tensor<T>* gx = nx->requires_grad ? &nx->grad_buffer() : nullptr;
    Tensor<T>* go = no->requires_grad ? &no->grad_buffer() : nullptr;
    for (int ci = 0; ci < c; ++ci) {
      const int grp = ci / cpg;
      const T* src = xin.channel_ptr(ci);
      for (int t = 0; t < taps; ++t) {
        const int odx_c = (grp * taps + t) * 2;
        const T* odx = off.channel_ptr(odx_c);
        const T* ody = off.channel_ptr(odx_c + 1);
        const int ky = t / k - r, kx = t % k - r;
        const T* grow = gcols.data() + (static_cast<size_t>(ci) * taps + t) * n;
        for (int py = 0; py < h; ++py)
          for (int px = 0; px < w; ++px) {
            size_t p = static_cast<size_t>(py) * w + px;
            T gv = grow[p];
            if (gv == T(0)) continue;
            detail::BilinearTap<T> tap(T(px + kx) + odx[p], T(py + ky) + ody[p], w, h);
            if (gx) tap.scatter(gx->channel_ptr(ci), w, gv);
            if (go) {
              go->channel_ptr(odx_c)[p] += gv * tap.d_dx(src, w);
              go->channel_ptr(odx_c + 1)[p] += gv * tap.d_dy(src, w);
            }
          }
      }
    }
  });
}

/// Backward warp: out(c, y, x) = image(c, y + flow_y, x + flow_x), bilinear
/// with replicated borders. flow channel 0 is the horizontal displacement.
template <typename T>
Var<T> warp(const Var<T>& image, const Var<T>& flow) {
  const auto& iv = image.value();
  const auto& fv = flow.value();
  detail::require_rank3(iv, "warp");
  detail::require_rank3(fv, "warp");
  if (fv.channels() != 2 || fv.height() != iv.height() || fv.width() != iv.width())
    throw ShapeError("warp: flow " + shape_str(fv.shape()) + " does not match image " + shape_str(iv.shape()));
  const int c = iv.channels(), h = iv.height(), w = iv.width();
  Tensor<T> y(c, h, w);
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      detail::BilinearTap<T> tap(T(px) + fv.at(0, py, px), T(py) + fv.at(1, py, px), w, h);
      for (int ci = 0; ci < c; ++ci) y.at(ci, py, px) = tap.sample(iv.channel_ptr(ci), w);
    }
  auto ni = image.node(), nf = flow.node();
  return make_result<T>(std::move(y), {ni, nf}, [ni, nf, c, h, w](const Tensor<T>& g) {
    const auto& img = ni->value;
    const auto& fl = nf->value;
    Tensor<T>* gi = ni->requires_grad ? &ni->grad_buffer() : nullptr;
    Tensor<T>* gf = nf->requires_grad ? &nf->grad_buffer() : nullptr;
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < w; ++px) {
        detail::BilinearTap<T> tap(T(px) + fl.at(0, py, px), T(py) + fl.at(1, py, px), w, h);
        T gx = 0, gy = 0;
        for (int ci = 0; ci < c; ++ci) {
          T gv = g.at(ci, py, px);
          if (gi) tap.scatter(gi->channel_ptr(ci), w, gv);
          if (gf) {
            gx += gv * tap.d_dx(img.channel_ptr(ci), w);
            gy += gv * tap.d_dy(img.channel_ptr(ci), w);
          }
        }
        if (gf) {
          gf->at(0, py, px) += gx;
          gf->at(1, py, px) += gy;
        }
      }
  });
}

/// (4C, H, W) -> (C, 2H, 2W).
template <typename T>
Var<T> pixel_shuffle2(const Var<T>& a) {
  const auto& x = a.value();
  detail::require_rank3(x, "pixel_shuffle2");
  if (x.channels() % 4) throw ShapeError("pixel_shuffle2: channels not divisible by 4");
  const int c = x.channels() / 4, h = x.height(), w = x.width();
  Tensor<T> y(c, 2 * h, 2 * w);
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int py = 0; py < h; ++py)
          for (int px = 0; px < w; ++px) y.at(ci, 2 * py + i, 2 * px + j) = x.at(ci * 4 + i * 2 + j, py, px);
  auto na = a.node();
  return make_result<T>(std::move(y), {na}, [na, c, h, w](const Tensor<T>& g) {
    auto& ga = na->grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          for (int py = 0; py < h; ++py)
            for (int px = 0; px < w; ++px) ga.at(ci * 4 + i * 2 + j, py, px) += g.at(ci, 2 * py + i, 2 * px + j);
  });
}

/// 2x2 average pooling with stride 2. A pad of 1 on an axis adds one zero row
/// (column) on each side, counted in the average.
template <typename T>
Var<T> avg_pool2(const Var<T>& a, int pad_y = 0, int pad_x = 0) {
  const auto& x = a.value();
  detail::require_rank3(x, "avg_pool2");
  const int c = x.channels(), h = x.height(), w = x.width();
  const int ho = (h + 2 * pad_y - 2) / 2 + 1, wo = (w + 2 * pad_x - 2) / 2 + 1;
  Tensor<T> y(c, ho, wo);
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        T acc = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int iy = 2 * oy - pad_y + dy, ix = 2 * ox - pad_x + dx;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) acc += x.at(ci, iy, ix);
          }
        y.at(ci, oy, ox) = acc * T(0.25);
      }
  auto na = a.node();
  return make_result<T>(std::move(y), {na}, [=](const Tensor<T>& g) {
    auto& ga = na->grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              int iy = 2 * oy - pad_y + dy, ix = 2 * ox - pad_x + dx;
              if (iy >= 0 && iy < h && ix >= 0 && ix < w) ga.at(ci, iy, ix) += T(0.25) * g.at(ci, oy, ox);
            }
  });
}

/// Bilinear 2x upsampling (half-pixel centres, edge clamped), times `scale`.
template <typename T>
Var<T> upsample_bilinear2(const Var<T>& a, T scale = T(1)) {
  const auto& x = a.value();
  detail::require_rank3(x, "upsample_bilinear2");
  const int c = x.channels(), h = x.height(), w = x.width();
  Tensor<T> y(c, 2 * h, 2 * w);
  auto src = [](int o, int n, int& i0, int& i1, T& f) {
    T s = std::max(T(0), (T(o) + T(0.5)) / T(2) - T(0.5));
    i0 = std::min(static_cast<int>(s), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    f = s - T(i0);
  };
  for (int oy = 0; oy < 2 * h; ++oy) {
    int y0, y1;
    T fy;
    src(oy, h, y0, y1, fy);
    for (int ox = 0; ox < 2 * w; ++ox) {
      int x0, x1;
      T fx;
      src(ox, w, x0, x1, fx);
      for (int ci = 0; ci < c; ++ci)
        y.at(ci, oy, ox) = scale * ((T(1) - fy) * ((T(1) - fx) * x.at(ci, y0, x0) + fx * x.at(ci, y0, x1)) +
                                    fy * ((T(1) - fx) * x.at(ci, y1, x0) + fx * x.at(ci, y1, x1)));
    }
  }
  auto na = a.node();
  return make_result<T>(std::move(y), {na}, [=](const Tensor<T>& g) {
    auto& ga = na->grad_buffer();
    for (int oy = 0; oy < 2 * h; ++oy) {
      int y0, y1;
      T fy;
      src(oy, h, y0, y1, fy);
      for (int ox = 0; ox < 2 * w; ++ox) {
        int x0, x1;
        T fx;
        src(ox, w, x0, x1, fx);
        for (int ci = 0; ci < c; ++ci) {
          T gv = scale * g.at(ci, oy, ox);
          ga.at(ci, y0, x0) += gv * (T(1) - fy) * (T(1) - fx);
          ga.at(ci, y0, x1) += gv * (T(1) - fy) * fx;
          ga.at(ci, y1, x0) += gv * fy * (T(1) - fx);
          ga.at(ci, y1, x1) += gv * fy * fx;
        }
      }
    }
  });
}

/// Separable per-channel filter with "valid" extent. An axis shorter than the
/// kernel is left unfiltered.
template <typename T>
Var<T> separable_filter_valid(const Var<T>& a, const std::vector<T>& kernel) {
  const auto& x = a.value();
  detail::require_rank3(x, "separable_filter_valid");
  const int c = x.channels(), h = x.height(), w = x.width(), k = static_cast<int>(kernel.size());
  const bool fx = w >= k, fy = h >= k;
  const int wo = fx ? w - k + 1 : w, ho = fy ? h - k + 1 : h;
  Tensor<T> mid(c, h, wo);
  for (int ci = 0; ci < c; ++ci)
    for (int py = 0; py < h; ++py)
      for (int px = 0; px < wo; ++px) {
        if (!fx) {
          mid.at(ci, py, px) = x.at(ci, py, px);
          continue;
        }
        T acc = 0;
        for (int i = 0; i < k; ++i) acc += kernel[i] * x.at(ci, py, px + i);
        mid.at(ci, py, px) = acc;
      }
  Tensor<T> y(c, ho, wo);
  for (int ci = 0; ci < c; ++ci)
    for (int py = 0; py < ho; ++py)
      for (int px = 0; px < wo; ++px) {
        if (!fy) {
          y.at(ci, py, px) = mid.at(ci, py, px);
          continue;
        }
        T acc = 0;
        for (int i = 0; i < k; ++i) acc += kernel[i] * mid.at(ci, py + i, px);
        y.at(ci, py, px) = acc;
      }
  auto na = a.node();
  return make_result<T>(std::move(y), {na}, [=](const Tensor<T>& g) {
    Tensor<T> gmid(c, h, wo);
    for (int ci = 0; ci < c; ++ci)
      for (int py = 0; py < ho; ++py)
        for (int px = 0; px < wo; ++px) {
          if (!fy) {
            gmid.at(ci, py, px) += g.at(ci, py, px);
            continue;
          }
          for (int i = 0; i < k; ++i) gmid.at(ci, py + i, px) += kernel[i] * g.at(ci, py, px);
        }
    auto& ga = na->grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (int py = 0; py < h; ++py)
        for (int px = 0; px < wo; ++px) {
          if (!fx) {
            ga.at(ci, py, px) += gmid.at(ci, py, px);
            continue;
          }
          for (int i = 0; i < k; ++i) ga.at(ci, py, px + i) += kernel[i] * gmid.at(ci, py, px);
        }
  });
}

/// Per-channel spatial mean: (C, H, W) -> (C).
template <typename T>
Var<T> channel_mean(const Var<T>& a) {
  const auto& x = a.value();
  detail::require_rank3(x, "channel_mean");
  const int c = x.channels();
  const size_t plane = x.plane();
  Tensor<T> y(std::vector<int>{c});
  for (int ci = 0; ci < c; ++ci) {
    T acc = 0;
    for (size_t i = 0; i < plane; ++i) acc += x.channel_ptr(ci)[i];
    y[ci] = acc / T(plane);
  }
  auto na = a.node();
  return make_result<T>(std::move(y), {na}, [na, c, plane](const Tensor<T>& g) {
    auto& ga = na->grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (size_t i = 0; i < plane; ++i) ga.channel_ptr(ci)[i] += g[ci] / T(plane);
  });
}

// ---------------------------------------------------------------------------
// Laplace rate

/// Laplace CDF at x for location mu and scale b.
template <typename T>
T laplace_cdf(T x, T mu, T b) {
  T d = x - mu;
  return d < T(0) ? T(0.5) * std::exp(d / b) : T(1) - T(0.5) * std::exp(-d / b);
}

/// Mass of the unit bin centred at v: F(v + 1/2) - F(v - 1/2), computed
/// without cancellation in the tails.
template <typename T>
T laplace_bin_mass(T v, T mu, T b) {
  T u = v + T(0.5) - mu, l = v - T(0.5) - mu;
  if (l >= T(0)) return T(0.5) * (std::exp(-l / b) - std::exp(-u / b));
  if (u <= T(0)) return T(0.5) * (std::exp(u / b) - std::exp(l / b));
  return T(1) - T(0.5) * (std::exp(-u / b) + std::exp(l / b));
}

/// Lower bound on training-time bin likelihoods.
inline constexpr double kLikelihoodFloor = 1e-9;

/// Elementwise bits -log2(P(bin at v)) under Laplace(mu, b). Below the floor
/// the value saturates but the gradient still pushes the mass upward.
template <typename T>
Var<T> laplace_bits(const Var<T>& v, const Var<T>& mu, const Var<T>& b) {
  v.value().check_same(mu.value(), "laplace_bits");
  v.value().check_same(b.value(), "laplace_bits");
  const size_t n = v.value().size();
  Tensor<T> y = Tensor<T>::like(v.value());
  const T floor = static_cast<T>(kLikelihoodFloor);
  for (size_t i = 0; i < n; ++i) {
    T p = laplace_bin_mass(v.value()[i], mu.value()[i], b.value()[i]);
    y[i] = -std::log2(std::max(p, floor));
  }
  auto nv = v.node(), nm = mu.node(), nb = b.node();
  return make_result<T>(std::move(y), {nv, nm, nb}, [nv, nm, nb, n, floor](const Tensor<T>& g) {
    const T inv_ln2 = T(1) / std::log(T(2));
    Tensor<T>* gv = nv->requires_grad ? &nv->grad_buffer() : nullptr;
    Tensor<T>* gm = nm->requires_grad ? &nm->grad_buffer() : nullptr;
    Tensor<T>* gb = nb->requires_grad ? &nb->grad_buffer() : nullptr;
    for (size_t i = 0; i < n; ++i) {
      T vv = nv->value[i], m = nm->value[i], s = nb->value[i];
      T p = std::max(laplace_bin_mass(vv, m, s), floor);
      T du = vv + T(0.5) - m, dl = vv - T(0.5) - m;
      T eu = std::exp(-std::abs(du) / s), el = std::exp(-std::abs(dl) / s);
      T pdf_u = eu / (T(2) * s), pdf_l = el / (T(2) * s);
      // dF/db at d: -(d / (2 b^2)) exp(-|d| / b)
      T dFb_u = -du * eu / (T(2) * s * s), dFb_l = -dl * el / (T(2) * s * s);
      T dLdp = -g[i] * inv_ln2 / p;
      if (gv) (*gv)[i] += dLdp * (pdf_u - pdf_l);
      if (gm) (*gm)[i] += dLdp * (pdf_l - pdf_u);
      if (gb) (*gb)[i] += dLdp * (dFb_u - dFb_l);
    }
  });
}

}  // namespace lrvc
