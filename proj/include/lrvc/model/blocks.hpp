#pragma once

// Building blocks shared by the intra and inter codecs.

#include <vector>

#include "lrvc/core/layers.hpp"
#include "lrvc/model/config.hpp"

namespace lrvc {

/// Features at 4x, 8x and 16x downsampling. Used both for the decoder taps
/// reused by the next frame and for the temporal contexts derived from them.
template <typename T>
struct FeaturePyramid {
  Var<T> f4, f8, f16;

  bool defined() const { return f4.defined() && f8.defined() && f16.defined(); }
  FeaturePyramid detach() const { return {f4.detach(), f8.detach(), f16.detach()}; }
};

template <typename T>
using ReusedFeatures = FeaturePyramid<T>;
template <typename T>
using MultiScaleContext = FeaturePyramid<T>;

inline void require_multiple_of_64(const std::vector<int>& shape, const char* who) {
  if (shape.size() != 3 || shape[1] % 64 || shape[2] % 64 || shape[1] == 0 || shape[2] == 0)
    throw ShapeError(std::string(who) + ": input " + shape_str(shape) + " must be (C, H, W) with H, W multiples of 64");
}

/// Stride-2 convolution followed by residual blocks.
template <typename T>
class DownStage {
 public:
  DownStage() = default;
  DownStage(const Scope<T>& s, int cin, int cout, int blocks) : down_(s.sub("down"), cin, cout, 3, 2) {
    for (int i = 0; i < blocks; ++i) blocks_.emplace_back(s.sub("res" + std::to_string(i)), cout);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = down_(x);
    for (const auto& b : blocks_) h = b(h);
    return h;
  }

 private:
  Conv2d<T> down_;
  std::vector<ResBlock<T>> blocks_;
};

/// Hyper encoder: 16x latent to 64x hyper-latent.
template <typename T>
class HyperEncoder {
 public:
  HyperEncoder() = default;
  HyperEncoder(const Scope<T>& s, int cin, int cout)
      : a_(s.sub("conv1"), cin, cout, 3), b_(s.sub("conv2"), cout, cout, 3, 2), c_(s.sub("conv3"), cout, cout, 3, 2) {}

  Var<T> operator()(const Var<T>& y) const { return c_(leaky_relu(b_(leaky_relu(a_(y))))); }

 private:
  Conv2d<T> a_, b_, c_;
};

/// Hyper decoder: 64x hyper-latent back to 16x features.
template <typename T>
class HyperDecoder {
 public:
  HyperDecoder() = default;
  HyperDecoder(const Scope<T>& s, int cin, int cout)
      : a_(s.sub("up1"), cin, cin), b_(s.sub("up2"), cin, cout), c_(s.sub("conv"), cout, cout, 3) {}

  Var<T> operator()(const Var<T>& z) const { return c_(leaky_relu(b_(leaky_relu(a_(z))))); }

 private:
  SubpelUp<T> a_, b_;
  Conv2d<T> c_;
};

/// Soft saturation applied to reused-feature taps. Taps feed the next frame's
/// context and come back as taps again, so without a bound any loop gain
/// above one compounds past the training horizon.
inline constexpr double kFeatureBound = 8.0;

template <typename T>
Var<T> bound_features(const Var<T>& x) {
  const T s = static_cast<T>(kFeatureBound);
  return mul_scalar(tanh(mul_scalar(x, T(1) / s)), s);
}

/// Reconstruction decoder from a 16x latent. Bottleneck stages at 16x, 8x and
/// 4x, each optionally merging a temporal context; 1x1 adaptors tap each
/// stage's output as reusable features; a final stage of two sub-pixel
/// upsamplers returns to full resolution. No post-processing follows.
template <typename T>
class ReconDecoder {
 public:
  ReconDecoder() = default;
  ReconDecoder(const Scope<T>& s, const ModelConfig& cfg, int latent_channels, int width, int blocks, bool with_ctx)
      : with_ctx_(with_ctx) {
    const int c16 = with_ctx ? cfg.ctx16_channels : 0, c8 = with_ctx ? cfg.ctx8_channels : 0,
              c4 = with_ctx ? cfg.ctx4_channels : 0;
    in_ = Conv2d<T>(s.sub("in"), latent_channels + c16, width, 3);
    up8_ = SubpelUp<T>(s.sub("up8"), width, width);
    up4_ = SubpelUp<T>(s.sub("up4"), width, width);
    if (with_ctx) {
      merge8_ = Conv2d<T>(s.sub("merge8"), width + c8, width, 1);
      merge4_ = Conv2d<T>(s.sub("merge4"), width + c4, width, 1);
    }
    for (int i = 0; i < blocks; ++i) {
      b16_.emplace_back(s.sub("s16.block" + std::to_string(i)), width);
      b8_.emplace_back(s.sub("s8.block" + std::to_string(i)), width);
      b4_.emplace_back(s.sub("s4.block" + std::to_string(i)), width);
    }
    tap16_ = Conv2d<T>(s.sub("adapt16"), width, cfg.ctx16_channels, 1);
    tap8_ = Conv2d<T>(s.sub("adapt8"), width, cfg.ctx8_channels, 1);
    tap4_ = Conv2d<T>(s.sub("adapt4"), width, cfg.ctx4_channels, 1);
    const int half = std::max(4, width / 2);
    final_a_ = SubpelUp<T>(s.sub("final.up2"), width, half);
    final_b_ = SubpelUp<T>(s.sub("final.up1"), half, 3);
  }

  /// Returns the clipped reconstruction and the reusable feature taps.
  std::pair<Var<T>, ReusedFeatures<T>> operator()(const Var<T>& y_hat, const MultiScaleContext<T>* ctx) const {
    Var<T> h = in_(with_ctx_ ? concat_channels<T>({y_hat, ctx->f16}) : y_hat);
    for (const auto& b : b16_) h = b(h);
    ReusedFeatures<T> taps;
    taps.f16 = bound_features(tap16_(h));
    h = up8_(leaky_relu(h));
    if (with_ctx_) h = merge8_(concat_channels<T>({h, ctx->f8}));
    for (const auto& b : b8_) h = b(h);
    taps.f8 = bound_features(tap8_(h));
    h = up4_(leaky_relu(h));
    if (with_ctx_) h = merge4_(concat_channels<T>({h, ctx->f4}));
    for (const auto& b : b4_) h = b(h);
    taps.f4 = bound_features(tap4_(h));
    Var<T> x;
    {
      ScopedStage stage{std::string(kFinalReconstructionStage)};
      x = final_b_(leaky_relu(final_a_(leaky_relu(h))));
      x = clamp_ste(add_scalar(x, T(0.5)), T(0), T(1));
    }
    return {x, taps};
  }

 private:
  bool with_ctx_ = false;
  Conv2d<T> in_, merge8_, merge4_, tap16_, tap8_, tap4_;
  SubpelUp<T> up8_, up4_, final_a_, final_b_;
  std::vector<BottleneckBlock<T>> b16_, b8_, b4_;
};

}  // namespace lrvc
