#pragma once

// Decoder-side temporal modeling at low resolution: progressive motion
// decoding with deformable alignment of the reused features, multi-scale
// context fusion, and the temporal prior over buffered latents.

#include "lrvc/model/blocks.hpp"

namespace lrvc {

/// Offsets are bounded to +-(kernel radius * 4) pixels.
inline constexpr double kOffsetBound = 4.0;

/// Decodes the motion latent at 16x, 8x and 4x; at each scale the decoded
/// motion feature predicts offsets that align the matching reused feature.
/// With deformable alignment switched off, each scale instead predicts a
/// 2-channel flow and warps the feature (ablation).
template <typename T>
class MotionAligner {
 public:
  MotionAligner() = default;
  MotionAligner(const Scope<T>& s, const ModelConfig& cfg) : deformable_(cfg.use_deformable != 0) {
    const int m = cfg.motion_dec_channels, g = cfg.deform_groups;
    in_ = Conv2d<T>(s.sub("in"), cfg.mv_channels, m, 3);
    mid_ = Conv2d<T>(s.sub("mid"), m, m, 3);
    up8_ = SubpelUp<T>(s.sub("up8"), m, m);
    up4_ = SubpelUp<T>(s.sub("up4"), m, m);
    const std::array<int, 3> ch{cfg.ctx16_channels, cfg.ctx8_channels, cfg.ctx4_channels};
    const std::array<const char*, 3> tag{"s16", "s8", "s4"};
    for (int i = 0; i < 3; ++i) {
      const int oc = deformable_ ? g * 2 * DeformConv<T>::kKernel * DeformConv<T>::kKernel : 2;
      off_[i] = Conv2d<T>(s.sub(std::string(tag[i]) + ".offsets"), m, oc, 3, 1, T(0.1));
      if (deformable_) align_[i] = DeformConv<T>(s.sub(std::string(tag[i]) + ".align"), ch[i], ch[i], g);
    }
  }

  ReusedFeatures<T> operator()(const Var<T>& mv_hat, const ReusedFeatures<T>& ref) const {
    if (!ref.defined()) throw std::logic_error("decode_motion_and_align: no reused features in the decode state");
    Var<T> m = leaky_relu(mid_(leaky_relu(in_(mv_hat))));
    ReusedFeatures<T> out;
    out.f16 = align(0, m, ref.f16);
    m = leaky_relu(up8_(m));
    out.f8 = align(1, m, ref.f8);
    m = leaky_relu(up4_(m));
    out.f4 = align(2, m, ref.f4);
    return out;
  }

 private:
  Var<T> align(int i, const Var<T>& m, const Var<T>& feat) const {
    Var<T> o = mul_scalar(tanh(off_[i](m)), static_cast<T>(kOffsetBound));
    if (deformable_) return align_[i](feat, o);
    return warp(feat, o);
  }

  bool deformable_ = true;
  Conv2d<T> in_, mid_;
  SubpelUp<T> up8_, up4_;
  std::array<Conv2d<T>, 3> off_;
  std::array<DeformConv<T>, 3> align_;
};

/// Cross-scale fusion: a downward pass 4x -> 8x -> 16x merged by addition, an
/// upward pass 16x -> 8x -> 4x, and a residual merge with the aligned inputs.
template <typename T>
class ContextFusion {
 public:
  ContextFusion() = default;
  ContextFusion(const Scope<T>& s, const ModelConfig& cfg) {
    const int c4 = cfg.ctx4_channels, c8 = cfg.ctx8_channels, c16 = cfg.ctx16_channels;
    down8_ = Conv2d<T>(s.sub("down8"), c4, c8, 3, 2);
    down16_ = Conv2d<T>(s.sub("down16"), c8, c16, 3, 2);
    top_ = Conv2d<T>(s.sub("top"), c16, c16, 3);
    up8_ = SubpelUp<T>(s.sub("up8"), c16, c8);
    up4_ = SubpelUp<T>(s.sub("up4"), c8, c4);
    out8_ = Conv2d<T>(s.sub("out8"), c8, c8, 3);
    out4_ = Conv2d<T>(s.sub("out4"), c4, c4, 3);
  }

  MultiScaleContext<T> operator()(const ReusedFeatures<T>& a) const {
    Var<T> d8 = add(a.f8, down8_(a.f4));
    Var<T> d16 = add(a.f16, down16_(leaky_relu(d8)));
    Var<T> u16 = top_(leaky_relu(d16));
    Var<T> u8 = add(d8, up8_(leaky_relu(u16)));
    Var<T> u4 = add(a.f4, up4_(leaky_relu(u8)));
    MultiScaleContext<T> ctx;
    ctx.f16 = add(a.f16, u16);
    ctx.f8 = add(a.f8, out8_(leaky_relu(u8)));
    ctx.f4 = add(a.f4, out4_(leaky_relu(u4)));
    return ctx;
  }

 private:
  Conv2d<T> down8_, down16_, top_, out8_, out4_;
  SubpelUp<T> up8_, up4_;
};

/// Bottleneck blocks over the latent history (y_hat and mv_hat of the two
/// previous frames) at 16x. The output projection starts at zero, so an
/// untrained prior leaves the entropy heads as if it were absent.
template <typename T>
class TemporalPrior {
 public:
  TemporalPrior() = default;
  TemporalPrior(const Scope<T>& s, const ModelConfig& cfg)
      : enabled_(cfg.use_temporal_prior != 0), ch_(cfg.temporal_prior_channels) {
    in_ = Conv2d<T>(s.sub("in"), 2 * (cfg.latent_channels + cfg.mv_channels), ch_, 1);
    for (int i = 0; i < cfg.temporal_prior_blocks; ++i) blocks_.emplace_back(s.sub("block" + std::to_string(i)), ch_);
    out_ = Conv2d<T>(s.sub("out"), ch_, ch_, 1, 1, T(0));
  }

  int channels() const { return ch_; }

  /// history = {y t-1, y t-2, mv t-1, mv t-2}.
  Var<T> operator()(const std::array<Var<T>, 4>& history) const {
    const auto& s = history[0].shape();
    if (!enabled_) return Var<T>(Tensor<T>(ch_, s[1], s[2]));
    Var<T> h = in_(concat_channels<T>({history[0], history[1], history[2], history[3]}));
    for (const auto& b : blocks_) h = b(leaky_relu(h));
    return out_(leaky_relu(h));
  }

 private:
  bool enabled_ = true;
  int ch_ = 0;
  Conv2d<T> in_, out_;
  std::vector<BottleneckBlock<T>> blocks_;
};

}  // namespace lrvc
