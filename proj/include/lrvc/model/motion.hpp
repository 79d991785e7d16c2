#pragma once

// Encoder-side motion: pyramid flow estimation, UNet refinement, feature-level
// motion offsets and the motion encoder conditioned on multi-frame priors.

#include "lrvc/model/blocks.hpp"

namespace lrvc {

/// Coarse-to-fine flow estimator. Each level predicts a residual flow from
/// (target, warped reference, current flow); the last conv of each level
/// starts at zero so an untrained estimator returns zero motion.
template <typename T>
class FlowEstimator {
 public:
  FlowEstimator() = default;
  FlowEstimator(const Scope<T>& s, int levels, int ch) : levels_(levels) {
    for (int l = 0; l < levels; ++l) {
      auto sl = s.sub("level" + std::to_string(l));
      nets_.push_back({Conv2d<T>(sl.sub("conv1"), 8, ch, 3), Conv2d<T>(sl.sub("conv2"), ch, ch, 3),
                       Conv2d<T>(sl.sub("conv3"), ch, 2, 3, 1, T(0))});
    }
  }

  int levels() const { return levels_; }

  /// Flow (2, H, W) with out(y, x) = ref(y + flow_y, x + flow_x) ~ x_t(y, x).
  Var<T> operator()(const Var<T>& x, const Var<T>& ref) const {
    if (x.shape() != ref.shape())
      throw ShapeError("estimate_flow: " + shape_str(x.shape()) + " vs " + shape_str(ref.shape()));
    std::vector<Var<T>> xs{x}, rs{ref};
    for (int l = 1; l < levels_; ++l) {
      xs.push_back(avg_pool2(xs.back()));
      rs.push_back(avg_pool2(rs.back()));
    }
    const auto& coarse = xs.back().value();
    Var<T> flow(Tensor<T>(2, coarse.height(), coarse.width()));
    for (int l = levels_ - 1; l >= 0; --l) {
      if (l != levels_ - 1) flow = upsample_bilinear2(flow, T(2));
      Var<T> warped = warp(rs[l], flow);
      const auto& n = nets_[l];
      Var<T> h = leaky_relu(n[0](concat_channels<T>({xs[l], warped, flow})));
      flow = add(flow, n[2](leaky_relu(n[1](h))));
    }
    return flow;
  }

 private:
  int levels_ = 0;
  std::vector<std::array<Conv2d<T>, 3>> nets_;
};

/// Full-resolution UNet over (flow, warped reference, target) producing the
/// refined motion feature.
template <typename T>
class MotionRefineUNet {
 public:
  MotionRefineUNet() = default;
  MotionRefineUNet(const Scope<T>& s, int ch, int out_ch) : out_ch_(out_ch) {
    e1_ = Conv2d<T>(s.sub("enc1"), 8, ch, 3);
    e2_ = Conv2d<T>(s.sub("enc2"), ch, 2 * ch, 3, 2);
    mid_ = Conv2d<T>(s.sub("mid"), 2 * ch, 2 * ch, 3);
    up_ = SubpelUp<T>(s.sub("up"), 2 * ch, ch);
    d1_ = Conv2d<T>(s.sub("dec1"), 2 * ch, ch, 3);
    out_ = Conv2d<T>(s.sub("out"), ch, out_ch, 3);
  }

  int out_channels() const { return out_ch_; }

  Var<T> operator()(const Var<T>& flow, const Var<T>& warped, const Var<T>& target) const {
    if (flow.shape()[1] != target.shape()[1] || flow.shape()[2] != target.shape()[2] ||
        warped.shape() != target.shape() || flow.shape()[0] != 2)
      throw ShapeError("refine_motion: flow " + shape_str(flow.shape()) + ", warped " + shape_str(warped.shape()) +
                       ", target " + shape_str(target.shape()));
    Var<T> a = leaky_relu(e1_(concat_channels<T>({flow, warped, target})));
    Var<T> b = leaky_relu(mid_(leaky_relu(e2_(a))));
    Var<T> u = leaky_relu(up_(b));
    return out_(leaky_relu(d1_(concat_channels<T>({a, u}))));
  }

 private:
  int out_ch_ = 0;
  Conv2d<T> e1_, e2_, mid_, d1_, out_;
  SubpelUp<T> up_;
};

/// Feature-domain motion at 4x: a small extractor for the current frame, a
/// fusion block over (current, reference) features, and addition with the
/// refined motion feature brought down to 4x.
template <typename T>
class FeatureMotion {
 public:
  FeatureMotion() = default;
  FeatureMotion(const Scope<T>& s, int ref_ch, int motion_ch) {
    ext1_ = Conv2d<T>(s.sub("extract1"), 3, ref_ch, 3, 2);
    ext2_ = Conv2d<T>(s.sub("extract2"), ref_ch, ref_ch, 3, 2);
    fuse1_ = Conv2d<T>(s.sub("fuse1"), 2 * ref_ch, motion_ch, 3);
    fuse2_ = Conv2d<T>(s.sub("fuse2"), motion_ch, motion_ch, 3);
    down1_ = Conv2d<T>(s.sub("down1"), motion_ch, motion_ch, 3, 2);
    down2_ = Conv2d<T>(s.sub("down2"), motion_ch, motion_ch, 3, 2);
  }

  Var<T> extract(const Var<T>& x) const { return ext2_(leaky_relu(ext1_(x))); }

  /// Offsets feature from the current and reference 4x features.
  Var<T> offsets(const Var<T>& feat_t, const Var<T>& feat_ref) const {
    if (feat_t.shape() != feat_ref.shape())
      throw ShapeError("feature_motion_offsets: " + shape_str(feat_t.shape()) + " vs " + shape_str(feat_ref.shape()));
    return fuse2_(leaky_relu(fuse1_(concat_channels<T>({feat_t, feat_ref}))));
  }

  /// Adds the refined full-resolution motion feature downsampled to 4x.
  Var<T> fuse(const Var<T>& offsets, const Var<T>& motion_feature) const {
    return add(offsets, down2_(leaky_relu(down1_(motion_feature))));
  }

 private:
  Conv2d<T> ext1_, ext2_, fuse1_, fuse2_, down1_, down2_;
};

/// Priors available to the motion encoder only.
template <typename T>
struct EncoderPriors {
  std::array<Var<T>, 3> recon;  // x_hat t-3, t-2, t-1
  std::array<Var<T>, 2> flows;  // MV t-2, t-1
};

/// Motion encoder: fuses the 4x motion feature with priors extracted from the
/// three previous reconstructions and two previous flows, then codes down to
/// a 16x latent.
template <typename T>
class MotionEncoder {
 public:
  MotionEncoder() = default;
  MotionEncoder(const Scope<T>& s, int motion_ch, int prior_ch, int width, int out_ch) {
    prior1_ = Conv2d<T>(s.sub("prior1"), 13, prior_ch, 3, 2);
    prior2_ = Conv2d<T>(s.sub("prior2"), prior_ch, prior_ch, 3, 2);
    in_ = Conv2d<T>(s.sub("in"), motion_ch + prior_ch, width, 3);
    d8_ = Conv2d<T>(s.sub("down8"), width, width, 3, 2);
    mid_ = Conv2d<T>(s.sub("mid"), width, width, 3);
    d16_ = Conv2d<T>(s.sub("down16"), width, out_ch, 3, 2);
  }

  /// Prior feature at 4x from (x_hat t-3, t-2, t-1, MV t-2, t-1).
  Var<T> priors(const EncoderPriors<T>& p) const {
    const auto& ref = p.recon[2].shape();
    for (const auto& r : p.recon)
      if (r.shape() != ref) throw ShapeError("encode_motion: reconstruction prior shape " + shape_str(r.shape()));
    for (const auto& f : p.flows)
      if (f.shape().size() != 3 || f.shape()[0] != 2 || f.shape()[1] != ref[1] || f.shape()[2] != ref[2])
        throw ShapeError("encode_motion: flow prior shape " + shape_str(f.shape()));
    Var<T> cat = concat_channels<T>({p.recon[0], p.recon[1], p.recon[2], p.flows[0], p.flows[1]});
    return prior2_(leaky_relu(prior1_(cat)));
  }

  Var<T> operator()(const Var<T>& motion4, const Var<T>& prior4) const {
    Var<T> h = leaky_relu(in_(concat_channels<T>({motion4, prior4})));
    h = leaky_relu(mid_(leaky_relu(d8_(h))));
    return d16_(h);
  }

 private:
  Conv2d<T> prior1_, prior2_, in_, d8_, mid_, d16_;
};

}  // namespace lrvc
