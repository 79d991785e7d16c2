#pragma once

// Inter codec. The encoder runs flow estimation, motion coding with
// multi-frame priors and a heavy contextual encoder; the decoder only touches
// low-resolution features until the final reconstruction stage.

#include <deque>

#include "lrvc/model/context.hpp"
#include "lrvc/model/entropy_model.hpp"
#include "lrvc/model/motion.hpp"

namespace lrvc {

/// What a decoder keeps between frames. No full-resolution motion.
template <typename T>
struct DecoderState {
  ReusedFeatures<T> reused;
  std::deque<Var<T>> y_hist;   // most recent first, at most 2
  std::deque<Var<T>> mv_hist;  // most recent first, at most 2
  int frame_index = 0;
  int gop_pos = 0;
};

/// Encoder-only buffers: recent reconstructions and estimated flows.
template <typename T>
struct EncoderState {
  std::deque<Var<T>> recon;  // most recent first, at most 3
  std::deque<Var<T>> flows;  // most recent first, at most 2
};

template <typename T>
struct DecodeState {
  DecoderState<T> dec;
  EncoderState<T> enc;
};

template <typename T>
void push_bounded(std::deque<Var<T>>& q, Var<T> v, size_t n) {
  q.push_front(std::move(v));
  while (q.size() > n) q.pop_back();
}

/// Priors for frame t. Missing reconstructions repeat the earliest one
/// available; missing flows are zero.
template <typename T>
EncoderPriors<T> encoder_priors(const EncoderState<T>& s) {
  if (s.recon.empty()) throw std::logic_error("encode_motion: no reference reconstruction");
  EncoderPriors<T> p;
  const auto& earliest = s.recon.back();
  for (int k = 0; k < 3; ++k) p.recon[2 - k] = k < static_cast<int>(s.recon.size()) ? s.recon[k] : earliest;
  const auto& r = s.recon.front().shape();
  for (int k = 0; k < 2; ++k)
    p.flows[1 - k] = k < static_cast<int>(s.flows.size()) ? s.flows[k] : Var<T>(Tensor<T>(2, r[1], r[2]));
  return p;
}

/// Contextual encoder: heavy, with residual stages at 4x, 8x and 16x, each
/// conditioned on the matching temporal context.
template <typename T>
class ContextualEncoder {
 public:
  ContextualEncoder() = default;
  ContextualEncoder(const Scope<T>& s, const ModelConfig& cfg) {
    const int c = cfg.p_enc_channels;
    d2_ = Conv2d<T>(s.sub("down2"), 3, c, 3, 2);
    d4_ = Conv2d<T>(s.sub("down4"), c, c, 3, 2);
    m4_ = Conv2d<T>(s.sub("merge4"), c + cfg.ctx4_channels, c, 3);
    d8_ = Conv2d<T>(s.sub("down8"), c, c, 3, 2);
    m8_ = Conv2d<T>(s.sub("merge8"), c + cfg.ctx8_channels, c, 3);
    d16_ = Conv2d<T>(s.sub("down16"), c, c, 3, 2);
    m16_ = Conv2d<T>(s.sub("merge16"), c + cfg.ctx16_channels, c, 3);
    out_ = Conv2d<T>(s.sub("out"), c, cfg.latent_channels, 3);
    for (int i = 0; i < cfg.p_enc_blocks; ++i) {
      r4_.emplace_back(s.sub("s4.res" + std::to_string(i)), c);
      r8_.emplace_back(s.sub("s8.res" + std::to_string(i)), c);
      r16_.emplace_back(s.sub("s16.res" + std::to_string(i)), c);
    }
  }

  Var<T> operator()(const Var<T>& x, const MultiScaleContext<T>& ctx) const {
    Var<T> h = d4_(leaky_relu(d2_(x)));
    h = m4_(concat_channels<T>({h, ctx.f4}));
    for (const auto& b : r4_) h = b(h);
    h = m8_(concat_channels<T>({d8_(h), ctx.f8}));
    for (const auto& b : r8_) h = b(h);
    h = m16_(concat_channels<T>({d16_(h), ctx.f16}));
    for (const auto& b : r16_) h = b(h);
    return out_(h);
  }

 private:
  Conv2d<T> d2_, d4_, m4_, d8_, m8_, d16_, m16_, out_;
  std::vector<ResBlock<T>> r4_, r8_, r16_;
};

template <typename T>
struct PFrameResult {
  CodedLatent<T> z_mv, mv, z, y;
  Var<T> x_hat;
  ReusedFeatures<T> features;
  MultiScaleContext<T> ctx;
  Var<T> flow;         // encoder only
  Var<T> motion4;      // encoder only
  Var<T> temporal;     // temporal prior feature
};

/// Chunk order of an inter frame.
enum PChunk { kZmv = 0, kMv = 1, kZctx = 2, kYctx = 3 };

template <typename T>
class PFrameCodec {
 public:
  PFrameCodec() = default;
  PFrameCodec(ParamStore<T>& store, const ModelConfig& cfg) : cfg_(cfg) {
    auto enc = [&](const char* g) { return Scope<T>{&store, g, g, Side::kEncoder}; };
    auto dec = [&](const char* g) { return Scope<T>{&store, g, g, Side::kDecoder}; };
    flow_ = FlowEstimator<T>(enc("p.motion_estimation").sub("flow"), cfg.flow_levels, cfg.flow_channels);
    unet_ = MotionRefineUNet<T>(enc("p.motion_estimation").sub("refine"), cfg.unet_channels,
                                cfg.motion_feature_channels);
    fmotion_ = FeatureMotion<T>(enc("p.motion_estimation").sub("feature"), cfg.ctx4_channels,
                                cfg.motion_feature_channels);
    menc_ = MotionEncoder<T>(enc("p.motion_encoder"), cfg.motion_feature_channels, cfg.prior_channels,
                             cfg.motion_enc_channels, cfg.mv_channels);
    mv_hyper_enc_ = HyperEncoder<T>(enc("p.motion_hyper_encoder"), cfg.mv_channels, cfg.mv_hyper_channels);
    mv_hyper_dec_ = HyperDecoder<T>(dec("p.motion_hyper_decoder"), cfg.mv_hyper_channels, cfg.entropy_channels);
    mv_prior_ = FactorizedPrior<T>(dec("p.motion_entropy").sub("factorized"), cfg.mv_hyper_channels);
    mv_heads_ = GroupedParamHeads<T>(dec("p.motion_entropy").sub("heads"),
                                     cfg.entropy_channels + cfg.temporal_prior_channels, cfg.mv_channels,
                                     cfg.entropy_channels);
    aligner_ = MotionAligner<T>(dec("p.motion_decoder"), cfg);
    fusion_ = ContextFusion<T>(dec("p.fusion"), cfg);
    tprior_ = TemporalPrior<T>(dec("p.temporal_prior"), cfg);
    cenc_ = ContextualEncoder<T>(enc("p.context_encoder"), cfg);
    c_hyper_enc_ = HyperEncoder<T>(enc("p.context_hyper_encoder"), cfg.latent_channels, cfg.hyper_channels);
    c_hyper_dec_ = HyperDecoder<T>(dec("p.context_hyper_decoder"), cfg.hyper_channels, cfg.entropy_channels);
    c_prior_ = FactorizedPrior<T>(dec("p.context_entropy").sub("factorized"), cfg.hyper_channels);
    c_heads_ = GroupedParamHeads<T>(
        dec("p.context_entropy").sub("heads"),
        cfg.entropy_channels + cfg.temporal_prior_channels + cfg.ctx16_channels, cfg.latent_channels,
        cfg.entropy_channels);
    cdec_ = ReconDecoder<T>(dec("p.context_decoder"), cfg, cfg.latent_channels, cfg.i_dec_channels, cfg.p_dec_blocks,
                            true);
  }

  // Encoder-side submodules, exposed for probes and gradient checks.
  const FlowEstimator<T>& flow_estimator() const { return flow_; }
  const MotionRefineUNet<T>& refine() const { return unet_; }
  const FeatureMotion<T>& feature_motion() const { return fmotion_; }
  const MotionEncoder<T>& motion_encoder() const { return menc_; }
  const MotionAligner<T>& aligner() const { return aligner_; }
  const ContextFusion<T>& fusion() const { return fusion_; }
  const TemporalPrior<T>& temporal_prior_net() const { return tprior_; }
  const ContextualEncoder<T>& contextual_encoder() const { return cenc_; }
  const ReconDecoder<T>& contextual_decoder() const { return cdec_; }

  /// Latent history {y t-1, y t-2, mv t-1, mv t-2}, zero-filled.
  std::array<Var<T>, 4> latent_history(const DecoderState<T>& s, int h, int w) const {
    std::array<Var<T>, 4> hist;
    for (int k = 0; k < 2; ++k) {
      hist[k] = k < static_cast<int>(s.y_hist.size()) ? s.y_hist[k]
                                                       : Var<T>(Tensor<T>(cfg_.latent_channels, h / 16, w / 16));
      hist[2 + k] = k < static_cast<int>(s.mv_hist.size()) ? s.mv_hist[k]
                                                            : Var<T>(Tensor<T>(cfg_.mv_channels, h / 16, w / 16));
    }
    return hist;
  }

  Var<T> temporal_prior(const DecoderState<T>& s, int h, int w) const { return tprior_(latent_history(s, h, w)); }

  /// Entropy params of the contextual latent for probing (group g, given
  /// partial latent).
  std::pair<Var<T>, Var<T>> contextual_params(int g, const Var<T>& z_hat, const Var<T>& tp, const Var<T>& ctx16,
                                              const Var<T>& partial) const {
    return c_heads_.params(g, concat_channels<T>({c_hyper_dec_(z_hat), tp, ctx16}), partial, cfg_.b_min);
  }
  std::pair<Var<T>, Var<T>> motion_params(int g, const Var<T>& z_hat, const Var<T>& tp, const Var<T>& partial) const {
    return mv_heads_.params(g, concat_channels<T>({mv_hyper_dec_(z_hat), tp}), partial, cfg_.b_min);
  }

  /// Codes one inter frame. With `x` defined this is the encoder (training or
  /// encoding); otherwise the latents are decoded from `src`. The state is
  /// advanced in both cases.
  PFrameResult<T> run(const Var<T>& x, DecodeState<T>& st, const QuantOptions& q, int h, int w,
                      const std::array<ChunkSource, 4>* src = nullptr) const {
    const bool encoding = x.defined();
    if (encoding) require_multiple_of_64(x.shape(), "p_encode");
    if (!st.dec.reused.defined()) throw std::logic_error("p-frame: decode state has no reused features");
    PFrameResult<T> r;
    Var<T> mv, z_mv;
    if (encoding) {
      const Var<T>& ref = st.enc.recon.at(0);
      Var<T> mfeat;
      {
        ScopedPhase phase("flow_estimate");
        r.flow = flow_(x, ref);
        Var<T> warped = warp(ref, r.flow);
        mfeat = unet_(r.flow, warped, x);
      }
      ScopedPhase phase("motion_enc");
      r.motion4 = fmotion_.fuse(fmotion_.offsets(fmotion_.extract(x), st.dec.reused.f4), mfeat);
      mv = menc_(r.motion4, menc_.priors(encoder_priors(st.enc)));
      z_mv = mv_hyper_enc_(mv);
    }
    {
      ScopedPhase phase("motion_dec_align");
      r.temporal = temporal_prior(st.dec, h, w);
      r.z_mv = mv_prior_(z_mv, q, {cfg_.mv_hyper_channels, h / 64, w / 64}, src ? &(*src)[kZmv] : nullptr);
      Var<T> cond = concat_channels<T>({mv_hyper_dec_(r.z_mv.y_hat), r.temporal});
      r.mv = mv_heads_(mv, cond, q, {cfg_.mv_channels, h / 16, w / 16}, src ? &(*src)[kMv] : nullptr);
    }
    ReusedFeatures<T> aligned;
    {
      ScopedPhase phase("motion_dec_align");
      aligned = aligner_(r.mv.y_hat, st.dec.reused);
    }
    {
      ScopedPhase phase("ctx_fusion");
      r.ctx = fusion_(aligned);
    }
    Var<T> y, z;
    if (encoding) {
      ScopedPhase phase("ctx_enc");
      y = cenc_(x, r.ctx);
      z = c_hyper_enc_(y);
    }
    {
      ScopedPhase phase("ctx_dec");
      r.z = c_prior_(z, q, {cfg_.hyper_channels, h / 64, w / 64}, src ? &(*src)[kZctx] : nullptr);
      Var<T> cond = concat_channels<T>({c_hyper_dec_(r.z.y_hat), r.temporal, r.ctx.f16});
      r.y = c_heads_(y, cond, q, {cfg_.latent_channels, h / 16, w / 16}, src ? &(*src)[kYctx] : nullptr);
      std::tie(r.x_hat, r.features) = cdec_(r.y.y_hat, &r.ctx);
    }
    advance(st, r);
    return r;
  }

 private:
  void advance(DecodeState<T>& st, const PFrameResult<T>& r) const {
    st.dec.reused = r.features;
    push_bounded(st.dec.y_hist, r.y.y_hat, 2);
    push_bounded(st.dec.mv_hist, r.mv.y_hat, 2);
    ++st.dec.frame_index;
    ++st.dec.gop_pos;
    if (r.flow.defined()) {
      push_bounded(st.enc.recon, r.x_hat, 3);
      push_bounded(st.enc.flows, r.flow, 2);
    }
  }

  ModelConfig cfg_;
  FlowEstimator<T> flow_;
  MotionRefineUNet<T> unet_;
  FeatureMotion<T> fmotion_;
  MotionEncoder<T> menc_;
  HyperEncoder<T> mv_hyper_enc_, c_hyper_enc_;
  HyperDecoder<T> mv_hyper_dec_, c_hyper_dec_;
  FactorizedPrior<T> mv_prior_, c_prior_;
  GroupedParamHeads<T> mv_heads_, c_heads_;
  MotionAligner<T> aligner_;
  ContextFusion<T> fusion_;
  TemporalPrior<T> tprior_;
  ContextualEncoder<T> cenc_;
  ReconDecoder<T> cdec_;
};

}  // namespace lrvc
