#pragma once

// Intra codec: residual-block encoder, hyperprior, and a lighter
// bottleneck-block decoder whose stage outputs are tapped for reuse.

#include "lrvc/model/blocks.hpp"
#include "lrvc/model/entropy_model.hpp"

namespace lrvc {

template <typename T>
struct IFrameResult {
  CodedLatent<T> z, y;
  Var<T> x_hat;
  ReusedFeatures<T> features;
};

template <typename T>
class IFrameCodec {
 public:
  IFrameCodec() = default;
  IFrameCodec(ParamStore<T>& store, const ModelConfig& cfg) : cfg_(cfg) {
    Scope<T> enc{&store, "i.encoder", "i.encoder", Side::kEncoder};
    const int c = cfg.i_enc_channels;
    stages_[0] = DownStage<T>(enc.sub("s2"), 3, c, cfg.i_enc_blocks);
    stages_[1] = DownStage<T>(enc.sub("s4"), c, c, cfg.i_enc_blocks);
    stages_[2] = DownStage<T>(enc.sub("s8"), c, c, cfg.i_enc_blocks);
    out_ = Conv2d<T>(enc.sub("s16"), c, cfg.latent_channels, 3, 2);
    hyper_enc_ = HyperEncoder<T>({&store, "i.hyper_encoder", "i.hyper_encoder", Side::kEncoder}, cfg.latent_channels,
                                 cfg.hyper_channels);
    Scope<T> ent{&store, "i.entropy", "i.entropy", Side::kDecoder};
    hyper_dec_ = HyperDecoder<T>({&store, "i.hyper_decoder", "i.hyper_decoder", Side::kDecoder}, cfg.hyper_channels,
                                 cfg.entropy_channels);
    prior_ = FactorizedPrior<T>(ent.sub("factorized"), cfg.hyper_channels);
    heads_ = GroupedParamHeads<T>(ent.sub("heads"), cfg.entropy_channels, cfg.latent_channels, cfg.entropy_channels);
    decoder_ = ReconDecoder<T>({&store, "i.decoder", "i.decoder", Side::kDecoder}, cfg, cfg.latent_channels,
                               cfg.i_dec_channels, cfg.i_dec_blocks, false);
  }

  std::vector<int> latent_shape(int h, int w) const { return {cfg_.latent_channels, h / 16, w / 16}; }
  std::vector<int> hyper_shape(int h, int w) const { return {cfg_.hyper_channels, h / 64, w / 64}; }

  Var<T> analysis(const Var<T>& x) const {
    require_multiple_of_64(x.shape(), "i_encode");
    Var<T> h = x;
    for (const auto& s : stages_) h = s(h);
    return out_(h);
  }

  Var<T> hyper_analysis(const Var<T>& y) const { return hyper_enc_(y); }

  /// Entropy-codes (or decodes, when chunks are given) both latents.
  std::pair<CodedLatent<T>, CodedLatent<T>> code_latents(const Var<T>& y, const Var<T>& z, const QuantOptions& q, int h,
                                                         int w, const ChunkSource* z_src = nullptr,
                                                         const ChunkSource* y_src = nullptr) const {
    CodedLatent<T> zc = prior_(z, q, hyper_shape(h, w), z_src);
    Var<T> cond = hyper_dec_(zc.y_hat);
    CodedLatent<T> yc = heads_(y, cond, q, latent_shape(h, w), y_src);
    return {std::move(zc), std::move(yc)};
  }

  std::pair<Var<T>, ReusedFeatures<T>> synthesis(const Var<T>& y_hat) const {
    if (y_hat.shape().size() != 3 || y_hat.shape()[0] != cfg_.latent_channels)
      throw ShapeError("i_decode: latent " + shape_str(y_hat.shape()) + " does not match config");
    return decoder_(y_hat, nullptr);
  }

  /// Encoder-side pass: analysis, coding and the decoder's reconstruction.
  IFrameResult<T> forward(const Var<T>& x, const QuantOptions& q) const {
    const int h = x.value().height(), w = x.value().width();
    Var<T> y = analysis(x);
    Var<T> z = hyper_analysis(y);
    IFrameResult<T> r;
    std::tie(r.z, r.y) = code_latents(y, z, q, h, w);
    std::tie(r.x_hat, r.features) = synthesis(r.y.y_hat);
    return r;
  }

  /// Decoder-side pass from the two chunks.
  IFrameResult<T> decode(std::span<const uint8_t> z_chunk, std::span<const uint8_t> y_chunk, int h, int w,
                         CoderBackend& backend, const QuantOptions& q) const {
    ChunkSource zs{z_chunk, &backend}, ys{y_chunk, &backend};
    IFrameResult<T> r;
    std::tie(r.z, r.y) = code_latents(Var<T>(), Var<T>(), q, h, w, &zs, &ys);
    std::tie(r.x_hat, r.features) = synthesis(r.y.y_hat);
    return r;
  }

 private:
  ModelConfig cfg_;
  std::array<DownStage<T>, 3> stages_;
  Conv2d<T> out_;
  HyperEncoder<T> hyper_enc_;
  HyperDecoder<T> hyper_dec_;
  FactorizedPrior<T> prior_;
  GroupedParamHeads<T> heads_;
  ReconDecoder<T> decoder_;
};

}  // namespace lrvc
