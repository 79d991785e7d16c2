#pragma once

// Online encoder update: per GOP, a few gradient steps on the encoder-side
// submodules only, over patch rollouts of the GOP's frames. The decoder and
// the bitstream semantics are untouched; a GOP whose adapted encoding is not
// better in RD than the plain one falls back to the plain encoding.

#include <chrono>

#include "lrvc/train/trainer.hpp"

namespace lrvc {

enum class OEUMode { kOff, kDownsample, kCropAll, kCropFirstT };

inline OEUMode parse_oeu_mode(const std::string& s) {
  if (s == "off") return OEUMode::kOff;
  if (s == "downsample") return OEUMode::kDownsample;
  if (s == "crop-all" || s == "crop_all") return OEUMode::kCropAll;
  if (s == "crop-firstT" || s == "crop_firstT") return OEUMode::kCropFirstT;
  throw std::invalid_argument("unknown OEU mode '" + s + "' (off, downsample, crop-all, crop-firstT)");
}

inline const char* oeu_mode_name(OEUMode m) {
  switch (m) {
    case OEUMode::kOff: return "off";
    case OEUMode::kDownsample: return "downsample";
    case OEUMode::kCropAll: return "crop-all";
    case OEUMode::kCropFirstT: return "crop-firstT";
  }
  return "?";
}

/// The only parameter groups an online update may touch.
inline const std::array<std::string, 4> kOEUGroups = {"p.motion_encoder", "p.context_encoder",
                                                      "p.motion_hyper_encoder", "p.context_hyper_encoder"};

inline bool in_oeu_set(const std::string& group) {
  return std::find(kOEUGroups.begin(), kOEUGroups.end(), group) != kOEUGroups.end();
}

struct OEUConfig {
  OEUMode mode = OEUMode::kCropFirstT;
  int patch_w = 768;
  int patch_h = 448;
  int frames = 8;  // T
  int steps = 5;   // N
  double lr = 1e-5;
  int lambda_index = 0;
  uint64_t seed = 7;
};

/// Minimal-cover tiling along one axis: fewest patches of length p covering
/// n, first at 0, last flush with the far edge, uniform stride.
inline std::vector<int> patch_offsets_1d(int n, int p) {
  if (p >= n) return {0};
  const int count = (n + p - 1) / p;
  std::vector<int> out;
  for (int i = 0; i < count; ++i)
    out.push_back(static_cast<int>(std::lround(double(i) * (n - p) / double(count - 1))));
  return out;
}

struct PatchOffset {
  int y, x;
  bool operator==(const PatchOffset&) const = default;
};

/// Row-major patch offsets over an (h, w) frame.
inline std::vector<PatchOffset> make_patches(int h, int w, int ph, int pw) {
  std::vector<PatchOffset> out;
  for (int y : patch_offsets_1d(h, ph))
    for (int x : patch_offsets_1d(w, pw)) out.push_back({y, x});
  return out;
}

struct OEUReport {
  std::vector<double> step_loss;  // loss at each step (before its update)
  double initial_loss = 0, final_loss = 0;
  int frames_touched = 0;
  int patches = 0;
  double wall_ms = 0;
};

/// Training clips of one GOP for the given mode.
template <typename T>
std::vector<std::vector<Tensor<T>>> oeu_clips(const std::vector<Tensor<T>>& gop, const OEUConfig& c) {
  const int n = c.mode == OEUMode::kCropAll ? static_cast<int>(gop.size())
                                            : std::min<int>(c.frames, static_cast<int>(gop.size()));
  std::vector<std::vector<Tensor<T>>> clips;
  if (c.mode == OEUMode::kDownsample) {
    // Whole frames at half resolution, padded back to 64-multiples.
    NoGradGuard ng;
    std::vector<Tensor<T>> clip;
    for (int t = 0; t < n; ++t) {
      Tensor<T> half = avg_pool2(Var<T>(gop[t])).value();
      const int h = (half.height() + 63) / 64 * 64, w = (half.width() + 63) / 64 * 64;
      Tensor<T> p(3, h, w);
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            p.at(ch, y, x) = half.at(ch, std::min(y, half.height() - 1), std::min(x, half.width() - 1));
      clip.push_back(std::move(p));
    }
    clips.push_back(std::move(clip));
    return clips;
  }
  const int h = gop[0].height(), w = gop[0].width();
  const int ph = std::min(c.patch_h, h), pw = std::min(c.patch_w, w);
  if (ph % 64 || pw % 64) throw std::invalid_argument("oeu: patch size must be a multiple of 64");
  for (const auto& o : make_patches(h, w, ph, pw)) {
    std::vector<Tensor<T>> clip;
    for (int t = 0; t < n; ++t) {
      Tensor<T> p(3, ph, pw);
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < ph; ++y)
          for (int x = 0; x < pw; ++x) p.at(ch, y, x) = gop[t].at(ch, o.y + y, o.x + x);
      clip.push_back(std::move(p));
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

/// N Adam steps of the weighted T-frame RD loss on `codec`'s update set,
/// gradients accumulated over patches in a fixed order. Everything outside
/// the update set is left bitwise unchanged.
template <typename T>
OEUReport oeu_update(VideoCodec<T>& codec, const std::vector<Tensor<T>>& gop, const OEUConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  OEUReport rep;
  if (c.mode == OEUMode::kOff || c.steps <= 0) return rep;
  auto clips = oeu_clips(gop, c);
  rep.patches = static_cast<int>(clips.size());
  rep.frames_touched = static_cast<int>(clips.front().size());
  std::vector<Var<T>> vars;
  std::vector<bool> saved;
  for (auto& p : codec.store().params()) {
    saved.push_back(p.var.requires_grad());
    const bool on = in_oeu_set(p.group);
    p.var.set_requires_grad(on);
    p.var.zero_grad();
    if (on) vars.push_back(p.var);
  }
  typename Adam<T>::Options ao;
  ao.lr = c.lr;
  Adam<T> opt(vars, ao);
  TrainConfig tc;
  tc.lambda_index = c.lambda_index;
  std::mt19937_64 rng(c.seed);
  QuantOptions q;
  q.mode = Quant::kNoise;
  q.rng = &rng;
  q.tau = codec.config().skip_tau;
  q.b_min = codec.config().b_min;
  RolloutOptions ro;
  ro.frames = rep.frames_touched;
  ro.include_iframe = false;
  ro.iframe_grad = false;
  auto evaluate = [&](bool grad) {
    double total = 0;
    for (const auto& clip : clips) {
      std::optional<NoGradGuard> ng;
      if (!grad) ng.emplace();
      auto r = rollout(codec, clip, q, ro, tc);
      Var<T> loss = mul_scalar(rd_loss(r.terms, tc.lambda()), static_cast<T>(1.0 / clips.size()));
      total += loss.value()[0];
      if (grad) backward(loss);
    }
    return total;
  };
  for (int s = 0; s < c.steps; ++s) {
    opt.zero_grad();
    rep.step_loss.push_back(evaluate(true));
    opt.step();
  }
  rep.initial_loss = rep.step_loss.front();
  rng.seed(c.seed);
  rep.final_loss = evaluate(false);
  size_t i = 0;
  for (auto& p : codec.store().params()) p.var.set_requires_grad(saved[i++]);
  rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// RD cost of an encoded GOP: mean over frames of lambda * MSE + bpp, with
/// bpp over the padded area the model codes.
template <typename T>
double gop_rd(const EncodedGop<T>& g, const std::vector<Tensor<T>>& frames, size_t begin, double lambda) {
  double j = 0;
  for (size_t k = 0; k < g.frames.size(); ++k) {
    const auto& x = frames[begin + k];
    double se = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double d = double(g.recon[k][i]) - double(x[i]);
      se += d * d;
    }
    j += lambda * se / double(x.size()) + g.stats[k].bytes * 8.0 / (double(x.height()) * x.width());
  }
  return j / double(g.frames.size());
}

struct OEUGopResult {
  size_t begin = 0;
  bool adapted = false;  // false: fell back to the plain encoding
  double rd_plain = 0, rd_oeu = 0;
  OEUReport update;
};

/// GOP hook for VideoCodec::encode_sequence. Each GOP adapts a fresh copy of
/// the checkpoint parameters, so adaptations never leak across GOPs.
template <typename T>
typename VideoCodec<T>::GopEncoder oeu_gop_encoder(const std::vector<Tensor<T>>& frames, const OEUConfig& c,
                                                   CoderBackend& backend, int intra_period,
                                                   std::vector<OEUGopResult>* results) {
  return [&frames, c, &backend, intra_period, results](VideoCodec<T>& codec, size_t b, size_t e) {
    EncodedGop<T> plain = codec.encode_gop(frames, b, e, backend, intra_period);
    const double lambda = kLambdas.at(c.lambda_index);
    OEUGopResult res;
    res.begin = b;
    res.rd_plain = gop_rd(plain, frames, b, lambda);
    res.rd_oeu = res.rd_plain;
    if (c.mode == OEUMode::kOff || e - b < 2) {
      if (results) results->push_back(res);
      return plain;
    }
    VideoCodec<T> adapted = codec.clone();
    std::vector<Tensor<T>> gop(frames.begin() + b, frames.begin() + e);
    res.update = oeu_update(adapted, gop, c);
    EncodedGop<T> g = adapted.encode_gop(frames, b, e, backend, intra_period);
    res.rd_oeu = gop_rd(g, frames, b, lambda);
    res.adapted = res.rd_oeu < res.rd_plain;
    if (results) results->push_back(res);
    return res.adapted ? g : plain;
  };
}

}  // namespace lrvc
