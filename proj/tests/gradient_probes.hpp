#pragma once

// Small finite-difference probes shared by the unit tests and the
// acceptance binary.

#include <map>
#include <random>

#include "lrvc/core/gradcheck.hpp"
#include "lrvc/model/entropy_model.hpp"
#include "lrvc/model/motion.hpp"

namespace lrvc::probes {

inline Tensor<double> uniform(std::vector<int> shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

/// Inputs plus parameters of a layer store, all as gradcheck inputs.
inline std::vector<Var<double>> with_params(std::vector<Var<double>> in, ParamStore<double>& store) {
  for (auto& p : store.params()) in.push_back(p.var);
  return in;
}

/// Randomizes zero-initialized parameters so every path carries gradient.
inline void jitter_params(ParamStore<double>& store, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0, 0.2);
  for (auto& p : store.params())
    for (auto& v : p.var.mutable_value().vec()) v += nd(rng);
}

inline GradCheckResult warp_probe() {
  std::mt19937_64 rng(11);
  Var<double> img(uniform({2, 5, 6}, rng, 0, 1)), flow(uniform({2, 5, 6}, rng, -1.7, 1.7));
  return gradcheck([](const std::vector<Var<double>>& v) { return warp(v[0], v[1]); }, {img, flow});
}

/// Deformable alignment on a (2, 6, 6) feature with 2 offset groups.
inline GradCheckResult deformable_align_probe() {
  std::mt19937_64 rng(12);
  ParamStore<double> store(5);
  DeformConv<double> dc(Scope<double>{&store, "align", "p.aligner", Side::kDecoder}, 2, 2, 2);
  jitter_params(store, rng);
  Var<double> x(uniform({2, 6, 6}, rng, -1, 1)), off(uniform({dc.offset_channels(), 6, 6}, rng, -1.4, 1.4));
  return gradcheck([&](const std::vector<Var<double>>& v) { return dc(v[0], v[1]); }, with_params({x, off}, store));
}

/// Motion refinement UNet on an 8x8 flow probe.
inline GradCheckResult refine_motion_probe() {
  std::mt19937_64 rng(13);
  ParamStore<double> store(6);
  MotionRefineUNet<double> unet(Scope<double>{&store, "refine", "p.refine", Side::kEncoder}, 4, 4);
  jitter_params(store, rng);
  Var<double> flow(uniform({2, 8, 8}, rng, -2, 2)), warped(uniform({3, 8, 8}, rng, 0, 1)),
      target(uniform({3, 8, 8}, rng, 0, 1));
  return gradcheck([&](const std::vector<Var<double>>& v) { return unet(v[0], v[1], v[2]); },
                   with_params({flow, warped, target}, store), 1e-3, 1e-7, 1e-6, 48);
}

/// Feature-domain motion offsets plus the fusion with the refined motion.
inline GradCheckResult feature_motion_offsets_probe() {
  std::mt19937_64 rng(14);
  ParamStore<double> store(7);
  FeatureMotion<double> fm(Scope<double>{&store, "fm", "p.feature_motion", Side::kEncoder}, 3, 4);
  jitter_params(store, rng);
  Var<double> ft(uniform({3, 4, 4}, rng, -1, 1)), fr(uniform({3, 4, 4}, rng, -1, 1)),
      motion(uniform({4, 16, 16}, rng, -1, 1));
  return gradcheck([&](const std::vector<Var<double>>& v) { return fm.fuse(fm.offsets(v[0], v[1]), v[2]); },
                   with_params({ft, fr, motion}, store), 1e-3, 1e-7, 1e-6, 48);
}

/// Training-time rate proxy: bits of y + U(-1/2, 1/2) under the factorized
/// prior, with the noise held fixed across evaluations.
inline GradCheckResult quant_proxy_probe() {
  std::mt19937_64 rng(15);
  ParamStore<double> store(8);
  FactorizedPrior<double> prior(Scope<double>{&store, "prior", "p.prior", Side::kDecoder}, 3);
  jitter_params(store, rng);
  Var<double> y(uniform({3, 4, 4}, rng, -4, 4));
  auto f = [&](const std::vector<Var<double>>& v) {
    std::mt19937_64 noise(99);
    QuantOptions q;
    q.mode = Quant::kNoise;
    q.rng = &noise;
    auto c = prior(v[0], q, {3, 4, 4});
    return c.bits;
  };
  return gradcheck(f, with_params({y}, store));
}

inline std::map<std::string, GradCheckResult> all() {
  return {{"warp", warp_probe()},
          {"deformable_align", deformable_align_probe()},
          {"refine_motion", refine_motion_probe()},
          {"feature_motion_offsets", feature_motion_offsets_probe()},
          {"quant_proxy", quant_proxy_probe()}};
}

}  // namespace lrvc::probes
