#pragma once

// Deterministic synthetic clips: a smooth periodic texture translated by a
// constant per-frame motion. Integer motion is an exact circular shift.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "lrvc/core/tensor.hpp"

namespace lrvc {

struct SyntheticClip {
  int height = 256;
  int width = 256;
  int frames = 9;
  double dx = 2.0;  // pixels per frame, positive moves content right
  double dy = 1.0;
  int components = 6;
  double noise = 0.0;  // i.i.d. uniform amplitude added per frame
  uint64_t seed = 1;
};

/// Frame t samples texture(x - t dx, y - t dy). Texture frequencies are whole
/// cycles per frame size, so the clip is periodic.
template <typename T = float>
std::vector<Tensor<T>> make_clip(const SyntheticClip& c) {
  std::mt19937_64 rng(c.seed);
  std::uniform_int_distribution<int> freq(1, 6);
  std::uniform_real_distribution<double> phase(0, 2 * std::numbers::pi), amp(0.04, 0.12);
  struct Wave {
    int fx, fy;
    double ph, a[3];
  };
  std::vector<Wave> waves;
  for (int i = 0; i < c.components; ++i) {
    Wave w{freq(rng), freq(rng) - 3, phase(rng), {amp(rng), amp(rng), amp(rng)}};
    waves.push_back(w);
  }
  const double base[3] = {0.45, 0.5, 0.55};
  std::uniform_real_distribution<double> un(-1, 1);
  std::vector<Tensor<T>> out;
  for (int t = 0; t < c.frames; ++t) {
    Tensor<T> f(3, c.height, c.width);
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x) {
        const double sx = (x - t * c.dx) / c.width, sy = (y - t * c.dy) / c.height;
        for (int ch = 0; ch < 3; ++ch) {
          double v = base[ch];
          for (const auto& w : waves) v += w.a[ch] * std::sin(2 * std::numbers::pi * (w.fx * sx + w.fy * sy) + w.ph);
          f.at(ch, y, x) = static_cast<T>(std::clamp(v, 0.0, 1.0));
        }
      }
    if (c.noise > 0)
      for (auto& v : f.vec()) v = static_cast<T>(std::clamp(double(v) + c.noise * un(rng), 0.0, 1.0));
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace lrvc
