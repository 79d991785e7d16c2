#pragma once

// Central finite-difference check of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "lrvc/core/ops.hpp"

namespace lrvc {

struct GradCheckResult {
  bool ok = true;
  size_t checked = 0;
  double worst_rel = 0;  // largest |a - n| / max(|a|, |n|) over entries with scale above atol
  std::string first_failure;
};

/// Checks d(sum(f(inputs) * R))/d(inputs) for a fixed random R. An entry
/// passes when |analytic - numeric| <= rtol * max(|analytic|, |numeric|) + atol.
/// When `max_entries` is nonzero, that many entries per input are sampled.
inline GradCheckResult gradcheck(const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                                 std::vector<Var<double>> inputs, double rtol = 1e-3, double atol = 1e-7,
                                 double eps = 1e-6, size_t max_entries = 0, uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (auto& v : inputs) {
    v.set_requires_grad(true);
    v.zero_grad();
  }
  Var<double> out = f(inputs);
  Tensor<double> r = Tensor<double>::like(out.value());
  for (auto& x : r.vec()) x = nd(rng);
  auto objective = [&](const Var<double>& y) {
    double s = 0;
    for (size_t i = 0; i < r.size(); ++i) s += y.value()[i] * r[i];
    return s;
  };
  backward(sum(mul(out, Var<double>(r))));
  GradCheckResult res;
  NoGradGuard ng;
  for (size_t k = 0; k < inputs.size(); ++k) {
    auto& v = inputs[k].mutable_value();
    const Tensor<double> analytic = inputs[k].grad().empty() ? Tensor<double>::like(v) : inputs[k].grad();
    std::vector<size_t> idx(v.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_entries && idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    for (size_t i : idx) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double up = objective(f(inputs));
      v[i] = orig - eps;
      const double dn = objective(f(inputs));
      v[i] = orig;
      const double num = (up - dn) / (2 * eps), a = analytic[i];
      const double err = std::abs(a - num), scale = std::max(std::abs(a), std::abs(num));
      ++res.checked;
      if (scale > atol) res.worst_rel = std::max(res.worst_rel, err / scale);
      if (err > rtol * scale + atol && res.ok) {
        res.ok = false;
        std::ostringstream os;
        os << "input " << k << " entry " << i << ": analytic " << a << " numeric " << num;
        res.first_failure = os.str();
      }
    }
  }
  return res;
}

}  // namespace lrvc
