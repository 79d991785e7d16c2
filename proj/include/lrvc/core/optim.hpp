#pragma once

#include <cmath>
#include <vector>

#include "lrvc/core/layers.hpp"

namespace lrvc {

/// Adam over a fixed list of parameters.
template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::vector<Var<T>> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(Tensor<double>::count(p.shape()), 0.0);
      v_.emplace_back(Tensor<double>::count(p.shape()), 0.0);
    }
  }

  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }

  /// Scales gradients so their global L2 norm is at most max_norm. Returns the
  /// norm before clipping.
  double clip_grad_norm(double max_norm) {
    double sq = 0;
    for (const auto& p : params_)
      for (T g : p.grad().vec()) sq += double(g) * g;
    double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
      T s = static_cast<T>(max_norm / (norm + 1e-12));
      for (auto& p : params_)
        if (!p.grad().empty()) p.grad_buffer() *= s;
    }
    return norm;
  }

  void step() {
    ++t_;
    const double bc1 = 1 - std::pow(opt_.beta1, t_), bc2 = 1 - std::pow(opt_.beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.grad().empty()) continue;
      auto& w = p.mutable_value();
      const auto& g = p.grad();
      for (size_t j = 0; j < w.size(); ++j) {
        double gj = g[j];
        m_[i][j] = opt_.beta1 * m_[i][j] + (1 - opt_.beta1) * gj;
        v_[i][j] = opt_.beta2 * v_[i][j] + (1 - opt_.beta2) * gj * gj;
        double upd = opt_.lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + opt_.eps);
        w[j] = static_cast<T>(w[j] - upd);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Var<T>> params_;
  Options opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace lrvc
