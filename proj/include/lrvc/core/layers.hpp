#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lrvc/core/ops.hpp"

namespace lrvc {

/// A named trainable tensor. `group` names the submodule it belongs to
/// (e.g. "p.motion_encoder"), which is what freezing and online updates
/// select on.
template <typename T>
struct Parameter {
  std::string name;
  std::string group;
  Side side;
  Var<T> var;
};

/// Owns every parameter of a model in creation order.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : rng_(seed) {}

  Var<T> create(std::string name, std::string group, Side side, std::vector<int> shape, T stddev) {
    Tensor<T> t(std::move(shape));
    if (stddev != T(0)) {
      std::normal_distribution<double> nd(0.0, static_cast<double>(stddev));
      for (auto& v : t.vec()) v = static_cast<T>(nd(rng_));
    }
    Var<T> v(std::move(t), true);
    params_.push_back({std::move(name), std::move(group), side, v});
    return v;
  }

  Var<T> create_filled(std::string name, std::string group, Side side, std::vector<int> shape, T value) {
    Var<T> v(Tensor<T>(std::move(shape), value), true);
    params_.push_back({std::move(name), std::move(group), side, v});
    return v;
  }

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  size_t count_scalars(Side side) const {
    size_t n = 0;
    for (const auto& p : params_)
      if (p.side == side) n += p.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Parameter<T>> params_;
};

inline int64_t conv_macs(int cin, int cout, int k, int out_h, int out_w) {
  return int64_t(cin) * cout * k * k * out_h * out_w;
}

/// Where a layer lives: store, name prefix, submodule group and codec side.
template <typename T>
struct Scope {
  ParamStore<T>* store;
  std::string prefix;
  std::string group;
  Side side;

  Scope sub(const std::string& name) const { return {store, prefix + "." + name, group, side}; }
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const Scope<T>& s, int cin, int cout, int k, int stride = 1, T gain = T(1))
      : name_(s.prefix), side_(s.side), cin_(cin), cout_(cout), k_(k), stride_(stride) {
    T stddev = gain * std::sqrt(T(2) / T(cin * k * k));
    weight_ = s.store->create(name_ + ".weight", s.group, s.side, {cout, cin, k, k}, stddev);
    bias_ = s.store->create_filled(name_ + ".bias", s.group, s.side, {cout}, T(0));
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = conv2d(x, weight_, bias_, stride_, k_ / 2 - (stride_ == 2 && k_ % 2 == 0 ? 1 : 0));
    if (auto* ins = current_instrument())
      ins->on_layer(name_, side_, conv_macs(cin_, cout_, k_, y.value().height(), y.value().width()));
    return y;
  }

  const std::string& name() const { return name_; }
  int out_channels() const { return cout_; }
  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  std::string name_;
  Side side_ = Side::kDecoder;
  int cin_ = 0, cout_ = 0, k_ = 1, stride_ = 1;
  Var<T> weight_, bias_;
};

/// Two 3x3 convolutions with a skip connection (encoder-style block).
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const Scope<T>& s, int ch) : a_(s.sub("conv1"), ch, ch, 3), b_(s.sub("conv2"), ch, ch, 3, 1, T(0.1)) {}

  Var<T> operator()(const Var<T>& x) const { return add(x, b_(leaky_relu(a_(leaky_relu(x))))); }

 private:
  Conv2d<T> a_, b_;
};

/// 1x1 reduce, 3x3, 1x1 expand with a skip connection (decoder-style block).
template <typename T>
class BottleneckBlock {
 public:
  BottleneckBlock() = default;
  BottleneckBlock(const Scope<T>& s, int ch)
      : reduce_(s.sub("reduce"), ch, std::max(1, ch / 2), 1),
        mid_(s.sub("mid"), std::max(1, ch / 2), std::max(1, ch / 2), 3),
        expand_(s.sub("expand"), std::max(1, ch / 2), ch, 1, 1, T(0.1)) {}

  Var<T> operator()(const Var<T>& x) const {
    return add(x, expand_(leaky_relu(mid_(leaky_relu(reduce_(x))))));
  }

 private:
  Conv2d<T> reduce_, mid_, expand_;
};

/// 3x3 convolution to 4x channels followed by pixel shuffle (2x upsampling).
template <typename T>
class SubpelUp {
 public:
  SubpelUp() = default;
  SubpelUp(const Scope<T>& s, int cin, int cout) : conv_(s, cin, cout * 4, 3) {}

  Var<T> operator()(const Var<T>& x) const { return pixel_shuffle2(conv_(x)); }

 private:
  Conv2d<T> conv_;
};

/// Deformable 3x3 convolution whose offsets are supplied by the caller.
template <typename T>
class DeformConv {
 public:
  static constexpr int kKernel = 3;

  DeformConv() = default;
  DeformConv(const Scope<T>& s, int cin, int cout, int groups)
      : name_(s.prefix), side_(s.side), cin_(cin), cout_(cout), groups_(groups) {
    T stddev = std::sqrt(T(2) / T(cin * kKernel * kKernel));
    weight_ = s.store->create(name_ + ".weight", s.group, s.side, {cout, cin, kKernel, kKernel}, stddev);
    bias_ = s.store->create_filled(name_ + ".bias", s.group, s.side, {cout}, T(0));
  }

  int offset_channels() const { return groups_ * 2 * kKernel * kKernel; }

  Var<T> operator()(const Var<T>& x, const Var<T>& offsets) const {
    Var<T> y = deform_conv2d(x, offsets, weight_, bias_, groups_);
    if (auto* ins = current_instrument())
      ins->on_layer(name_, side_, conv_macs(cin_, cout_, kKernel, y.value().height(), y.value().width()));
    return y;
  }

  Var<T>& weight() { return weight_; }

 private:
  std::string name_;
  Side side_ = Side::kDecoder;
  int cin_ = 0, cout_ = 0, groups_ = 1;
  Var<T> weight_, bias_;
};

}  // namespace lrvc
