#include <gtest/gtest.h>

#include <random>

#include "lrvc/core/layers.hpp"

namespace lrvc {
namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::mt19937& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

// Direct-sum convolution with zero padding, independent of the im2col path.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride,
                          int pad) {
  const int cout = w.dim(0), cin = w.dim(1), k = w.dim(2);
  const int ho = (x.height() + 2 * pad - k) / stride + 1, wo = (x.width() + 2 * pad - k) / stride + 1;
  Tensor<double> y(cout, ho, wo);
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double s = b[o];
        for (int c = 0; c < cin; ++c)
          for (int di = 0; di < k; ++di)
            for (int dj = 0; dj < k; ++dj) {
              const int yy = i * stride - pad + di, xx = j * stride - pad + dj;
              if (yy < 0 || yy >= x.height() || xx < 0 || xx >= x.width()) continue;
              s += x.at(c, yy, xx) * w[((o * cin + c) * k + di) * k + dj];
            }
        y.at(o, i, j) = s;
      }
  return y;
}

TEST(Tensor, ShapeAndFill) {
  Tensor<float> t(2, 3, 4, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.channels(), 2);
  EXPECT_EQ(t.height(), 3);
  EXPECT_EQ(t.width(), 4);
  for (float v : t.vec()) EXPECT_EQ(v, 1.5f);
}

TEST(Conv2d, MatchesDirectSum) {
  std::mt19937 rng(1);
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 2, 5}}) {
    auto x = random_tensor({3, 9, 7}, rng), w = random_tensor({4, 3, k, k}, rng), b = random_tensor({4}, rng);
    auto y = conv2d(Var<double>(x), Var<double>(w), Var<double>(b), stride, pad).value();
    auto ref = naive_conv(x, w, b, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ShapeMismatchIsAnError) {
  Var<double> x(Tensor<double>(3, 4, 4)), w(Tensor<double>(std::vector<int>{2, 5, 3, 3})), b(Tensor<double>({2}));
  EXPECT_THROW(conv2d(x, w, b, 1, 1), ShapeError);
}

TEST(ConvMacs, SixtyFourChannelsAtSixteen) {
  EXPECT_EQ(conv_macs(64, 64, 3, 16, 16), 9437184);
  ParamStore<float> store(0);
  Conv2d<float> conv(Scope<float>{&store, "c", "g", Side::kDecoder}, 64, 64, 3);
  Instrument ins;
  {
    ScopedInstrument si(ins);
    conv(Var<float>(Tensor<float>(64, 16, 16)));
  }
  EXPECT_EQ(ins.macs(Side::kDecoder), 9437184);
  EXPECT_EQ(ins.macs(Side::kEncoder), 0);
}

TEST(ConvMacs, DoublingAreaDoublesCount) {
  EXPECT_EQ(conv_macs(16, 32, 3, 32, 16), 2 * conv_macs(16, 32, 3, 16, 16));
}

TEST(Warp, ZeroFlowIsIdentity) {
  std::mt19937 rng(2);
  auto img = random_tensor({3, 6, 5}, rng);
  auto out = warp(Var<double>(img), Var<double>(Tensor<double>(2, 6, 5))).value();
  EXPECT_EQ(out, img);
}

TEST(Warp, UnitHorizontalFlowShiftsWithReplicatedBorder) {
  std::mt19937 rng(3);
  auto img = random_tensor({1, 4, 5}, rng);
  Tensor<double> flow(2, 4, 5);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) flow.at(0, y, x) = 1.0;
  auto out = warp(Var<double>(img), Var<double>(flow)).value();
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) EXPECT_DOUBLE_EQ(out.at(0, y, x), img.at(0, y, std::min(x + 1, 4)));
}

TEST(Warp, HalfPixelOnRampGivesMidpoint) {
  Tensor<double> ramp(1, 1, 6), flow(2, 1, 6);
  for (int x = 0; x < 6; ++x) ramp.at(0, 0, x) = 2.0 * x, flow.at(0, 0, x) = 0.5;
  auto out = warp(Var<double>(ramp), Var<double>(flow)).value();
  for (int x = 0; x < 5; ++x) EXPECT_NEAR(out.at(0, 0, x), 2.0 * x + 1.0, 1e-12);
}

Tensor<double> identity_kernel(int c) {
  Tensor<double> w(std::vector<int>{c, c, 3, 3});
  for (int i = 0; i < c; ++i) w[((i * c + i) * 3 + 1) * 3 + 1] = 1.0;
  return w;
}

TEST(DeformConv, ZeroOffsetsWithIdentityKernelReproduceInput) {
  std::mt19937 rng(4);
  auto x = random_tensor({4, 6, 7}, rng);
  Tensor<double> off(2 * 2 * 9, 6, 7);
  auto y = deform_conv2d(Var<double>(x), Var<double>(off), Var<double>(identity_kernel(4)),
                         Var<double>(Tensor<double>({4})), 2)
               .value();
  for (size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-6);
}

TEST(DeformConv, UnitOffsetShifts) {
  std::mt19937 rng(5);
  auto x = random_tensor({2, 5, 6}, rng);
  Tensor<double> off(2 * 9, 5, 6);
  for (int tap = 0; tap < 9; ++tap)
    for (int y = 0; y < 5; ++y)
      for (int xx = 0; xx < 6; ++xx) off.at(tap * 2, y, xx) = 1.0;  // dx = 1
  auto y = deform_conv2d(Var<double>(x), Var<double>(off), Var<double>(identity_kernel(2)),
                         Var<double>(Tensor<double>({2})), 1)
               .value();
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 5; ++r)
      for (int xx = 0; xx < 5; ++xx) EXPECT_NEAR(y.at(c, r, xx), x.at(c, r, xx + 1), 1e-12);
}

TEST(DeformConv, ChannelMismatchIsAnError) {
  Var<double> x(Tensor<double>(3, 4, 4)), off(Tensor<double>(18, 4, 4));
  EXPECT_THROW(deform_conv2d(x, off, Var<double>(identity_kernel(4)), Var<double>(Tensor<double>({4})), 1),
               ShapeError);
  Var<double> x4(Tensor<double>(4, 4, 4));
  EXPECT_THROW(deform_conv2d(x4, off, Var<double>(identity_kernel(4)), Var<double>(Tensor<double>({4})), 3),
               ShapeError);
}

TEST(Resample, PixelShuffleLayout) {
  Tensor<double> x(4, 1, 1);
  for (int c = 0; c < 4; ++c) x.at(c, 0, 0) = c;
  auto y = pixel_shuffle2(Var<double>(x)).value();
  EXPECT_EQ(y.at(0, 0, 0), 0);
  EXPECT_EQ(y.at(0, 0, 1), 1);
  EXPECT_EQ(y.at(0, 1, 0), 2);
  EXPECT_EQ(y.at(0, 1, 1), 3);
}

TEST(Resample, AvgPoolOfConstantIsConstant) {
  auto y = avg_pool2(Var<double>(Tensor<double>(2, 8, 6, 0.3))).value();
  EXPECT_EQ(y.height(), 4);
  EXPECT_EQ(y.width(), 3);
  for (double v : y.vec()) EXPECT_DOUBLE_EQ(v, 0.3);
}

TEST(Resample, UpsampleOfConstantIsScaledConstant) {
  auto y = upsample_bilinear2(Var<double>(Tensor<double>(1, 3, 5, 0.7)), 2.0).value();
  EXPECT_EQ(y.height(), 6);
  EXPECT_EQ(y.width(), 10);
  for (double v : y.vec()) EXPECT_NEAR(v, 1.4, 1e-12);
}

TEST(Autograd, ProductRuleAndReuse) {
  Var<double> a(Tensor<double>({1}, 3.0), true), b(Tensor<double>({1}, 5.0), true);
  // f = a*b + a*a -> df/da = b + 2a = 11, df/db = a = 3
  backward(sum(add(mul(a, b), mul(a, a))));
  EXPECT_DOUBLE_EQ(a.grad()[0], 11.0);
  EXPECT_DOUBLE_EQ(b.grad()[0], 3.0);
}

TEST(Autograd, NoGradRecordsNothing) {
  Var<double> a(Tensor<double>({2}, 1.0), true);
  NoGradGuard ng;
  auto y = mul(a, a);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, SteRoundPassesGradientThrough) {
  Var<double> a(Tensor<double>({3}), true);
  a.mutable_value()[0] = 0.4, a.mutable_value()[1] = 1.6, a.mutable_value()[2] = -2.5;
  auto y = ste_round(a);
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_EQ(y.value()[1], 2.0);
  EXPECT_EQ(y.value()[2], -3.0);  // half away from zero
  backward(sum(y));
  for (double g : a.grad().vec()) EXPECT_EQ(g, 1.0);
}

// Property: conv2d is linear in its input.
TEST(Conv2dProperty, LinearInInput) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto x1 = random_tensor({2, 6, 6}, rng), x2 = random_tensor({2, 6, 6}, rng), w = random_tensor({3, 2, 3, 3}, rng);
    Var<double> zb(Tensor<double>({3}));
    Tensor<double> xs = x1;
    xs += x2;
    auto y = conv2d(Var<double>(xs), Var<double>(w), zb, 1, 1).value();
    auto y1 = conv2d(Var<double>(x1), Var<double>(w), zb, 1, 1).value();
    auto y2 = conv2d(Var<double>(x2), Var<double>(w), zb, 1, 1).value();
    for (size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], y1[i] + y2[i], 1e-12);
  }
}

}  // namespace
}  // namespace lrvc
