#include <gtest/gtest.h>

#include "gradient_probes.hpp"

namespace lrvc {
namespace {

void expect_ok(const GradCheckResult& r) {
  EXPECT_TRUE(r.ok) << r.first_failure;
  EXPECT_GT(r.checked, 0u);
}

TEST(GradCheck, Warp) { expect_ok(probes::warp_probe()); }
TEST(GradCheck, DeformableAlign) { expect_ok(probes::deformable_align_probe()); }
TEST(GradCheck, RefineMotion) { expect_ok(probes::refine_motion_probe()); }
TEST(GradCheck, FeatureMotionOffsets) { expect_ok(probes::feature_motion_offsets_probe()); }
TEST(GradCheck, QuantProxy) { expect_ok(probes::quant_proxy_probe()); }

TEST(GradCheck, ElementwiseOps) {
  std::mt19937_64 rng(1);
  Var<double> a(probes::uniform({2, 3, 3}, rng, 0.2, 1.5)), b(probes::uniform({2, 3, 3}, rng, 0.2, 1.5));
  auto f = [](const std::vector<Var<double>>& v) {
    Var<double> s = add(mul(v[0], v[1]), div(v[0], v[1]));
    s = add(s, add(softplus(v[0]), sigmoid(v[1])));
    s = add(s, add(tanh(v[0]), pow_scalar(v[1], 0.37)));
    return add(s, leaky_relu(sub(v[0], v[1])));
  };
  expect_ok(gradcheck(f, {a, b}));
}

TEST(GradCheck, ResamplingOps) {
  std::mt19937_64 rng(2);
  Var<double> x(probes::uniform({4, 5, 6}, rng, -1, 1));
  auto f = [](const std::vector<Var<double>>& v) {
    Var<double> up = upsample_bilinear2(avg_pool2(v[0], 1, 0), 2.0);
    Var<double> ps = pixel_shuffle2(v[0]);
    return add(mean(up), mean(square(ps)));
  };
  expect_ok(gradcheck(f, {x}));
}

TEST(GradCheck, LaplaceBitsAcrossRegions) {
  std::mt19937_64 rng(3);
  // Values near the mean, in both tails and far enough out to hit the floor
  // are all exercised.
  Var<double> v(probes::uniform({1, 4, 6}, rng, -12, 12)), mu(probes::uniform({1, 4, 6}, rng, -1, 1)),
      b(probes::uniform({1, 4, 6}, rng, 0.3, 3));
  auto f = [](const std::vector<Var<double>>& in) { return laplace_bits(in[0], in[1], in[2]); };
  expect_ok(gradcheck(f, {v, mu, b}));
}

TEST(GradCheck, MsssimBuildingBlocks) {
  std::mt19937_64 rng(4);
  Var<double> x(probes::uniform({2, 14, 13}, rng, 0, 1));
  std::vector<double> k = {0.25, 0.5, 0.25};
  auto f = [&](const std::vector<Var<double>>& v) { return channel_mean(separable_filter_valid(v[0], k)); };
  expect_ok(gradcheck(f, {x}));
}

}  // namespace
}  // namespace lrvc
