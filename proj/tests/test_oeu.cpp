#include <gtest/gtest.h>

#include <random>

#include "lrvc/io/synthetic.hpp"
#include "lrvc/train/oeu.hpp"

namespace lrvc {
namespace {

std::vector<Tensor<float>> clip(int size, int frames, uint64_t seed, double dx, double dy) {
  SyntheticClip c;
  c.height = c.width = size;
  c.frames = frames;
  c.seed = seed;
  c.dx = dx;
  c.dy = dy;
  c.noise = 0.01;
  return make_clip(c);
}

std::vector<int> xs(const std::vector<PatchOffset>& p) {
  std::vector<int> out;
  for (const auto& o : p)
    if (std::find(out.begin(), out.end(), o.x) == out.end()) out.push_back(o.x);
  return out;
}

std::vector<int> ys(const std::vector<PatchOffset>& p) {
  std::vector<int> out;
  for (const auto& o : p)
    if (std::find(out.begin(), out.end(), o.y) == out.end()) out.push_back(o.y);
  return out;
}

TEST(Patches, FullHdTiling) {
  const auto p = make_patches(1088, 1920, 448, 768);
  EXPECT_EQ(p.size(), 9u);
  EXPECT_EQ(xs(p), (std::vector<int>{0, 576, 1152}));
  EXPECT_EQ(ys(p), (std::vector<int>{0, 320, 640}));
}

TEST(Patches, ShorterFrame) {
  const auto p = make_patches(1024, 1920, 448, 768);
  EXPECT_EQ(p.size(), 9u);
  EXPECT_EQ(ys(p), (std::vector<int>{0, 288, 576}));
}

TEST(Patches, EqualOrLargerPatchIsOneAtOrigin) {
  EXPECT_EQ(make_patches(448, 768, 448, 768), (std::vector<PatchOffset>{{0, 0}}));
  EXPECT_EQ(make_patches(128, 128, 448, 768), (std::vector<PatchOffset>{{0, 0}}));
}

// Property: for any n > p, the offsets cover every pixel with the fewest
// patches, start at 0, end flush, and step uniformly up to rounding.
TEST(PatchesProperty, MinimalUniformCover) {
  std::mt19937 rng(4);
  std::uniform_int_distribution<int> len(2, 3000);
  for (int trial = 0; trial < 500; ++trial) {
    int n = len(rng), p = len(rng);
    if (p >= n) std::swap(n, p);
    if (p == n) continue;
    const auto o = patch_offsets_1d(n, p);
    std::vector<bool> covered(n, false);
    for (int s : o)
      for (int i = s; i < s + p; ++i) covered.at(i) = true;
    EXPECT_TRUE(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; })) << n << "/" << p;
    EXPECT_LT(int(o.size() - 1) * p, n) << "one fewer patch would also cover";
    EXPECT_EQ(o.front(), 0);
    EXPECT_EQ(o.back(), n - p);
    // |o_i - i (n - p) / (k - 1)| <= 1/2, in exact integers.
    const long k1 = long(o.size()) - 1;
    for (long i = 0; i <= k1; ++i) EXPECT_LE(std::abs(2 * o[i] * k1 - 2 * i * (n - p)), k1);
  }
}

TEST(OEUMode, ParsesCliSpellings) {
  EXPECT_EQ(parse_oeu_mode("off"), OEUMode::kOff);
  EXPECT_EQ(parse_oeu_mode("downsample"), OEUMode::kDownsample);
  EXPECT_EQ(parse_oeu_mode("crop-all"), OEUMode::kCropAll);
  EXPECT_EQ(parse_oeu_mode("crop-firstT"), OEUMode::kCropFirstT);
  for (auto m : {OEUMode::kOff, OEUMode::kDownsample, OEUMode::kCropAll, OEUMode::kCropFirstT})
    EXPECT_EQ(parse_oeu_mode(oeu_mode_name(m)), m);
  EXPECT_THROW(parse_oeu_mode("crop"), std::invalid_argument);
}

TEST(OEUSet, EncoderSideOnly) {
  VideoCodec<float> c(ModelConfig::reduced(), 1);
  int hits = 0;
  for (const auto& p : c.store().params())
    if (in_oeu_set(p.group)) {
      EXPECT_EQ(p.side, Side::kEncoder) << p.name;
      ++hits;
    }
  EXPECT_GT(hits, 0);
  for (const auto& g : kOEUGroups) EXPECT_EQ(g.rfind("p.", 0), 0u) << g;
}

TEST(OEUClips, ShapesPerMode) {
  const auto gop = clip(192, 10, 1, 1, 1);
  OEUConfig c;
  c.patch_h = c.patch_w = 128;
  c.frames = 4;
  c.mode = OEUMode::kCropFirstT;
  auto k = oeu_clips(gop, c);
  ASSERT_EQ(k.size(), 4u);
  EXPECT_EQ(k[0].size(), 4u);
  EXPECT_EQ(k[3][0].height(), 128);
  // Last patch is flush with the bottom-right corner.
  EXPECT_EQ(k[3][2].at(1, 127, 127), gop[2].at(1, 191, 191));
  c.mode = OEUMode::kCropAll;
  EXPECT_EQ(oeu_clips(gop, c)[0].size(), 10u);
  c.mode = OEUMode::kDownsample;
  k = oeu_clips(gop, c);
  ASSERT_EQ(k.size(), 1u);
  EXPECT_EQ(k[0].size(), 4u);
  EXPECT_EQ(k[0][0].height(), 128);  // 96 rounded up to a 64-multiple
  EXPECT_FLOAT_EQ(k[0][1].at(0, 5, 7),
                  (gop[1].at(0, 10, 14) + gop[1].at(0, 10, 15) + gop[1].at(0, 11, 14) + gop[1].at(0, 11, 15)) / 4);
  c.mode = OEUMode::kCropFirstT;
  c.patch_h = 100;
  EXPECT_THROW(oeu_clips(gop, c), std::invalid_argument);
}

TEST(OEUUpdate, OnlyTheUpdateSetChanges) {
  VideoCodec<float> c(ModelConfig::reduced(), 2);
  const VideoCodec<float> before = c.clone();
  OEUConfig oc;
  oc.frames = 3;
  oc.steps = 2;
  oc.lr = 1e-3;
  const auto rep = oeu_update(c, clip(64, 5, 2, 1, 0), oc);
  EXPECT_EQ(rep.step_loss.size(), 2u);
  EXPECT_EQ(rep.frames_touched, 3);
  const auto& a = before.store().params();
  const auto& b = c.store().params();
  ASSERT_EQ(a.size(), b.size());
  int changed = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool same = a[i].var.value().vec() == b[i].var.value().vec();
    if (!in_oeu_set(a[i].group) || a[i].side == Side::kDecoder) {
      EXPECT_TRUE(same) << a[i].name;
    }
    if (!same) ++changed;
  }
  EXPECT_GT(changed, 0);
}

TEST(OEUUpdate, OffIsANoOp) {
  VideoCodec<float> c(ModelConfig::reduced(), 3);
  const auto before = c.clone();
  OEUConfig oc;
  oc.mode = OEUMode::kOff;
  const auto rep = oeu_update(c, clip(64, 3, 3, 1, 0), oc);
  EXPECT_TRUE(rep.step_loss.empty());
  for (size_t i = 0; i < c.store().params().size(); ++i)
    EXPECT_EQ(c.store().params()[i].var.value().vec(), before.store().params()[i].var.value().vec());
}

TEST(GopRd, ClosedForm) {
  EncodedGop<float> g;
  g.recon = {Tensor<float>(3, 64, 64, 0.5f), Tensor<float>(3, 64, 64, 0.25f)};
  g.stats.resize(2);
  g.stats[0].bytes = 512;
  g.stats[1].bytes = 64;
  g.frames.resize(2);
  const std::vector<Tensor<float>> x = {Tensor<float>(3, 64, 64, 0.5f), Tensor<float>(3, 64, 64, 0.5f),
                                        Tensor<float>(3, 64, 64, 0.0f)};
  // Frame 1 against x[1] is exact; frame 2 against x[2] has MSE 1/16.
  const double expect = ((0 + 4096.0 / 4096) + (100.0 / 16 + 512.0 / 4096)) / 2;
  EXPECT_DOUBLE_EQ(gop_rd(g, x, 1, 100.0), expect);
}

// Adaptations are scoped to one GOP: the second GOP of a sequence encodes
// exactly as it would alone, and the caller's codec is untouched.
TEST(OEUEncoder, PerGopResetAndDecoderCompatibility) {
  VideoCodec<float> c(ModelConfig::reduced(), 4);
  const auto before = c.clone();
  const auto x = clip(64, 8, 5, 1, 1);
  OEUConfig oc;
  oc.frames = 3;
  oc.steps = 2;
  oc.lr = 1e-3;
  std::vector<OEUGopResult> res;
  std::vector<Tensor<float>> rec;
  const auto s = c.encode_sequence(x, 64, 64, 4, reference_backend(), &rec, nullptr,
                                   oeu_gop_encoder(x, oc, reference_backend(), 4, &res));
  ASSERT_EQ(res.size(), 2u);
  EXPECT_EQ(res[0].begin, 0u);
  EXPECT_EQ(res[1].begin, 4u);
  for (const auto& r : res) {
    EXPECT_EQ(r.update.step_loss.size(), 2u);
    EXPECT_EQ(r.adapted, r.rd_oeu < r.rd_plain);
  }
  for (size_t i = 0; i < c.store().params().size(); ++i)
    EXPECT_EQ(c.store().params()[i].var.value().vec(), before.store().params()[i].var.value().vec());

  const std::vector<Tensor<float>> tail(x.begin() + 4, x.end());
  std::vector<OEUGopResult> alone;
  const auto t = c.encode_sequence(tail, 64, 64, 4, reference_backend(), nullptr, nullptr,
                                   oeu_gop_encoder(tail, oc, reference_backend(), 4, &alone));
  for (size_t k = 0; k < 4; ++k) EXPECT_EQ(t.frames[k].chunks, s.frames[4 + k].chunks) << "frame " << k;

  const auto d = before.decode_sequence(parse(serialize(s)), reference_backend());
  for (size_t k = 0; k < d.size(); ++k) EXPECT_EQ(d[k], rec[k]) << "frame " << k;
}

// A briefly trained model adapted on a clip it has never seen.
class TrainedOEU : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto cfg = ModelConfig::reduced();
    cfg.lambda_index = 2;
    codec_ = new VideoCodec<float>(cfg, 1);
    std::vector<std::vector<Tensor<float>>> train = {clip(128, 8, 1, 1, 1), clip(128, 8, 2, 2, 1)};
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.lambda_index = 2;
    tc.crop = 64;
    Trainer<float> tr(*codec_, tc);
    const auto src = random_crop_source<float>(train, 64);
    tr.run_stage(Stage::kIFrame, 1, 300, src);
    tr.run_stage(Stage::kPFrame, 2, 300, src);
    tr.run_stage(Stage::kPFrame, 4, 150, src);
    held_ = clip(128, 12, 9, 1, 2);
  }
  static void TearDownTestSuite() { delete codec_; }

  struct Run {
    OEUGopResult gop;
    BitstreamContainer stream;
    std::vector<Tensor<float>> recon;
    double rd_emitted = 0;
  };

  static Run run(OEUMode m) {
    OEUConfig oc;
    oc.mode = m;
    oc.lr = 1e-4;
    oc.lambda_index = 2;
    std::vector<OEUGopResult> res;
    std::vector<FrameStats<float>> stats;
    Run r;
    r.stream = codec_->encode_sequence(held_, 128, 128, 12, reference_backend(), &r.recon, &stats,
                                       oeu_gop_encoder(held_, oc, reference_backend(), 12, &res));
    r.gop = res.at(0);
    for (size_t k = 0; k < held_.size(); ++k) {
      double se = 0;
      for (size_t i = 0; i < held_[k].size(); ++i) se += std::pow(double(r.recon[k][i]) - held_[k][i], 2);
      r.rd_emitted += kLambdas[2] * se / held_[k].size() + stats[k].bytes * 8.0 / (128 * 128);
    }
    r.rd_emitted /= held_.size();
    return r;
  }

  static VideoCodec<float>* codec_;
  static std::vector<Tensor<float>> held_;
};

VideoCodec<float>* TrainedOEU::codec_ = nullptr;
std::vector<Tensor<float>> TrainedOEU::held_;

TEST_F(TrainedOEU, FirstTBeatsPlainAndDecodesBitExactly) {
  const auto r = run(OEUMode::kCropFirstT);
  EXPECT_LE(r.gop.update.final_loss, r.gop.update.initial_loss);
  EXPECT_LT(r.gop.rd_oeu, r.gop.rd_plain);
  EXPECT_TRUE(r.gop.adapted);
  EXPECT_NEAR(r.rd_emitted, r.gop.rd_oeu, 1e-9 * r.rd_emitted);
  const auto d = codec_->decode_sequence(parse(serialize(r.stream)), reference_backend());
  for (size_t k = 0; k < d.size(); ++k) EXPECT_EQ(d[k], r.recon[k]) << "frame " << k;
}

TEST_F(TrainedOEU, FirstTTouchesFewerFramesInLessTime) {
  const auto first = run(OEUMode::kCropFirstT);
  const auto all = run(OEUMode::kCropAll);
  EXPECT_EQ(first.gop.update.frames_touched, 8);
  EXPECT_EQ(all.gop.update.frames_touched, 12);
  EXPECT_LT(first.gop.update.wall_ms, all.gop.update.wall_ms);
}

TEST_F(TrainedOEU, DownsampleImprovesLessThanFirstT) {
  const auto first = run(OEUMode::kCropFirstT);
  const auto down = run(OEUMode::kDownsample);
  EXPECT_LT(down.gop.rd_plain - down.gop.rd_oeu, first.gop.rd_plain - first.gop.rd_oeu);
  // Whatever the adaptation did, the emitted stream is the better of the two.
  EXPECT_NEAR(down.rd_emitted, std::min(down.gop.rd_oeu, down.gop.rd_plain), 1e-9 * down.rd_emitted);
  EXPECT_LE(down.rd_emitted, down.gop.rd_plain * (1 + 1e-12));
}

}  // namespace
}  // namespace lrvc
