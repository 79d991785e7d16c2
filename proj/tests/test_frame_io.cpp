#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "lrvc/io/frame_io.hpp"
#include "lrvc/io/synthetic.hpp"

namespace lrvc {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
  auto d = fs::temp_directory_path() / ("lrvc_frame_io_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

void write_bytes(const fs::path& p, const std::vector<uint8_t>& b) {
  std::ofstream o(p, std::ios::binary);
  o.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

SequenceConfig seq(int w, int h, int n) {
  SequenceConfig c;
  c.width = w;
  c.height = h;
  c.frame_count = n;
  return c;
}

TEST(ReadYuv420, FlatMidCodeIsMidGray) {
  const auto p = temp_dir() / "flat.yuv";
  write_bytes(p, std::vector<uint8_t>(24, 128));
  const auto frames = read_yuv420(p.string(), seq(4, 4, 1));
  ASSERT_EQ(frames.size(), 1u);
  const double gray = (128.0 - 16.0) / 219.0;
  for (float v : frames[0].planes.vec()) EXPECT_NEAR(v, gray, 1e-6);
  EXPECT_EQ(frames[0].planes.shape(), (std::vector<int>{3, 4, 4}));
}

TEST(ReadYuv420, FourByFourFrameIsTwentyFourBytes) {
  EXPECT_EQ(yuv420_frame_bytes(4, 4), 24u);
  std::vector<uint8_t> two(48);
  for (size_t i = 0; i < two.size(); ++i) two[i] = static_cast<uint8_t>(i);
  const auto p = temp_dir() / "two.yuv";
  write_bytes(p, two);
  const auto raw = read_yuv420_raw(p.string(), seq(4, 4, 2));
  ASSERT_EQ(raw.size(), 2u);
  EXPECT_EQ(raw[1].y.front(), 24);
  EXPECT_EQ(raw[1].u.front(), 40);
  EXPECT_EQ(raw[1].v.front(), 44);
  EXPECT_EQ(raw[1].v.back(), 47);
  EXPECT_EQ(read_yuv420_raw(p.string(), seq(4, 4, 1)).size(), 1u);
}

TEST(ReadYuv420, TruncationNamesByteOffset) {
  const auto p = temp_dir() / "short.yuv";
  write_bytes(p, std::vector<uint8_t>(30, 16));
  try {
    read_yuv420_raw(p.string(), seq(4, 4, 2));
    FAIL() << "expected truncation error";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("byte offset 30"), std::string::npos) << msg;
    EXPECT_NE(msg.find("frame 1"), std::string::npos) << msg;
  }
}

TEST(ReadYuv420, OddDimensionsAreRejected) {
  EXPECT_THROW(seq(5, 4, 1).validate(), std::invalid_argument);
  EXPECT_THROW(seq(4, 7, 1).validate(), std::invalid_argument);
  EXPECT_THROW(seq(0, 4, 1).validate(), std::invalid_argument);
  EXPECT_THROW(seq(4, 4, 0).validate(), std::invalid_argument);
}

TEST(ReadYuv420, RawRoundTripIsByteIdentical) {
  std::mt19937 rng(9);
  std::vector<uint8_t> bytes(yuv420_frame_bytes(6, 4) * 3);
  for (auto& b : bytes) b = static_cast<uint8_t>(rng());
  const auto a = temp_dir() / "rt_a.yuv", b = temp_dir() / "rt_b.yuv";
  write_bytes(a, bytes);
  write_yuv420_raw(b.string(), read_yuv420_raw(a.string(), seq(6, 4, 3)));
  std::ifstream in(b, std::ios::binary);
  std::vector<uint8_t> back((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(back, bytes);
}

TEST(ColorConversion, Bt709NominalRange) {
  for (auto m : {ColorMatrix::kBT709, ColorMatrix::kBT601}) {
    const auto white = ycbcr_to_rgb_unclipped(235, 128, 128, m);
    const auto black = ycbcr_to_rgb_unclipped(16, 128, 128, m);
    for (int c = 0; c < 3; ++c) {
      EXPECT_NEAR(white[c], 1.0, 1e-12);
      EXPECT_NEAR(black[c], 0.0, 1e-12);
    }
  }
}

// Oracle: the textbook BT.709 inverse written as an explicit matrix.
TEST(ColorConversion, Bt709MatchesExplicitMatrix) {
  const double m[3][3] = {{1.0, 0.0, 1.5748}, {1.0, -0.187324, -0.468124}, {1.0, 1.8556, 0.0}};
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(16, 235), c(16, 240);
  for (int i = 0; i < 200; ++i) {
    const double y = u(rng), cb = c(rng), cr = c(rng);
    const double yn = (y - 16) / 219, pb = (cb - 128) / 224, pr = (cr - 128) / 224;
    const auto rgb = ycbcr_to_rgb_unclipped(y, cb, cr, ColorMatrix::kBT709);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(rgb[k], m[k][0] * yn + m[k][1] * pb + m[k][2] * pr, 1e-5);
  }
}

TEST(ColorConversion, MatrixInverseRoundTrip) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0, 255);
  for (auto m : {ColorMatrix::kBT709, ColorMatrix::kBT601})
    for (int i = 0; i < 500; ++i) {
      const double y = u(rng), cb = u(rng), cr = u(rng);
      const auto rgb = ycbcr_to_rgb_unclipped(y, cb, cr, m);
      const auto back = rgb_to_ycbcr(rgb[0], rgb[1], rgb[2], m);
      EXPECT_NEAR(back[0], y, 1e-6);
      EXPECT_NEAR(back[1], cb, 1e-6);
      EXPECT_NEAR(back[2], cr, 1e-6);
    }
}

TEST(ColorConversion, InGamutYuvSurvivesRgbRoundTrip) {
  std::mt19937 rng(5);
  YuvFrame f;
  f.width = 8;
  f.height = 6;
  f.y.resize(48);
  f.u.resize(12);
  f.v.resize(12);
  for (auto& v : f.y) v = static_cast<uint8_t>(60 + rng() % 130);
  for (auto& v : f.u) v = static_cast<uint8_t>(118 + rng() % 20);
  for (auto& v : f.v) v = static_cast<uint8_t>(118 + rng() % 20);
  const auto rgb = yuv_to_rgb(f, ColorMatrix::kBT709);
  EXPECT_EQ(rgb_to_yuv420(rgb.planes, ColorMatrix::kBT709), f);
}

TEST(ColorConversion, UnknownMatrixIsAnError) {
  EXPECT_EQ(parse_matrix("bt601"), ColorMatrix::kBT601);
  EXPECT_THROW(parse_matrix("bt2020"), std::invalid_argument);
  EXPECT_THROW(parse_geometry("stretch"), std::invalid_argument);
}

TEST(Geometry, Pad1080To1088) {
  Tensor<float> x(1, 1080, 1920, 0.5f);
  const auto p = pad_to_multiple(x, 64);
  EXPECT_EQ(p.height(), 1088);
  EXPECT_EQ(p.width(), 1920);
}

TEST(Geometry, PadReplicatesBorder) {
  Tensor<float> x(1, 2, 3);
  for (int i = 0; i < 6; ++i) x[i] = static_cast<float>(i);
  const auto p = pad_to_multiple(x, 4);
  EXPECT_EQ(p.at(0, 3, 3), x.at(0, 1, 2));
  EXPECT_EQ(p.at(0, 0, 3), x.at(0, 0, 2));
  EXPECT_EQ(p.at(0, 3, 0), x.at(0, 1, 0));
}

TEST(Geometry, PadThenCropIsIdentity) {
  std::mt19937 rng(6);
  std::uniform_int_distribution<int> dim(1, 150);
  std::uniform_real_distribution<float> u(0, 1);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor<float> x(2, dim(rng), dim(rng));
    for (auto& v : x.vec()) v = u(rng);
    const auto p = pad_to_multiple(x, 64);
    EXPECT_EQ(p.height() % 64, 0);
    EXPECT_EQ(p.width() % 64, 0);
    EXPECT_LT(p.height() - x.height(), 64);
    EXPECT_EQ(crop_top_left(p, x.height(), x.width()), x);
  }
}

TEST(Geometry, CenterCropTenByTen) {
  Tensor<float> x(1, 10, 10);
  for (int y = 0; y < 10; ++y)
    for (int xx = 0; xx < 10; ++xx) x.at(0, y, xx) = static_cast<float>(100 * y + xx);
  const auto c = center_crop(x, 4, 6);
  ASSERT_EQ(c.height(), 4);
  ASSERT_EQ(c.width(), 6);
  EXPECT_EQ(c.at(0, 0, 0), 302.0f);  // row 3, col 2
  EXPECT_EQ(c.at(0, 3, 5), 607.0f);  // row 6, col 7
}

TEST(Geometry, CenterCrop1080To1024RemovesTwentyEightRowsEachSide) {
  Tensor<float> x(1, 1080, 8);
  for (int y = 0; y < 1080; ++y) x.at(0, y, 0) = static_cast<float>(y);
  const auto c = center_crop(x, 1024, 8);
  EXPECT_EQ(c.at(0, 0, 0), 28.0f);
  EXPECT_EQ(c.at(0, 1023, 0), 1051.0f);
  EXPECT_EQ(1080 - 1 - 1051, 28);
}

TEST(Geometry, NormalizeGeometryModes) {
  Frame f;
  f.planes = Tensor<float>(3, 1080, 130);
  f.orig_h = 1080;
  f.orig_w = 130;
  const auto padded = normalize_geometry(f, GeometryMode::kPad64);
  EXPECT_EQ(padded.planes.height(), 1088);
  EXPECT_EQ(padded.planes.width(), 192);
  EXPECT_EQ(padded.orig_h, 1080);
  const auto cropped = normalize_geometry(f, GeometryMode::kCenterCrop);
  EXPECT_EQ(cropped.planes.height(), 1024);
  EXPECT_EQ(cropped.planes.width(), 128);
  f.planes = Tensor<float>(3, 40, 130);
  EXPECT_THROW(normalize_geometry(f, GeometryMode::kCenterCrop), std::invalid_argument);
  EXPECT_THROW(center_crop(Tensor<float>(1, 4, 4), 5, 4), std::invalid_argument);
}

TEST(Descriptor, ParsesAndResolvesRelativePath) {
  const auto dir = temp_dir();
  {
    std::ofstream o(dir / "seq.txt");
    o << "# test sequence\npath=clip.yuv\nwidth=8\nheight=6\nframe_count=3\nintra_period=2\nmatrix=bt601\n"
         "geometry_mode=center_crop\n";
  }
  const auto c = SequenceConfig::from_descriptor((dir / "seq.txt").string());
  EXPECT_EQ(c.width, 8);
  EXPECT_EQ(c.height, 6);
  EXPECT_EQ(c.frame_count, 3);
  EXPECT_EQ(c.intra_period, 2);
  EXPECT_EQ(c.matrix, ColorMatrix::kBT601);
  EXPECT_EQ(c.geometry, GeometryMode::kCenterCrop);
  EXPECT_EQ(c.path, (dir / "clip.yuv").string());
  {
    std::ofstream o(dir / "bad.txt");
    o << "width=7\nheight=6\n";
  }
  EXPECT_THROW(SequenceConfig::from_descriptor((dir / "bad.txt").string()), std::invalid_argument);
}

TEST(Png, RoundTripOfEightBitValues) {
  std::mt19937 rng(7);
  Tensor<float> x(3, 5, 7);
  for (auto& v : x.vec()) v = static_cast<float>(rng() % 256) / 255.0f;
  const auto p = temp_dir() / "rt.png";
  write_png(p.string(), x);
  const auto back = read_png(p.string());
  ASSERT_EQ(back.shape(), x.shape());
  for (size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(back[i], x[i]);
  EXPECT_THROW(read_png((temp_dir() / "missing.png").string()), std::runtime_error);
}

TEST(Synthetic, IntegerMotionIsCircularShift) {
  SyntheticClip c;
  c.height = 32;
  c.width = 48;
  c.frames = 3;
  c.dx = 3;
  c.dy = -2;
  const auto clip = make_clip(c);
  ASSERT_EQ(clip.size(), 3u);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 48; ++x) {
      const int sx = ((x - 3) % 48 + 48) % 48, sy = ((y + 2) % 32 + 32) % 32;
      for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(clip[1].at(ch, y, x), clip[0].at(ch, sy, sx), 1e-5);
    }
}

TEST(Synthetic, SeedDeterminesContent) {
  SyntheticClip c;
  c.height = c.width = 16;
  c.frames = 2;
  c.noise = 0.02;
  EXPECT_EQ(make_clip(c), make_clip(c));
  auto d = c;
  d.seed = 2;
  EXPECT_NE(make_clip(c), make_clip(d));
}

}  // namespace
}  // namespace lrvc
