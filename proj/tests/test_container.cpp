#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "lrvc/entropy/container.hpp"

namespace lrvc {
namespace {

std::vector<uint8_t> read_fixture(const std::string& name) {
  std::ifstream in(std::string(LRVC_FIXTURE_DIR) + "/" + name, std::ios::binary);
  EXPECT_TRUE(in.good()) << name;
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// Mirrors tests/fixtures/make_container_golden.py.
BitstreamContainer golden_container() {
  BitstreamContainer s;
  s.header.width = 1920;
  s.header.height = 1080;
  s.header.intra_period = 32;
  s.header.frame_count = 2;
  s.header.lambda_index = 1;
  s.header.config_digest = {1, 2, 3, 4, 5, 6, 7, 8};
  s.frames.push_back({FrameType::kIntra, {{1, 2, 3}, {}}});
  s.frames.push_back({FrameType::kInter, {{0xaa}, {0xbb, 0xcc}, {}, {0xff, 0xff, 0xff, 0xff, 0xff}}});
  return s;
}

BitstreamContainer random_container(std::mt19937& rng) {
  std::uniform_int_distribution<int> byte(0, 255), len(0, 40), frames(0, 9), period(1, 5);
  BitstreamContainer s;
  s.header.width = static_cast<uint16_t>(std::uniform_int_distribution<int>(1, 65535)(rng));
  s.header.height = static_cast<uint16_t>(std::uniform_int_distribution<int>(1, 65535)(rng));
  s.header.intra_period = static_cast<uint8_t>(period(rng));
  s.header.lambda_index = static_cast<uint8_t>(byte(rng) % 4);
  for (auto& d : s.header.config_digest) d = static_cast<uint8_t>(byte(rng));
  const int n = frames(rng);
  s.header.frame_count = static_cast<uint16_t>(n);
  for (int t = 0; t < n; ++t) {
    FramePayload f;
    f.type = frame_type_at(t, s.header.intra_period);
    for (size_t c = 0; c < expected_chunks(f.type); ++c) {
      std::vector<uint8_t> chunk(len(rng));
      for (auto& b : chunk) b = static_cast<uint8_t>(byte(rng));
      f.chunks.push_back(std::move(chunk));
    }
    s.frames.push_back(std::move(f));
  }
  return s;
}

TEST(Container, GoldenBytes) {
  const auto golden = read_fixture("container_golden.lrvc");
  ASSERT_EQ(golden.size(), 60u);
  EXPECT_EQ(serialize(golden_container()), golden);
  EXPECT_EQ(parse(golden), golden_container());
}

TEST(Container, HeaderIsTwentyOneBytes) {
  EXPECT_EQ(serialize_header(StreamHeader{}).size(), kHeaderBytes);
}

TEST(Container, ParseSerializeIdentity) {
  std::mt19937 rng(42);
  for (int i = 0; i < 300; ++i) {
    const auto s = random_container(rng);
    const auto bytes = serialize(s);
    EXPECT_EQ(parse(bytes), s);
    EXPECT_EQ(serialize(parse(bytes)), bytes);
  }
}

TEST(Container, DigestMismatchIsAnError) {
  const auto golden = read_fixture("container_golden.lrvc");
  ConfigDigest ok = {1, 2, 3, 4, 5, 6, 7, 8}, bad = ok;
  bad[7] ^= 1;
  EXPECT_NO_THROW(parse(golden, &ok));
  try {
    parse(golden, &bad);
    FAIL() << "expected a digest error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("digest mismatch"), std::string::npos) << e.what();
  }
}

TEST(Container, CorruptedDigestBytesAreDetected) {
  auto golden = read_fixture("container_golden.lrvc");
  golden[13] ^= 0x80;  // first digest byte
  ConfigDigest expect = {1, 2, 3, 4, 5, 6, 7, 8};
  EXPECT_THROW(parse(golden, &expect), FormatError);
}

TEST(Container, EveryTruncationIsAnError) {
  const auto golden = read_fixture("container_golden.lrvc");
  for (size_t n = 0; n < golden.size(); ++n) {
    std::vector<uint8_t> cut(golden.begin(), golden.begin() + n);
    EXPECT_THROW(parse(cut), FormatError) << "prefix " << n;
  }
}

TEST(Container, TruncationInsideAFrameNamesIt) {
  const auto golden = read_fixture("container_golden.lrvc");
  std::vector<uint8_t> cut(golden.begin(), golden.end() - 2);
  try {
    parse(cut);
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("frame 1 chunk 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("truncated at byte"), std::string::npos) << msg;
  }
}

TEST(Container, StructuralErrors) {
  auto golden = read_fixture("container_golden.lrvc");
  auto bad_magic = golden;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse(bad_magic), FormatError);
  auto bad_version = golden;
  bad_version[4] = 9;
  EXPECT_THROW(parse(bad_version), FormatError);
  auto trailing = golden;
  trailing.push_back(0);
  EXPECT_THROW(parse(trailing), FormatError);
  auto bad_type = golden;
  bad_type[kHeaderBytes] = 7;
  EXPECT_THROW(parse(bad_type), FormatError);
  auto bad_chunks = golden;
  bad_chunks[kHeaderBytes + 1] = 3;
  EXPECT_THROW(parse(bad_chunks), FormatError);
  auto zero_period = golden;
  zero_period[9] = 0;
  EXPECT_THROW(parse(zero_period), FormatError);
}

TEST(Container, SerializeChecksFrameCount) {
  auto s = golden_container();
  s.header.frame_count = 3;
  EXPECT_THROW(serialize(s), FormatError);
}

TEST(FrameSchedule, IntraEveryPeriod) {
  EXPECT_EQ(frame_type_at(0, 32), FrameType::kIntra);
  EXPECT_EQ(frame_type_at(31, 32), FrameType::kInter);
  EXPECT_EQ(frame_type_at(32, 32), FrameType::kIntra);
  EXPECT_EQ(frame_type_at(95, 32), FrameType::kInter);
  for (int t = 0; t < 20; ++t) EXPECT_EQ(frame_type_at(t, 1), FrameType::kIntra);
}

}  // namespace
}  // namespace lrvc
