#include <gtest/gtest.h>

#include <cstring>
#include <limits>
#include <string>

#include "ppcn/ptns.hpp"
#include "support.hpp"

namespace ppcn::io {
namespace {

using ppcn::testing::TempDir;

TEST(Crc32, StandardCheckValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}), 0xCBF43926u);
  EXPECT_EQ(crc32({}), 0u);
}

TEST(Ptns, HeaderLayoutIsLittleEndian) {
  const float v[] = {1.0f, -2.5f, 0.0f, 3.25f, 7.0f, 8.0f};
  auto bytes = PtnsArray::from({2, 3}, v).encode();
  ASSERT_EQ(bytes.size(), 4 + 3 + 2 * 4 + 6 * 4 + 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PTNS");
  EXPECT_EQ(bytes[4], 1);  // version
  EXPECT_EQ(bytes[5], 1);  // f32
  EXPECT_EQ(bytes[6], 2);  // ndim
  EXPECT_EQ(bytes[7], 2);
  EXPECT_EQ(bytes[8], 0);
  EXPECT_EQ(bytes[11], 3);
  float second;
  std::memcpy(&second, bytes.data() + 15 + 4, 4);
  EXPECT_EQ(second, -2.5f);
  const std::span<const std::uint8_t> payload(bytes.data() + 15, 24);
  const std::uint32_t crc = crc32(payload);
  EXPECT_EQ(bytes[39], crc & 0xFF);
  EXPECT_EQ(bytes[42], crc >> 24);
}

TEST(Ptns, RoundTripsEveryDtypeBitExactly) {
  std::vector<float> f = {0.1f, -0.0f, std::numeric_limits<float>::denorm_min(), 1e30f};
  std::vector<double> d = {0.1, -0.0, std::numeric_limits<double>::denorm_min(), 1e300, 2, 3};
  std::vector<std::uint8_t> u = {0, 1, 255};
  for (const auto& a : {PtnsArray::from({2, 2}, f), PtnsArray::from({1, 2, 3}, d), PtnsArray::from({3}, u)}) {
    const auto bytes = a.encode();
    std::size_t pos = 0;
    const auto b = PtnsArray::decode(bytes, pos, "mem");
    EXPECT_EQ(pos, bytes.size());
    EXPECT_EQ(a, b);
    EXPECT_EQ(b.encode(), bytes);
  }
  std::size_t pos = 0;
  auto back = PtnsArray::decode(PtnsArray::from({2, 2}, f).encode(), pos, "mem").as_f32();
  EXPECT_EQ(std::memcmp(back.data(), f.data(), f.size() * 4), 0);
  EXPECT_THROW(PtnsArray::from({3}, u).as_f32(), FormatError);
}

TEST(Ptns, FileRoundTrip) {
  TempDir dir("ptns");
  std::vector<double> d(60);
  ppcn::testing::fill_random(d, 1);
  const auto a = PtnsArray::from({3, 4, 5}, d);
  write_ptns(dir / "a.ptns", a);
  EXPECT_EQ(read_ptns(dir / "a.ptns"), a);
  EXPECT_EQ(read_ptns(dir / "a.ptns").as_f64(), d);
}

TEST(Ptns, DimsMustMatchValues) {
  std::vector<float> f(5);
  EXPECT_THROW(PtnsArray::from({2, 3}, f), StructuralError);
}

class PtnsCorruption : public ::testing::Test {
 protected:
  std::vector<std::uint8_t> bytes = PtnsArray::from({4}, std::vector<float>{1, 2, 3, 4}).encode();
  void expect_format_error(const std::vector<std::uint8_t>& b, const std::string& fragment) {
    std::size_t pos = 0;
    try {
      PtnsArray::decode(b, pos, "sample.ptns");
      FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
      const std::string what = e.what();
      EXPECT_NE(what.find("sample.ptns"), std::string::npos) << what;
      EXPECT_NE(what.find(fragment), std::string::npos) << what;
    }
  }
};

TEST_F(PtnsCorruption, BadMagic) {
  bytes[0] = 'X';
  expect_format_error(bytes, "magic");
}

TEST_F(PtnsCorruption, VersionMismatch) {
  bytes[4] = 2;
  expect_format_error(bytes, "version");
}

TEST_F(PtnsCorruption, UnknownDtype) {
  bytes[5] = 9;
  expect_format_error(bytes, "dtype");
}

TEST_F(PtnsCorruption, PayloadFlipFailsCrc) {
  bytes[14] ^= 1;
  expect_format_error(bytes, "CRC");
}

TEST_F(PtnsCorruption, EveryTruncationIsRejected) {
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + n);
    std::size_t pos = 0;
    EXPECT_THROW(PtnsArray::decode(cut, pos, "cut"), FormatError) << n;
  }
}

TEST(Ptns, TrailingBytesInFileRejected) {
  TempDir dir("trail");
  auto bytes = PtnsArray::from({1}, std::vector<float>{1}).encode();
  bytes.push_back(0);
  write_file_atomic(dir / "t.ptns", bytes);
  EXPECT_THROW(read_ptns(dir / "t.ptns"), FormatError);
}

TEST(Ptns, MissingFileIsIoErrorNamingPath) {
  TempDir dir("missing");
  try {
    read_ptns(dir / "nope.ptns");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.ptns"), std::string::npos);
  }
}

TEST(Files, AtomicWriteLeavesNoTemporaries) {
  TempDir dir("atomic");
  write_text_atomic(dir / "x.txt", "hello");
  write_text_atomic(dir / "x.txt", "world");
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  EXPECT_EQ(files, 1);
  const auto b = read_file(dir / "x.txt");
  EXPECT_EQ(std::string(b.begin(), b.end()), "world");
}

}  // namespace
}  // namespace ppcn::io
