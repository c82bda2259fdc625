#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "eclad/ectf.hpp"
#include "test_util.hpp"

using namespace eclad;

TEST(Ectf, RoundTripIsBitIdentical) {
  std::mt19937_64 gen(11);
  std::vector<ectf::Entry> entries;
  entries.push_back({"stage1", testutil::random_tensor(gen, 4, 5, 3)});
  entries.push_back({"stage2", testutil::random_tensor(gen, 2, 2, 7)});
  entries.push_back({"empty", Tensor3(0, 0, 0)});
  const testutil::TempDir dir("ectf");
  ectf::write_file(dir / "x.ectf", entries);
  const auto back = ectf::read_file(dir / "x.ectf");
  ASSERT_EQ(back.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    EXPECT_EQ(back[i].name, entries[i].name);
    EXPECT_TRUE(back[i].tensor.same_shape(entries[i].tensor));
    EXPECT_EQ(std::memcmp(back[i].tensor.data().data(), entries[i].tensor.data().data(),
                          entries[i].tensor.size() * sizeof(float)),
              0);
  }
}

TEST(Ectf, ByteLayout) {
  const std::string bytes = ectf::encode({{"ab", Tensor3(1, 1, 1, std::vector<float>{1.0f})}});
  // magic, version, count, name length, name, h, w, c, one float
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 2 + 12 + 4);
  EXPECT_EQ(bytes.substr(0, 4), "ECTF");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);
  EXPECT_EQ(bytes.substr(16, 2), "ab");
  // 1.0f little-endian = 00 00 80 3f
  EXPECT_EQ(static_cast<unsigned char>(bytes[32]), 0x80);
  EXPECT_EQ(static_cast<unsigned char>(bytes[33]), 0x3f);
}

TEST(Ectf, RejectsCorruptInput) {
  std::string bytes = ectf::encode({{"a", Tensor3(2, 2, 1)}});
  EXPECT_THROW(ectf::decode(bytes.substr(0, bytes.size() - 1)), InvalidArgument);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(ectf::decode(bad_magic), InvalidArgument);
  std::string bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(ectf::decode(bad_version), InvalidArgument);
  EXPECT_THROW(ectf::find(ectf::decode(bytes), "missing"), InvalidArgument);
}

TEST(Base64, RoundTrip) {
  std::mt19937_64 gen(12);
  for (std::size_t n = 0; n < 20; ++n) {
    std::string s(n, '\0');
    for (char& ch : s) ch = static_cast<char>(gen() & 0xff);
    EXPECT_EQ(base64::decode(base64::encode(s)), s);
  }
  EXPECT_EQ(base64::encode("Man"), "TWFu");
  EXPECT_EQ(base64::encode("Ma"), "TWE=");
}
