#pragma once

// ECTF tensor container:
//   "ECTF" | version u32 (=1) | entry count u32 |
//   per entry: name length u32, UTF-8 name, h u32, w u32, c u32,
//              h*w*c float32 values in (row, col, channel) order.
// All integers and floats little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "eclad/errors.hpp"
#include "eclad/tensor.hpp"

namespace eclad::ectf {

inline constexpr std::array<char, 4> kMagic{'E', 'C', 'T', 'F'};
inline constexpr std::uint32_t kVersion = 1;

struct Entry {
  std::string name;
  Tensor3 tensor;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw InvalidArgument("ECTF: truncated data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode(const std::vector<Entry>& entries) {
  std::string out(kMagic.begin(), kMagic.end());
  detail::put_u32(out, kVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.append(e.name);
    detail::put_u32(out, static_cast<std::uint32_t>(e.tensor.height()));
    detail::put_u32(out, static_cast<std::uint32_t>(e.tensor.width()));
    detail::put_u32(out, static_cast<std::uint32_t>(e.tensor.channels()));
    for (float f : e.tensor.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<Entry> decode(std::string_view bytes) {
  detail::Reader in(bytes);
  const auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw InvalidArgument("ECTF: bad magic");
  }
  const std::uint32_t version = in.u32();
  if (version != kVersion) {
    throw InvalidArgument("ECTF: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  std::vector<Entry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = std::string(in.take(in.u32()));
    const std::size_t h = in.u32();
    const std::size_t w = in.u32();
    const std::size_t c = in.u32();
    std::vector<float> data(h * w * c);
    for (auto& f : data) f = std::bit_cast<float>(in.u32());
    e.tensor = Tensor3(h, w, c, std::move(data));
    entries.push_back(std::move(e));
  }
  if (!in.done()) throw InvalidArgument("ECTF: trailing bytes after last entry");
  return entries;
}

inline void write_file(const std::filesystem::path& path, const std::vector<Entry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode(entries);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<Entry> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

inline const Tensor3& find(const std::vector<Entry>& entries, std::string_view name) {
  for (const auto& e : entries) {
    if (e.name == name) return e.tensor;
  }
  throw InvalidArgument("ECTF: no entry named '" + std::string(name) + "'");
}

}  // namespace eclad::ectf

namespace eclad::base64 {

inline std::string encode(std::string_view bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const auto n = (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << 16) |
                   (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 1])) << 8) |
                   static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 2]));
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(kAlphabet[(n >> 6) & 63]);
    out.push_back(kAlphabet[n & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t n = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << 16;
    if (rest == 2) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + 1])) << 8;
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(n >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::string decode(std::string_view text) {
  auto value = [](char ch) -> int {
    if (ch >= 'A' && ch <= 'Z') return ch - 'A';
    if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
    if (ch >= '0' && ch <= '9') return ch - '0' + 52;
    if (ch == '+') return 62;
    if (ch == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw InvalidArgument("base64: length not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char ch = text[i + static_cast<std::size_t>(k)];
      if (ch == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        v[k] = value(ch);
        if (v[k] < 0 || pad > 0) throw InvalidArgument("base64: invalid character");
      }
    }
    const auto n = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                   (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
    out.push_back(static_cast<char>((n >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<char>((n >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<char>(n & 0xff));
  }
  return out;
}

}  // namespace eclad::base64
