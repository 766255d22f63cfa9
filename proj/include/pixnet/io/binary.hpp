#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pixnet/common.hpp"

namespace pixnet::io {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("short write: " + path);
}

// sequential reader with hard bounds, little-endian integer helpers
struct Reader {
  const std::uint8_t* p;
  std::size_t len, pos = 0;
  std::string name;

  Reader(const std::vector<std::uint8_t>& buf, std::string n)
      : p(buf.data()), len(buf.size()), name(std::move(n)) {}

  void need(std::size_t n) const {
    if (pos + n > len) throw DataError(name + ": truncated file");
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* q = p + pos;
    pos += n;
    return q;
  }
  std::uint32_t u32le() {
    const std::uint8_t* q = take(4);
    return static_cast<std::uint32_t>(q[0]) | (static_cast<std::uint32_t>(q[1]) << 8) |
           (static_cast<std::uint32_t>(q[2]) << 16) | (static_cast<std::uint32_t>(q[3]) << 24);
  }
  std::uint64_t u64le() {
    std::uint64_t v = 0;
    const std::uint8_t* q = take(8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | q[i];
    return v;
  }
  std::uint32_t u32be() {
    const std::uint8_t* q = take(4);
    return (static_cast<std::uint32_t>(q[0]) << 24) | (static_cast<std::uint32_t>(q[1]) << 16) |
           (static_cast<std::uint32_t>(q[2]) << 8) | static_cast<std::uint32_t>(q[3]);
  }
  float f32le() {
    std::uint32_t bits = u32le();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  bool at_end() const { return pos == len; }
};

struct Writer {
  std::vector<std::uint8_t> buf;

  void bytes(const void* data, std::size_t n) {
    const auto* q = static_cast<const std::uint8_t*>(data);
    buf.insert(buf.end(), q, q + n);
  }
  void u32le(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void u64le(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void u32be(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f32le(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32le(bits);
  }
};

}  // namespace pixnet::io
