#pragma once

// 8-bit image IO: binary PPM (P6) and PNG. The PNG path supports
// non-interlaced 8-bit grayscale and RGB with all five row filters on read
// and writes unfiltered rows; zlib supplies inflate/deflate and CRC.

#include <zlib.h>

#include <cstdint>
#include <string>
#include <vector>

#include "pixnet/common.hpp"
#include "pixnet/io/binary.hpp"

namespace pixnet::io {

struct ImageU8 {
  int h = 0, w = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved rows

  std::uint8_t at(int i, int j, int c) const {
    return pixels[(static_cast<std::size_t>(i) * w + j) * channels + c];
  }
};

// ---- PPM (P6, maxval 255) ----

inline ImageU8 read_ppm(const std::string& path) {
  const auto buf = read_file(path);
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (buf[pos] == ' ' || buf[pos] == '\t' || buf[pos] == '\n' || buf[pos] == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_ws();
    if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9')
      throw DataError(path + ": malformed PPM header");
    long v = 0;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') v = v * 10 + (buf[pos++] - '0');
    return v;
  };
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') throw DataError(path + ": not a P6 PPM");
  pos = 2;
  const long w = read_int(), h = read_int(), maxval = read_int();
  if (w <= 0 || h <= 0) throw DataError(path + ": bad PPM extents");
  if (maxval != 255) throw DataError(path + ": only 8-bit PPM supported");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (buf.size() - pos < need) throw DataError(path + ": truncated PPM payload");
  ImageU8 img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.channels = 3;
  img.pixels.assign(buf.begin() + static_cast<long>(pos), buf.begin() + static_cast<long>(pos + need));
  return img;
}

inline void write_ppm(const std::string& path, const ImageU8& img) {
  if (img.channels != 3) throw ArgumentError("write_ppm: RGB image required");
  std::string header = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  write_file(path, out);
}

// ---- PNG ----

inline const std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

inline bool has_png_signature(const std::vector<std::uint8_t>& buf) {
  if (buf.size() < 8) return false;
  for (int i = 0; i < 8; ++i)
    if (buf[static_cast<std::size_t>(i)] != kPngSig[i]) return false;
  return true;
}

namespace pngdetail {

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

inline void unfilter(std::vector<std::uint8_t>& raw, int h, int row_bytes, int bpp,
                     const std::string& path) {
  // raw holds h rows of (1 filter byte + row_bytes); unfiltered in place
  for (int y = 0; y < h; ++y) {
    std::uint8_t* row = raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1);
    const std::uint8_t filter = row[0];
    std::uint8_t* cur = row + 1;
    const std::uint8_t* prev =
        y > 0 ? raw.data() + static_cast<std::size_t>(y - 1) * (row_bytes + 1) + 1 : nullptr;
    switch (filter) {
      case 0:
        break;
      case 1:
        for (int i = bpp; i < row_bytes; ++i) cur[i] = static_cast<std::uint8_t>(cur[i] + cur[i - bpp]);
        break;
      case 2:
        if (prev)
          for (int i = 0; i < row_bytes; ++i) cur[i] = static_cast<std::uint8_t>(cur[i] + prev[i]);
        break;
      case 3:
        for (int i = 0; i < row_bytes; ++i) {
          const int left = i >= bpp ? cur[i - bpp] : 0;
          const int up = prev ? prev[i] : 0;
          cur[i] = static_cast<std::uint8_t>(cur[i] + (left + up) / 2);
        }
        break;
      case 4:
        for (int i = 0; i < row_bytes; ++i) {
          const int left = i >= bpp ? cur[i - bpp] : 0;
          const int up = prev ? prev[i] : 0;
          const int ul = (prev && i >= bpp) ? prev[i - bpp] : 0;
          cur[i] = static_cast<std::uint8_t>(cur[i] + paeth(left, up, ul));
        }
        break;
      default:
        throw DataError(path + ": unknown PNG filter type " + std::to_string(filter));
    }
  }
}

}  // namespace pngdetail

inline ImageU8 read_png(const std::string& path) {
  const auto buf = read_file(path);
  if (!has_png_signature(buf)) throw DataError(path + ": not a PNG file");
  Reader rd(buf, path);
  rd.take(8);

  int width = 0, height = 0, channels = 0;
  bool seen_ihdr = false, seen_iend = false;
  std::vector<std::uint8_t> idat;
  while (!rd.at_end()) {
    const std::uint32_t len = rd.u32be();
    const std::uint8_t* type = rd.take(4);
    const std::uint8_t* data = rd.take(len);
    const std::uint32_t want_crc = rd.u32be();
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, type, 4);
    crc = crc32(crc, data, len);
    if (crc != want_crc) throw DataError(path + ": PNG chunk CRC mismatch");
    const std::string tag(reinterpret_cast<const char*>(type), 4);
    if (tag == "IHDR") {
      if (len != 13) throw DataError(path + ": bad IHDR");
      width = static_cast<int>((data[0] << 24) | (data[1] << 16) | (data[2] << 8) | data[3]);
      height = static_cast<int>((data[4] << 24) | (data[5] << 16) | (data[6] << 8) | data[7]);
      const int bit_depth = data[8], color_type = data[9], interlace = data[12];
      if (width <= 0 || height <= 0) throw DataError(path + ": bad PNG extents");
      if (bit_depth != 8) throw DataError(path + ": only 8-bit PNG supported");
      if (color_type == 0)
        channels = 1;
      else if (color_type == 2)
        channels = 3;
      else
        throw DataError(path + ": unsupported PNG color type " + std::to_string(color_type));
      if (interlace != 0) throw DataError(path + ": interlaced PNG not supported");
      seen_ihdr = true;
    } else if (tag == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (tag == "IEND") {
      seen_iend = true;
      break;
    }  // ancillary chunks skipped
  }
  if (!seen_ihdr || !seen_iend || idat.empty()) throw DataError(path + ": incomplete PNG");

  const int row_bytes = width * channels;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (row_bytes + 1));
  uLongf dest_len = static_cast<uLongf>(raw.size());
  const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || dest_len != raw.size()) throw DataError(path + ": PNG inflate failed");
  pngdetail::unfilter(raw, height, row_bytes, channels, path);

  ImageU8 img;
  img.h = height;
  img.w = width;
  img.channels = channels;
  img.pixels.resize(static_cast<std::size_t>(height) * row_bytes);
  for (int y = 0; y < height; ++y)
    std::copy(raw.begin() + static_cast<long>(y) * (row_bytes + 1) + 1,
              raw.begin() + static_cast<long>(y) * (row_bytes + 1) + 1 + row_bytes,
              img.pixels.begin() + static_cast<long>(y) * row_bytes);
  return img;
}

inline void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ArgumentError("write_png: 1 or 3 channels required");
  const int row_bytes = img.w * img.channels;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.h) * (row_bytes + 1), 0);
  for (int y = 0; y < img.h; ++y)
    std::copy(img.pixels.begin() + static_cast<long>(y) * row_bytes,
              img.pixels.begin() + static_cast<long>(y + 1) * row_bytes,
              raw.begin() + static_cast<long>(y) * (row_bytes + 1) + 1);

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(bound);
  if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw DataError("write_png: deflate failed");
  z.resize(bound);

  Writer wr;
  wr.bytes(kPngSig, 8);
  auto chunk = [&wr](const char* tag, const std::vector<std::uint8_t>& data) {
    wr.u32be(static_cast<std::uint32_t>(data.size()));
    const std::size_t type_pos = wr.buf.size();
    wr.bytes(tag, 4);
    wr.bytes(data.data(), data.size());
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, wr.buf.data() + type_pos, static_cast<uInt>(4 + data.size()));
    wr.u32be(crc);
  };
  std::vector<std::uint8_t> ihdr(13, 0);
  const auto be = [](std::uint8_t* p, std::uint32_t v) {
    p[0] = static_cast<std::uint8_t>(v >> 24);
    p[1] = static_cast<std::uint8_t>(v >> 16);
    p[2] = static_cast<std::uint8_t>(v >> 8);
    p[3] = static_cast<std::uint8_t>(v);
  };
  be(ihdr.data(), static_cast<std::uint32_t>(img.w));
  be(ihdr.data() + 4, static_cast<std::uint32_t>(img.h));
  ihdr[8] = 8;                                        // bit depth
  ihdr[9] = img.channels == 1 ? 0 : 2;                // gray / rgb
  chunk("IHDR", ihdr);
  chunk("IDAT", z);
  chunk("IEND", {});
  write_file(path, wr.buf);
}

}  // namespace pixnet::io
