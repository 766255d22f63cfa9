#pragma once

// GEXM raster: magic "GEXM", u32 version, u32 H, W, M, then H*W*M
// little-endian 32-bit reals, row-major with gene as the fastest axis.

#include <cstdint>
#include <string>
#include <vector>

#include "pixnet/common.hpp"
#include "pixnet/io/binary.hpp"

namespace pixnet::io {

struct GexmRaster {
  int h = 0, w = 0, m = 0;
  std::vector<float> values;  // index (i*w + j)*m + g

  float at(int i, int j, int g) const {
    return values[(static_cast<std::size_t>(i) * w + j) * m + g];
  }
  float& at(int i, int j, int g) {
    return values[(static_cast<std::size_t>(i) * w + j) * m + g];
  }
};

constexpr std::uint32_t kGexmVersion = 1;

inline void write_gexm(const std::string& path, const GexmRaster& raster) {
  if (raster.h <= 0 || raster.w <= 0 || raster.m <= 0)
    throw ArgumentError("write_gexm: extents must be positive");
  const std::size_t n = static_cast<std::size_t>(raster.h) * raster.w * raster.m;
  if (raster.values.size() != n) throw DimensionError("write_gexm: payload length mismatch");
  Writer wr;
  wr.bytes("GEXM", 4);
  wr.u32le(kGexmVersion);
  wr.u32le(static_cast<std::uint32_t>(raster.h));
  wr.u32le(static_cast<std::uint32_t>(raster.w));
  wr.u32le(static_cast<std::uint32_t>(raster.m));
  for (float v : raster.values) wr.f32le(v);
  write_file(path, wr.buf);
}

inline GexmRaster read_gexm(const std::string& path) {
  const auto buf = read_file(path);
  Reader rd(buf, path);
  const std::uint8_t* magic = rd.take(4);
  if (std::string(reinterpret_cast<const char*>(magic), 4) != "GEXM")
    throw DataError(path + ": not a GEXM raster (bad magic)");
  const std::uint32_t version = rd.u32le();
  if (version != kGexmVersion)
    throw DataError(path + ": unsupported GEXM version " + std::to_string(version));
  GexmRaster raster;
  raster.h = static_cast<int>(rd.u32le());
  raster.w = static_cast<int>(rd.u32le());
  raster.m = static_cast<int>(rd.u32le());
  if (raster.h <= 0 || raster.w <= 0 || raster.m <= 0)
    throw DataError(path + ": non-positive GEXM extents");
  const std::size_t n = static_cast<std::size_t>(raster.h) * raster.w * raster.m;
  raster.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) raster.values[i] = rd.f32le();
  if (!rd.at_end()) throw DataError(path + ": trailing bytes after GEXM payload");
  return raster;
}

}  // namespace pixnet::io
