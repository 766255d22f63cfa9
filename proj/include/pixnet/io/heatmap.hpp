#pragma once

// Single-gene heatmap export: one plane of a GEXM raster, min-max
// normalized to 8-bit grayscale PNG. A constant plane maps to mid-gray.

#include <cmath>
#include <string>

#include "pixnet/common.hpp"
#include "pixnet/io/gexm.hpp"
#include "pixnet/io/image.hpp"

namespace pixnet::io {

inline void export_heatmap(const GexmRaster& map, int gene_index, const std::string& path) {
  if (gene_index < 0 || gene_index >= map.m)
    throw ArgumentError("export_heatmap: gene index " + std::to_string(gene_index) +
                        " out of range [0," + std::to_string(map.m) + ")");
  float lo = map.at(0, 0, gene_index), hi = lo;
  for (int i = 0; i < map.h; ++i)
    for (int j = 0; j < map.w; ++j) {
      const float v = map.at(i, j, gene_index);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  ImageU8 img;
  img.h = map.h;
  img.w = map.w;
  img.channels = 1;
  img.pixels.resize(static_cast<std::size_t>(map.h) * map.w);
  if (hi == lo) {
    std::fill(img.pixels.begin(), img.pixels.end(), std::uint8_t(128));
  } else {
    const float span = hi - lo;
    for (int i = 0; i < map.h; ++i)
      for (int j = 0; j < map.w; ++j) {
        const float t = (map.at(i, j, gene_index) - lo) / span;
        img.pixels[static_cast<std::size_t>(i) * map.w + j] =
            static_cast<std::uint8_t>(std::lround(t * 255.0f));
      }
  }
  write_png(path, img);
}

}  // namespace pixnet::io
