#pragma once

// Spot geometry and circular aggregation of the dense map. Pixel (i,j) is
// inside a spot iff its center (j+0.5, i+0.5) satisfies the circle
// inequality; masks are clipped to the slide. Aggregation is a per-gene sum
// over the mask, so its gradient is exactly the 0/1 mask indicator.

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "pixnet/common.hpp"
#include "pixnet/tensor.hpp"

namespace pixnet {

struct SlideMeta {
  double um_per_px = 1.0;
  int height = 0;
  int width = 0;
};

struct Spot {
  double x = 0.0;  // pixels
  double y = 0.0;
  double r = 0.0;  // pixels, > 0
  std::vector<double> expression;  // optional ground truth, length M
};

inline double um_to_px(double r_um, const SlideMeta& meta) {
  if (r_um <= 0.0) throw ArgumentError("um_to_px: length must be positive");
  if (meta.um_per_px <= 0.0) throw ArgumentError("um_to_px: um_per_px must be positive");
  return r_um / meta.um_per_px;
}

// equal-area circle for a square bin of side s
inline double square_bin_radius(double side) {
  if (side <= 0.0) throw ArgumentError("square_bin_radius: side must be positive");
  return side / std::sqrt(3.14159265358979323846);
}

inline void validate_spot(const Spot& spot, const SlideMeta& meta) {
  if (spot.r <= 0.0) throw ArgumentError("spot radius must be positive");
  if (meta.width > 0 && meta.height > 0) {
    if (spot.x < -spot.r || spot.x > meta.width + spot.r || spot.y < -spot.r ||
        spot.y > meta.height + spot.r)
      throw ArgumentError("spot center outside slide bounds extended by r");
  }
}

// flat row-major pixel indices (i*width + j), clipped to the slide
inline std::vector<int> circular_mask(const Spot& spot, int height, int width) {
  std::vector<int> mask;
  const double r2 = spot.r * spot.r;
  const int i_lo = std::max(0, static_cast<int>(std::floor(spot.y - spot.r - 0.5)));
  const int i_hi = std::min(height - 1, static_cast<int>(std::ceil(spot.y + spot.r - 0.5)));
  const int j_lo = std::max(0, static_cast<int>(std::floor(spot.x - spot.r - 0.5)));
  const int j_hi = std::min(width - 1, static_cast<int>(std::ceil(spot.x + spot.r - 0.5)));
  for (int i = i_lo; i <= i_hi; ++i) {
    const double dy = (i + 0.5) - spot.y;
    for (int j = j_lo; j <= j_hi; ++j) {
      const double dx = (j + 0.5) - spot.x;
      if (dx * dx + dy * dy <= r2) mask.push_back(i * width + j);
    }
  }
  return mask;
}

// per-gene sum of G[M,H,W] over one mask; empty mask flags and yields zeros
template <typename S>
Tensor<S> aggregate_mask(const Tensor<S>& map, const std::vector<int>& mask,
                         bool* empty_flag = nullptr) {
  if (map.rank() != 3) throw DimensionError("aggregate: map must be [M,H,W]");
  const int genes = map.extent(0);
  const std::size_t plane = static_cast<std::size_t>(map.extent(1)) * map.extent(2);
  for (int idx : mask)
    if (idx < 0 || static_cast<std::size_t>(idx) >= plane)
      throw DimensionError("aggregate: mask index outside map extents");
  if (empty_flag) *empty_flag = mask.empty();
  std::vector<S> out(static_cast<std::size_t>(genes), S(0));
  for (int g = 0; g < genes; ++g) {
    const S* p = map.value().data() + static_cast<std::size_t>(g) * plane;
    S acc = S(0);
    for (int idx : mask) acc += p[static_cast<std::size_t>(idx)];
    out[static_cast<std::size_t>(g)] = acc;
  }
  return Tensor<S>::make(
      {genes}, std::move(out), {map},
      [mask, plane, genes](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int gi = 0; gi < genes; ++gi) {
          S* p = acc.data() + static_cast<std::size_t>(gi) * plane;
          for (int idx : mask) p[static_cast<std::size_t>(idx)] += g[static_cast<std::size_t>(gi)];
        }
      });
}

template <typename S>
Tensor<S> aggregate_spot(const Tensor<S>& map, const Spot& spot, bool* empty_flag = nullptr) {
  return aggregate_mask(map, circular_mask(spot, map.extent(1), map.extent(2)), empty_flag);
}

// batched aggregation -> [N, M]
template <typename S>
Tensor<S> aggregate_spots(const Tensor<S>& map, const std::vector<std::vector<int>>& masks) {
  if (map.rank() != 3) throw DimensionError("aggregate: map must be [M,H,W]");
  if (masks.empty()) throw DimensionError("aggregate: no spots");
  const int genes = map.extent(0);
  const int n = static_cast<int>(masks.size());
  const std::size_t plane = static_cast<std::size_t>(map.extent(1)) * map.extent(2);
  for (const auto& mask : masks)
    for (int idx : mask)
      if (idx < 0 || static_cast<std::size_t>(idx) >= plane)
        throw DimensionError("aggregate: mask index outside map extents");
  std::vector<S> out(static_cast<std::size_t>(n) * genes, S(0));
  for (int s = 0; s < n; ++s)
    for (int g = 0; g < genes; ++g) {
      const S* p = map.value().data() + static_cast<std::size_t>(g) * plane;
      S acc = S(0);
      for (int idx : masks[static_cast<std::size_t>(s)]) acc += p[static_cast<std::size_t>(idx)];
      out[static_cast<std::size_t>(s) * genes + g] = acc;
    }
  return Tensor<S>::make(
      {n, genes}, std::move(out), {map},
      [masks, plane, genes, n](const TensorNode<S>& self, const std::vector<S>& g,
                               BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int s = 0; s < n; ++s)
          for (int gi = 0; gi < genes; ++gi) {
            const S go = g[static_cast<std::size_t>(s) * genes + gi];
            if (go == S(0)) continue;
            S* p = acc.data() + static_cast<std::size_t>(gi) * plane;
            for (int idx : masks[static_cast<std::size_t>(s)]) p[static_cast<std::size_t>(idx)] += go;
          }
      });
}

}  // namespace pixnet
