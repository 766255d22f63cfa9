#pragma once

// Dataset ingestion, gene preprocessing and the synthetic slide generator.
// The generator builds a smooth procedural image, derives a per-pixel
// expression density from its blurred appearance and emits spot sums that
// equal circular aggregation of that density exactly; this is the oracle
// the cross-scale tests stand on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pixnet/common.hpp"
#include "pixnet/configfile.hpp"
#include "pixnet/io/gexm.hpp"
#include "pixnet/io/image.hpp"
#include "pixnet/spots.hpp"
#include "pixnet/tensor.hpp"

namespace pixnet {

struct SlideImage {
  int h = 0, w = 0;
  std::vector<double> rgb;  // interleaved [h][w][3], values in [0,1]
  SlideMeta meta;

  double at(int i, int j, int c) const {
    return rgb[(static_cast<std::size_t>(i) * w + j) * 3 + c];
  }
  double& at(int i, int j, int c) { return rgb[(static_cast<std::size_t>(i) * w + j) * 3 + c]; }

  template <typename S>
  Tensor<S> to_tensor() const {  // [3,h,w]
    std::vector<S> v(rgb.size());
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
          v[(static_cast<std::size_t>(c) * h + i) * w + j] = static_cast<S>(at(i, j, c));
    return Tensor<S>::from({3, h, w}, std::move(v));
  }
};

struct SpotTable {
  std::vector<Spot> spots;
  std::vector<std::string> gene_names;

  int genes() const { return static_cast<int>(gene_names.size()); }
  int count() const { return static_cast<int>(spots.size()); }
};

struct SyntheticTruth {
  int h = 0, w = 0, m = 0;
  std::vector<double> density;  // gene-fastest, index (i*w + j)*m + g

  double at(int i, int j, int g) const {
    return density[(static_cast<std::size_t>(i) * w + j) * m + g];
  }
};

namespace detail {

inline void warn(std::vector<std::string>* sink, const std::string& msg) {
  if (sink)
    sink->push_back(msg);
  else
    std::cerr << "warning: " << msg << "\n";
}

inline std::string sidecar_path(const std::string& slide_path) {
  const auto slash = slide_path.find_last_of('/');
  const auto dot = slide_path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return slide_path + ".meta";
  return slide_path.substr(0, dot) + ".meta";
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace detail

// ---- slide loading ----

inline SlideImage load_slide(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  const auto head = io::read_file(path);
  io::ImageU8 raw;
  if (io::has_png_signature(head)) {
    raw = io::read_png(path);
    if (raw.channels != 3)
      throw DataError(path + ": slide must be 8-bit RGB, got a " +
                      (raw.channels == 1 ? std::string("grayscale") : std::to_string(raw.channels) +
                                                                          "-channel") +
                      " PNG");
  } else if (head.size() >= 2 && head[0] == 'P' && head[1] == '6') {
    raw = io::read_ppm(path);
  } else {
    throw DataError(path + ": unsupported slide format (need PNG or P6 PPM)");
  }

  SlideImage img;
  img.h = raw.h;
  img.w = raw.w;
  img.rgb.resize(raw.pixels.size());
  for (std::size_t i = 0; i < raw.pixels.size(); ++i)
    img.rgb[i] = static_cast<double>(raw.pixels[i]) / 255.0;
  img.meta.height = raw.h;
  img.meta.width = raw.w;

  const std::string side = detail::sidecar_path(path);
  std::ifstream probe(side);
  if (probe) {
    KeyValues kv = KeyValues::load(side);
    img.meta.um_per_px = kv.get_double("um_per_px", 1.0);
    if (img.meta.um_per_px <= 0) throw DataError(side + ": um_per_px must be positive");
  } else {
    img.meta.um_per_px = 1.0;
    detail::warn(warnings, path + ": missing sidecar " + side + ", assuming um_per_px=1.0");
  }
  return img;
}

inline void save_slide_ppm(const std::string& path, const SlideImage& img) {
  io::ImageU8 raw;
  raw.h = img.h;
  raw.w = img.w;
  raw.channels = 3;
  raw.pixels.resize(img.rgb.size());
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, img.rgb[i]));
    raw.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  io::write_ppm(path, raw);
  std::ofstream side(detail::sidecar_path(path), std::ios::trunc);
  char buf[48];
  std::snprintf(buf, sizeof buf, "um_per_px = %.17g\n", img.meta.um_per_px);
  side << buf;
}

// ---- spot tables ----

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_csv_double(const std::string& s, const std::string& path, int line_no,
                               const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw DataError(path + ":" + std::to_string(line_no) + ": bad " + what + " value '" + s + "'");
  }
  if (used != s.size())
    throw DataError(path + ":" + std::to_string(line_no) + ": bad " + what + " value '" + s + "'");
  return v;
}

}  // namespace detail

// CSV with header x_px,y_px,r_px,<genes...> or x_um,y_um,r_um,<genes...>
inline SpotTable load_spot_table(const std::string& path, const SlideMeta& meta) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open spot table: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty spot table");
  auto header = detail::split_csv_line(line);
  if (header.size() < 4)
    throw DataError(path + ": header needs x,y,r plus at least one gene column");
  bool um_units;
  if (header[0] == "x_px" && header[1] == "y_px" && header[2] == "r_px")
    um_units = false;
  else if (header[0] == "x_um" && header[1] == "y_um" && header[2] == "r_um")
    um_units = true;
  else
    throw DataError(path + ": header must start with x_px,y_px,r_px or x_um,y_um,r_um");

  SpotTable table;
  table.gene_names.assign(header.begin() + 3, header.end());
  const std::size_t cols = header.size();
  std::map<std::pair<double, double>, int> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto parts = detail::split_csv_line(line);
    if (parts.size() != cols)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                      " columns, got " + std::to_string(parts.size()));
    Spot spot;
    spot.x = detail::parse_csv_double(parts[0], path, line_no, "x");
    spot.y = detail::parse_csv_double(parts[1], path, line_no, "y");
    spot.r = detail::parse_csv_double(parts[2], path, line_no, "r");
    if (!(spot.r > 0))
      throw DataError(path + ":" + std::to_string(line_no) + ": spot radius must be positive");
    if (um_units) {
      // coordinates may be zero or negative (clipped border spots), so they
      // are rescaled directly; only the radius goes through um_to_px
      spot.x /= meta.um_per_px;
      spot.y /= meta.um_per_px;
      spot.r = um_to_px(spot.r, meta);
    }
    spot.expression.reserve(cols - 3);
    for (std::size_t c = 3; c < cols; ++c) {
      const double v = detail::parse_csv_double(parts[c], path, line_no,
                                                "expression (" + table.gene_names[c - 3] + ")");
      if (!std::isfinite(v))
        throw DataError(path + ":" + std::to_string(line_no) + ": non-finite expression value");
      if (v < 0)
        throw DataError(path + ":" + std::to_string(line_no) + ": negative expression value");
      spot.expression.push_back(v);
    }
    if (!seen.emplace(std::make_pair(spot.x, spot.y), line_no).second)
      throw DataError(path + ":" + std::to_string(line_no) + ": duplicate spot center");
    try {
      validate_spot(spot, meta);
    } catch (const ArgumentError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    table.spots.push_back(std::move(spot));
  }
  if (table.spots.empty()) throw DataError(path + ": no spot rows");
  return table;
}

inline void save_spot_table(const std::string& path, const SpotTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write spot table: " + path);
  out << "x_px,y_px,r_px";
  for (const auto& g : table.gene_names) out << "," << g;
  out << "\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (const auto& s : table.spots) {
    put(s.x);
    out << ",";
    put(s.y);
    out << ",";
    put(s.r);
    for (double v : s.expression) {
      out << ",";
      put(v);
    }
    out << "\n";
  }
}

// ---- gene preprocessing ----

// keep the top_k genes by mean raw expression (ties by name), then per spot
// v <- log1p(scale_s * v / spot_sum); zero-sum spots are dropped
inline SpotTable preprocess_genes(const SpotTable& table, int top_k, double scale_s = 1e4,
                                  bool sum_before_selection = false,
                                  std::vector<std::string>* warnings = nullptr) {
  const int m = table.genes();
  if (top_k < 1 || top_k > m)
    throw ArgumentError("preprocess_genes: top_k must be in [1, genes], got " +
                        std::to_string(top_k));
  if (scale_s <= 0) throw ArgumentError("preprocess_genes: scale must be positive");

  std::vector<double> means(static_cast<std::size_t>(m), 0.0);
  for (const auto& s : table.spots)
    for (int g = 0; g < m; ++g) means[static_cast<std::size_t>(g)] += s.expression[static_cast<std::size_t>(g)];
  for (auto& v : means) v /= static_cast<double>(table.count());

  std::vector<int> order(static_cast<std::size_t>(m));
  for (int g = 0; g < m; ++g) order[static_cast<std::size_t>(g)] = g;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ma = means[static_cast<std::size_t>(a)], mb = means[static_cast<std::size_t>(b)];
    if (ma != mb) return ma > mb;
    return table.gene_names[static_cast<std::size_t>(a)] < table.gene_names[static_cast<std::size_t>(b)];
  });
  std::vector<int> keep(order.begin(), order.begin() + top_k);
  std::sort(keep.begin(), keep.end());  // preserve original column order

  SpotTable out;
  for (int g : keep) out.gene_names.push_back(table.gene_names[static_cast<std::size_t>(g)]);
  int dropped = 0;
  for (const auto& s : table.spots) {
    double denom = 0.0;
    if (sum_before_selection) {
      for (int g = 0; g < m; ++g) denom += s.expression[static_cast<std::size_t>(g)];
    } else {
      for (int g : keep) denom += s.expression[static_cast<std::size_t>(g)];
    }
    if (denom == 0.0) {
      ++dropped;
      continue;
    }
    Spot ns;
    ns.x = s.x;
    ns.y = s.y;
    ns.r = s.r;
    ns.expression.reserve(keep.size());
    for (int g : keep)
      ns.expression.push_back(std::log1p(scale_s * s.expression[static_cast<std::size_t>(g)] / denom));
    out.spots.push_back(std::move(ns));
  }
  if (dropped > 0)
    detail::warn(warnings, "preprocess_genes: dropped " + std::to_string(dropped) +
                               " spot(s) with zero expression sum");
  if (out.spots.empty()) throw DataError("preprocess_genes: all spots dropped (zero sums)");
  return out;
}

// ---- synthetic generator ----

struct SynthParams {
  int height = 96, width = 96;
  int genes = 16, n_spots = 64;
  double radius_px = 4.0;
  std::uint64_t seed = 42;
  int waves_per_channel = 4;
  // test hooks for the constant-density case
  std::optional<std::vector<double>> fixed_weights;  // genes*3, row-major per gene
  std::optional<std::vector<double>> fixed_bias;     // genes
};

struct SynthResult {
  SlideImage image;
  SpotTable table;
  SyntheticTruth truth;
};

namespace detail {

// four passes of the separable binomial kernel [1,4,6,4,1]/16, replicated edges
inline std::vector<double> blur_rgb(const std::vector<double>& rgb, int h, int w) {
  static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  std::vector<double> a = rgb, b(rgb.size());
  auto idx = [w](int i, int j, int c) { return (static_cast<std::size_t>(i) * w + j) * 3 + c; };
  for (int pass = 0; pass < 4; ++pass) {
    // horizontal
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          for (int t = -2; t <= 2; ++t) {
            const int jj = std::min(w - 1, std::max(0, j + t));
            acc += k[t + 2] * a[idx(i, jj, c)];
          }
          b[idx(i, j, c)] = acc;
        }
    // vertical
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          for (int t = -2; t <= 2; ++t) {
            const int ii = std::min(h - 1, std::max(0, i + t));
            acc += k[t + 2] * b[idx(ii, j, c)];
          }
          a[idx(i, j, c)] = acc;
        }
  }
  return a;
}

}  // namespace detail

inline SynthResult synth_generate(const SynthParams& p) {
  if (p.height < 1 || p.width < 1 || p.genes < 1 || p.n_spots < 1 || p.radius_px <= 0)
    throw ArgumentError("synth_generate: all extents must be positive");
  if (2 * p.radius_px >= p.width || 2 * p.radius_px >= p.height)
    throw ArgumentError("synth_generate: spots of radius " + std::to_string(p.radius_px) +
                        " cannot be placed inside a " + std::to_string(p.width) + "x" +
                        std::to_string(p.height) + " slide");
  Rng rng(p.seed);

  SynthResult out;
  out.image.h = p.height;
  out.image.w = p.width;
  out.image.meta = SlideMeta{1.0, p.height, p.width};
  out.image.rgb.assign(static_cast<std::size_t>(p.height) * p.width * 3, 0.0);

  // smooth field: per-channel sum of low-frequency sinusoids, clamped
  constexpr double kTau = 6.283185307179586;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> amp(static_cast<std::size_t>(p.waves_per_channel));
    std::vector<double> fx(amp.size()), fy(amp.size()), ph(amp.size());
    // amplitudes are normalized so the field never clamps; clamping would
    // crease the density and make it irrecoverable at coarse map strides
    double amp_sum = 0.0;
    for (std::size_t k = 0; k < amp.size(); ++k) {
      amp[k] = rng.uniform(0.5, 1.5);
      amp_sum += amp[k];
      fx[k] = rng.uniform(0.3, 2.0);
      fy[k] = rng.uniform(0.3, 2.0);
      ph[k] = rng.uniform(0.0, kTau);
    }
    for (auto& a : amp) a *= 0.48 / amp_sum;
    for (int i = 0; i < p.height; ++i)
      for (int j = 0; j < p.width; ++j) {
        double v = 0.5;
        for (std::size_t k = 0; k < amp.size(); ++k)
          v += amp[k] * std::sin(kTau * (fx[k] * (j + 0.5) / p.width +
                                         fy[k] * (i + 0.5) / p.height) +
                                 ph[k]);
        out.image.at(i, j, c) = std::min(1.0, std::max(0.0, v));
      }
  }

  // expression density is a local function of blurred appearance
  std::vector<double> weights(static_cast<std::size_t>(p.genes) * 3);
  std::vector<double> bias(static_cast<std::size_t>(p.genes));
  for (int g = 0; g < p.genes; ++g) {
    double wsum = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double w = rng.uniform(-4.0, 4.0);
      weights[static_cast<std::size_t>(g) * 3 + c] = w;
      wsum += w;
    }
    // center t = w.z + b near [0.2, 1.0] so per-pixel density is O(1)
    bias[static_cast<std::size_t>(g)] = rng.uniform(0.2, 1.0) - 0.5 * wsum;
  }
  if (p.fixed_weights) {
    if (p.fixed_weights->size() != weights.size())
      throw ArgumentError("synth_generate: fixed_weights must have genes*3 entries");
    weights = *p.fixed_weights;
  }
  if (p.fixed_bias) {
    if (p.fixed_bias->size() != bias.size())
      throw ArgumentError("synth_generate: fixed_bias must have genes entries");
    bias = *p.fixed_bias;
  }

  const auto blurred = detail::blur_rgb(out.image.rgb, p.height, p.width);
  out.truth.h = p.height;
  out.truth.w = p.width;
  out.truth.m = p.genes;
  out.truth.density.resize(static_cast<std::size_t>(p.height) * p.width * p.genes);
  for (int i = 0; i < p.height; ++i)
    for (int j = 0; j < p.width; ++j) {
      const std::size_t base = (static_cast<std::size_t>(i) * p.width + j) * 3;
      for (int g = 0; g < p.genes; ++g) {
        double t = bias[static_cast<std::size_t>(g)];
        for (int c = 0; c < 3; ++c)
          t += weights[static_cast<std::size_t>(g) * 3 + c] * blurred[base + c];
        out.truth.density[(static_cast<std::size_t>(i) * p.width + j) * p.genes + g] =
            detail::softplus(t);
      }
    }

  // jittered grid; centers run to r/2 from the border so the disks tile the
  // slide edge to edge (border spots clip, which aggregation handles)
  for (int g = 0; g < p.genes; ++g) out.table.gene_names.push_back("g_" + std::to_string(g));
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p.n_spots))));
  const double margin = 0.5 * p.radius_px;
  const double usable_w = p.width - 2.0 * margin;
  const double usable_h = p.height - 2.0 * margin;
  for (int n = 0; n < p.n_spots; ++n) {
    const int gx = n % grid, gy = n / grid;
    Spot spot;
    spot.r = p.radius_px;
    spot.x = margin + usable_w * (gx + 0.5 + rng.uniform(-0.15, 0.15)) / grid;
    spot.y = margin + usable_h * (gy + 0.5 + rng.uniform(-0.15, 0.15)) / grid;
    const auto mask = circular_mask(spot, p.height, p.width);
    spot.expression.assign(static_cast<std::size_t>(p.genes), 0.0);
    for (int g = 0; g < p.genes; ++g) {
      double acc = 0.0;
      for (int idx : mask)
        acc += out.truth.density[static_cast<std::size_t>(idx) * p.genes + g];
      spot.expression[static_cast<std::size_t>(g)] = acc;
    }
    out.table.spots.push_back(std::move(spot));
  }
  return out;
}

// spots with exact expression sums computed from an existing truth raster,
// placed independently of the training spots
inline SpotTable synth_spots_from_truth(const SyntheticTruth& truth, int n_spots, double radius_px,
                                        std::uint64_t seed) {
  if (n_spots < 1 || radius_px <= 0) throw ArgumentError("synth_spots_from_truth: bad arguments");
  if (2 * radius_px >= truth.w || 2 * radius_px >= truth.h)
    throw ArgumentError("synth_spots_from_truth: spots do not fit the slide");
  Rng rng(seed);
  SpotTable table;
  for (int g = 0; g < truth.m; ++g) table.gene_names.push_back("g_" + std::to_string(g));
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_spots))));
  const double usable_w = truth.w - 2.0 * radius_px;
  const double usable_h = truth.h - 2.0 * radius_px;
  for (int n = 0; n < n_spots; ++n) {
    const int gx = n % grid, gy = n / grid;
    Spot spot;
    spot.r = radius_px;
    spot.x = radius_px + usable_w * (gx + 0.5 + rng.uniform(-0.3, 0.3)) / grid;
    spot.y = radius_px + usable_h * (gy + 0.5 + rng.uniform(-0.3, 0.3)) / grid;
    const auto mask = circular_mask(spot, truth.h, truth.w);
    spot.expression.assign(static_cast<std::size_t>(truth.m), 0.0);
    for (int g = 0; g < truth.m; ++g) {
      double acc = 0.0;
      for (int idx : mask) acc += truth.density[static_cast<std::size_t>(idx) * truth.m + g];
      spot.expression[static_cast<std::size_t>(g)] = acc;
    }
    table.spots.push_back(std::move(spot));
  }
  return table;
}

inline io::GexmRaster truth_to_gexm(const SyntheticTruth& truth) {
  io::GexmRaster raster;
  raster.h = truth.h;
  raster.w = truth.w;
  raster.m = truth.m;
  raster.values.resize(truth.density.size());
  for (std::size_t i = 0; i < truth.density.size(); ++i)
    raster.values[i] = static_cast<float>(truth.density[i]);
  return raster;
}

}  // namespace pixnet
