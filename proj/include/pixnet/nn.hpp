#pragma once

// Feature-map operations on [C,h,w] tensors (normalize also handles [T,D]
// token matrices). conv2d runs through im2col + Eigen GEMM; the smaller
// kernels are direct loops.

#include <cmath>
#include <vector>

#include "pixnet/tensor.hpp"

namespace pixnet {

enum class NormKind { layer, batch };

namespace detail {

// x[C,h,w] -> col[(C*k*k) x (hout*wout)], zero padding
template <typename S>
void im2col(const std::vector<S>& x, int c_in, int h, int w, int k, int stride, int pad,
            int hout, int wout, std::vector<S>& col) {
  col.assign(static_cast<std::size_t>(c_in) * k * k * hout * wout, S(0));
  const std::size_t cols = static_cast<std::size_t>(hout) * wout;
  for (int ci = 0; ci < c_in; ++ci)
    for (int di = 0; di < k; ++di)
      for (int dj = 0; dj < k; ++dj) {
        S* dst = col.data() + ((static_cast<std::size_t>(ci) * k + di) * k + dj) * cols;
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride - pad + di;
          if (iy < 0 || iy >= h) continue;
          const S* src = x.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride - pad + dj;
            if (ix >= 0 && ix < w) dst[static_cast<std::size_t>(oy) * wout + ox] = src[ix];
          }
        }
      }
}

template <typename S>
void col2im_add(const std::vector<S>& col, int c_in, int h, int w, int k, int stride, int pad,
                int hout, int wout, std::vector<S>& x_acc) {
  const std::size_t cols = static_cast<std::size_t>(hout) * wout;
  for (int ci = 0; ci < c_in; ++ci)
    for (int di = 0; di < k; ++di)
      for (int dj = 0; dj < k; ++dj) {
        const S* src = col.data() + ((static_cast<std::size_t>(ci) * k + di) * k + dj) * cols;
        for (int oy = 0; oy < hout; ++oy) {
          const int iy = oy * stride - pad + di;
          if (iy < 0 || iy >= h) continue;
          S* dst = x_acc.data() + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wout; ++ox) {
            const int ix = ox * stride - pad + dj;
            if (ix >= 0 && ix < w) dst[ix] += src[static_cast<std::size_t>(oy) * wout + ox];
          }
        }
      }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, int stride,
                 int padding) {
  if (x.rank() != 3 || weight.rank() != 4 || bias.rank() != 1)
    throw DimensionError("conv2d: expected x[C,h,w], weight[Co,Ci,k,k], bias[Co]");
  const int c_in = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int c_out = weight.extent(0), k = weight.extent(2);
  if (weight.extent(1) != c_in)
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.extent(1)) +
                         " input channels, got " + std::to_string(c_in));
  if (weight.extent(3) != k || k % 2 == 0) throw DimensionError("conv2d: kernel must be square and odd");
  if (bias.extent(0) != c_out) throw DimensionError("conv2d: bias length != output channels");
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: bad stride/padding");
  if (h + 2 * padding < k || w + 2 * padding < k)
    throw DimensionError("conv2d: kernel larger than padded input");
  if ((h + 2 * padding - k) % stride != 0 || (w + 2 * padding - k) % stride != 0)
    throw DimensionError("conv2d: output extent is not exact for stride " + std::to_string(stride));
  const int hout = (h + 2 * padding - k) / stride + 1;
  const int wout = (w + 2 * padding - k) / stride + 1;

  std::vector<S> col;
  detail::im2col(x.value(), c_in, h, w, k, stride, padding, hout, wout, col);
  const int rows = c_in * k * k;
  const std::size_t sites = static_cast<std::size_t>(hout) * wout;
  std::vector<S> out(static_cast<std::size_t>(c_out) * sites);
  {
    ConstMatMap<S> W(weight.value().data(), c_out, rows);
    ConstMatMap<S> Col(col.data(), rows, static_cast<Eigen::Index>(sites));
    MatMap<S> Out(out.data(), c_out, static_cast<Eigen::Index>(sites));
    Out.noalias() = W * Col;
  }
  for (int co = 0; co < c_out; ++co) {
    const S b = bias.value()[static_cast<std::size_t>(co)];
    S* row = out.data() + static_cast<std::size_t>(co) * sites;
    for (std::size_t i = 0; i < sites; ++i) row[i] += b;
  }

  return Tensor<S>::make(
      {c_out, hout, wout}, std::move(out), {x, weight, bias},
      [c_in, h, w, k, stride, padding, hout, wout, c_out](
          const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        const int rows = c_in * k * k;
        const std::size_t sites = static_cast<std::size_t>(hout) * wout;
        ConstMatMap<S> G(g.data(), c_out, static_cast<Eigen::Index>(sites));
        if (self.parents[1]->requires_grad) {
          std::vector<S> col;
          detail::im2col(self.parents[0]->value, c_in, h, w, k, stride, padding, hout, wout, col);
          ConstMatMap<S> Col(col.data(), rows, static_cast<Eigen::Index>(sites));
          MatMap<S> dW(ctx.at(self.parents[1]).data(), c_out, rows);
          dW.noalias() += G * Col.transpose();
        }
        if (self.parents[2]->requires_grad) {
          auto& db = ctx.at(self.parents[2]);
          for (int co = 0; co < c_out; ++co) {
            S s = S(0);
            const S* row = g.data() + static_cast<std::size_t>(co) * sites;
            for (std::size_t i = 0; i < sites; ++i) s += row[i];
            db[static_cast<std::size_t>(co)] += s;
          }
        }
        if (self.parents[0]->requires_grad) {
          std::vector<S> dcol(static_cast<std::size_t>(rows) * sites);
          ConstMatMap<S> W(self.parents[1]->value.data(), c_out, rows);
          MatMap<S> dCol(dcol.data(), rows, static_cast<Eigen::Index>(sites));
          dCol.noalias() = W.transpose() * G;
          detail::col2im_add(dcol, c_in, h, w, k, stride, padding, hout, wout,
                             ctx.at(self.parents[0]));
        }
      });
}

// shape-preserving grouped conv, one k x k kernel per channel
template <typename S>
Tensor<S> depthwise_conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                           int padding) {
  if (x.rank() != 3 || weight.rank() != 3 || bias.rank() != 1)
    throw DimensionError("depthwise_conv2d: expected x[C,h,w], weight[C,k,k], bias[C]");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2), k = weight.extent(1);
  if (weight.extent(0) != c)
    throw DimensionError("depthwise_conv2d: weight has " + std::to_string(weight.extent(0)) +
                         " channels, input has " + std::to_string(c));
  if (weight.extent(2) != k || k % 2 == 0)
    throw DimensionError("depthwise_conv2d: kernel must be square and odd");
  if (bias.extent(0) != c) throw DimensionError("depthwise_conv2d: bias length != channels");
  if (padding != (k - 1) / 2)
    throw DimensionError("depthwise_conv2d: padding must be (k-1)/2 for shape preservation");

  std::vector<S> out(x.size());
  for (int ci = 0; ci < c; ++ci) {
    const S* xc = x.value().data() + static_cast<std::size_t>(ci) * h * w;
    const S* wc = weight.value().data() + static_cast<std::size_t>(ci) * k * k;
    S* oc = out.data() + static_cast<std::size_t>(ci) * h * w;
    const S b = bias.value()[static_cast<std::size_t>(ci)];
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        S acc = b;
        for (int di = 0; di < k; ++di) {
          const int iy = i - padding + di;
          if (iy < 0 || iy >= h) continue;
          for (int dj = 0; dj < k; ++dj) {
            const int ix = j - padding + dj;
            if (ix >= 0 && ix < w) acc += xc[static_cast<std::size_t>(iy) * w + ix] * wc[di * k + dj];
          }
        }
        oc[static_cast<std::size_t>(i) * w + j] = acc;
      }
  }
  return Tensor<S>::make(
      {c, h, w}, std::move(out), {x, weight, bias},
      [c, h, w, k, padding](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        const bool need_x = self.parents[0]->requires_grad;
        const bool need_w = self.parents[1]->requires_grad;
        const bool need_b = self.parents[2]->requires_grad;
        for (int ci = 0; ci < c; ++ci) {
          const S* xc = self.parents[0]->value.data() + static_cast<std::size_t>(ci) * h * w;
          const S* wc = self.parents[1]->value.data() + static_cast<std::size_t>(ci) * k * k;
          const S* gc = g.data() + static_cast<std::size_t>(ci) * h * w;
          S* dxc = need_x ? ctx.at(self.parents[0]).data() + static_cast<std::size_t>(ci) * h * w : nullptr;
          S* dwc = need_w ? ctx.at(self.parents[1]).data() + static_cast<std::size_t>(ci) * k * k : nullptr;
          S db = S(0);
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
              const S go = gc[static_cast<std::size_t>(i) * w + j];
              db += go;
              for (int di = 0; di < k; ++di) {
                const int iy = i - padding + di;
                if (iy < 0 || iy >= h) continue;
                for (int dj = 0; dj < k; ++dj) {
                  const int ix = j - padding + dj;
                  if (ix < 0 || ix >= w) continue;
                  if (need_x) dxc[static_cast<std::size_t>(iy) * w + ix] += go * wc[di * k + dj];
                  if (need_w) dwc[di * k + dj] += go * xc[static_cast<std::size_t>(iy) * w + ix];
                }
              }
            }
          if (need_b) ctx.at(self.parents[2])[static_cast<std::size_t>(ci)] += db;
        }
      });
}

// layer: over the channel axis per spatial site / per token row.
// batch: over spatial sites (or the token axis) per channel.
// Affine gain/bias are indexed by channel.
template <typename S>
Tensor<S> normalize(const Tensor<S>& x, NormKind kind, const Tensor<S>& gain, const Tensor<S>& bias,
                    S eps = S(1e-5)) {
  if (eps <= S(0)) throw ArgumentError("normalize: eps must be positive");
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("normalize: rank-2 or rank-3 tensor required");
  const int channels = x.rank() == 3 ? x.extent(0) : x.extent(1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.extent(0) != channels || bias.extent(0) != channels)
    throw DimensionError("normalize: gain/bias must have one entry per channel");

  // group enumeration: elements at base + e*stride, e in [0,count);
  // affine channel index = aff0 + e*aff_step
  struct Group {
    std::size_t base, stride;
    int count, aff0, aff_step;
  };
  std::vector<Group> groups;
  if (x.rank() == 3) {
    const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    if (kind == NormKind::layer) {
      groups.reserve(hw);
      for (std::size_t s = 0; s < hw; ++s) groups.push_back({s, hw, c, 0, 1});
    } else {
      groups.reserve(static_cast<std::size_t>(c));
      for (int ci = 0; ci < c; ++ci)
        groups.push_back({static_cast<std::size_t>(ci) * hw, 1, static_cast<int>(hw), ci, 0});
    }
  } else {
    const int t = x.extent(0), d = x.extent(1);
    if (kind == NormKind::layer) {
      groups.reserve(static_cast<std::size_t>(t));
      for (int i = 0; i < t; ++i)
        groups.push_back({static_cast<std::size_t>(i) * d, 1, d, 0, 1});
    } else {
      groups.reserve(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j)
        groups.push_back({static_cast<std::size_t>(j), static_cast<std::size_t>(d), t, j, 0});
    }
  }
  if (groups.empty() || groups[0].count <= 0) throw DimensionError("normalize: empty normalization group");

  std::vector<S> out(x.size());
  std::vector<S> mean_g(groups.size()), invstd_g(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& gr = groups[gi];
    S m = S(0);
    for (int e = 0; e < gr.count; ++e) m += x.value()[gr.base + static_cast<std::size_t>(e) * gr.stride];
    m /= static_cast<S>(gr.count);
    S var = S(0);
    for (int e = 0; e < gr.count; ++e) {
      const S d = x.value()[gr.base + static_cast<std::size_t>(e) * gr.stride] - m;
      var += d * d;
    }
    var /= static_cast<S>(gr.count);
    const S invstd = S(1) / std::sqrt(var + eps);
    mean_g[gi] = m;
    invstd_g[gi] = invstd;
    for (int e = 0; e < gr.count; ++e) {
      const std::size_t idx = gr.base + static_cast<std::size_t>(e) * gr.stride;
      const int aff = gr.aff0 + e * gr.aff_step;
      const S y = (x.value()[idx] - m) * invstd;
      out[idx] = gain.value()[static_cast<std::size_t>(aff)] * y + bias.value()[static_cast<std::size_t>(aff)];
    }
  }

  return Tensor<S>::make(
      x.shape(), std::move(out), {x, gain, bias},
      [groups = std::move(groups), mean_g = std::move(mean_g), invstd_g = std::move(invstd_g)](
          const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        const auto& xv = self.parents[0]->value;
        const auto& gv = self.parents[1]->value;
        const bool need_x = self.parents[0]->requires_grad;
        const bool need_gain = self.parents[1]->requires_grad;
        const bool need_bias = self.parents[2]->requires_grad;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          const auto& gr = groups[gi];
          const S m = mean_g[gi], invstd = invstd_g[gi];
          const S invn = S(1) / static_cast<S>(gr.count);
          S sum_dy = S(0), sum_dyy = S(0);
          for (int e = 0; e < gr.count; ++e) {
            const std::size_t idx = gr.base + static_cast<std::size_t>(e) * gr.stride;
            const int aff = gr.aff0 + e * gr.aff_step;
            const S y = (xv[idx] - m) * invstd;
            const S dy = g[idx] * gv[static_cast<std::size_t>(aff)];
            sum_dy += dy;
            sum_dyy += dy * y;
          }
          for (int e = 0; e < gr.count; ++e) {
            const std::size_t idx = gr.base + static_cast<std::size_t>(e) * gr.stride;
            const int aff = gr.aff0 + e * gr.aff_step;
            const S y = (xv[idx] - m) * invstd;
            if (need_x) {
              const S dy = g[idx] * gv[static_cast<std::size_t>(aff)];
              ctx.at(self.parents[0])[idx] += invstd * (dy - sum_dy * invn - y * sum_dyy * invn);
            }
            if (need_gain) ctx.at(self.parents[1])[static_cast<std::size_t>(aff)] += g[idx] * y;
            if (need_bias) ctx.at(self.parents[2])[static_cast<std::size_t>(aff)] += g[idx];
          }
        }
      });
}

// out[c, y*r+dy, x*r+dx] = in[c*r*r + dy*r + dx, y, x]
template <typename S>
Tensor<S> depth_to_space(const Tensor<S>& x, int r) {
  if (x.rank() != 3) throw DimensionError("depth_to_space: rank-3 tensor required");
  const int cin = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (r < 1 || cin % (r * r) != 0)
    throw DimensionError("depth_to_space: channels " + std::to_string(cin) +
                         " not divisible by r^2 = " + std::to_string(r * r));
  const int c = cin / (r * r);
  std::vector<S> out(x.size());
  for (int cc = 0; cc < c; ++cc)
    for (int dy = 0; dy < r; ++dy)
      for (int dx = 0; dx < r; ++dx) {
        const S* src = x.value().data() + (static_cast<std::size_t>(cc) * r * r + dy * r + dx) * h * w;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            out[(static_cast<std::size_t>(cc) * (h * r) + (y * r + dy)) * (w * r) + (xx * r + dx)] =
                src[static_cast<std::size_t>(y) * w + xx];
      }
  return Tensor<S>::make(
      {c, h * r, w * r}, std::move(out), {x},
      [c, h, w, r](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int cc = 0; cc < c; ++cc)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
              S* dst = acc.data() + (static_cast<std::size_t>(cc) * r * r + dy * r + dx) * h * w;
              for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                  dst[static_cast<std::size_t>(y) * w + xx] +=
                      g[(static_cast<std::size_t>(cc) * (h * r) + (y * r + dy)) * (w * r) + (xx * r + dx)];
            }
      });
}

template <typename S>
Tensor<S> space_to_depth(const Tensor<S>& x, int r) {
  if (x.rank() != 3) throw DimensionError("space_to_depth: rank-3 tensor required");
  const int c = x.extent(0), hr = x.extent(1), wr = x.extent(2);
  if (r < 1 || hr % r != 0 || wr % r != 0)
    throw DimensionError("space_to_depth: extents not divisible by r");
  const int h = hr / r, w = wr / r;
  std::vector<S> out(x.size());
  for (int cc = 0; cc < c; ++cc)
    for (int dy = 0; dy < r; ++dy)
      for (int dx = 0; dx < r; ++dx) {
        S* dst = out.data() + (static_cast<std::size_t>(cc) * r * r + dy * r + dx) * h * w;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            dst[static_cast<std::size_t>(y) * w + xx] =
                x.value()[(static_cast<std::size_t>(cc) * hr + (y * r + dy)) * wr + (xx * r + dx)];
      }
  return Tensor<S>::make(
      {c * r * r, h, w}, std::move(out), {x},
      [c, h, w, r, hr, wr](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int cc = 0; cc < c; ++cc)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
              const S* src = g.data() + (static_cast<std::size_t>(cc) * r * r + dy * r + dx) * h * w;
              for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                  acc[(static_cast<std::size_t>(cc) * hr + (y * r + dy)) * wr + (xx * r + dx)] +=
                      src[static_cast<std::size_t>(y) * w + xx];
            }
      });
}

// align-corners=false sampling: source = (i+0.5)*h/h2 - 0.5, edges clamped
template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& x, int h2, int w2) {
  if (x.rank() != 3) throw DimensionError("bilinear_resize: rank-3 tensor required");
  if (h2 < 1 || w2 < 1) throw DimensionError("bilinear_resize: target extents must be >= 1");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);

  struct Tap {
    int lo, hi;
    S t;
  };
  auto make_taps = [](int src, int dst) {
    std::vector<Tap> taps(static_cast<std::size_t>(dst));
    const S ratio = static_cast<S>(src) / static_cast<S>(dst);
    for (int i = 0; i < dst; ++i) {
      const S s = (static_cast<S>(i) + S(0.5)) * ratio - S(0.5);
      const S f = std::floor(s);
      int lo = static_cast<int>(f);
      S t = s - f;
      int hi = lo + 1;
      if (lo < 0) lo = 0;
      if (hi > src - 1) hi = src - 1;
      if (lo > src - 1) lo = src - 1;
      taps[static_cast<std::size_t>(i)] = {lo, hi, t};
    }
    return taps;
  };
  const auto ytaps = make_taps(h, h2);
  const auto xtaps = make_taps(w, w2);

  std::vector<S> out(static_cast<std::size_t>(c) * h2 * w2);
  for (int cc = 0; cc < c; ++cc) {
    const S* src = x.value().data() + static_cast<std::size_t>(cc) * h * w;
    S* dst = out.data() + static_cast<std::size_t>(cc) * h2 * w2;
    for (int i = 0; i < h2; ++i) {
      const Tap& ty = ytaps[static_cast<std::size_t>(i)];
      for (int j = 0; j < w2; ++j) {
        const Tap& tx = xtaps[static_cast<std::size_t>(j)];
        // nested lerp form keeps constant fields (and exact grid hits) bitwise
        const S v00 = src[static_cast<std::size_t>(ty.lo) * w + tx.lo];
        const S v01 = src[static_cast<std::size_t>(ty.lo) * w + tx.hi];
        const S v10 = src[static_cast<std::size_t>(ty.hi) * w + tx.lo];
        const S v11 = src[static_cast<std::size_t>(ty.hi) * w + tx.hi];
        const S top = tx.t == S(0) ? v00 : v00 + tx.t * (v01 - v00);
        const S bot = tx.t == S(0) ? v10 : v10 + tx.t * (v11 - v10);
        dst[static_cast<std::size_t>(i) * w2 + j] = ty.t == S(0) ? top : top + ty.t * (bot - top);
      }
    }
  }
  return Tensor<S>::make(
      {c, h2, w2}, std::move(out), {x},
      [c, h, w, h2, w2, ytaps, xtaps](const TensorNode<S>& self, const std::vector<S>& g,
                                      BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int cc = 0; cc < c; ++cc) {
          S* dst = acc.data() + static_cast<std::size_t>(cc) * h * w;
          const S* gr = g.data() + static_cast<std::size_t>(cc) * h2 * w2;
          for (int i = 0; i < h2; ++i) {
            const auto& ty = ytaps[static_cast<std::size_t>(i)];
            for (int j = 0; j < w2; ++j) {
              const auto& tx = xtaps[static_cast<std::size_t>(j)];
              const S go = gr[static_cast<std::size_t>(i) * w2 + j];
              dst[static_cast<std::size_t>(ty.lo) * w + tx.lo] += (S(1) - ty.t) * (S(1) - tx.t) * go;
              dst[static_cast<std::size_t>(ty.lo) * w + tx.hi] += (S(1) - ty.t) * tx.t * go;
              dst[static_cast<std::size_t>(ty.hi) * w + tx.lo] += ty.t * (S(1) - tx.t) * go;
              dst[static_cast<std::size_t>(ty.hi) * w + tx.hi] += ty.t * tx.t * go;
            }
          }
        }
      });
}

// non-overlapping p x p patches -> rows of [T, C*p*p], token t = ty*(w/p)+tx,
// row layout (c, dy, dx)
template <typename S>
Tensor<S> extract_patches(const Tensor<S>& x, int patch) {
  if (x.rank() != 3) throw DimensionError("extract_patches: rank-3 tensor required");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (patch < 1 || h % patch != 0 || w % patch != 0)
    throw DimensionError("extract_patches: extents not divisible by patch size");
  const int th = h / patch, tw = w / patch;
  const int row = c * patch * patch;
  std::vector<S> out(static_cast<std::size_t>(th) * tw * row);
  for (int ty = 0; ty < th; ++ty)
    for (int tx = 0; tx < tw; ++tx) {
      S* dst = out.data() + (static_cast<std::size_t>(ty) * tw + tx) * row;
      for (int cc = 0; cc < c; ++cc)
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            dst[(cc * patch + dy) * patch + dx] =
                x.value()[(static_cast<std::size_t>(cc) * h + ty * patch + dy) * w + tx * patch + dx];
    }
  return Tensor<S>::make(
      {th * tw, row}, std::move(out), {x},
      [c, h, w, patch, th, tw, row](const TensorNode<S>& self, const std::vector<S>& g,
                                    BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int ty = 0; ty < th; ++ty)
          for (int tx = 0; tx < tw; ++tx) {
            const S* src = g.data() + (static_cast<std::size_t>(ty) * tw + tx) * row;
            for (int cc = 0; cc < c; ++cc)
              for (int dy = 0; dy < patch; ++dy)
                for (int dx = 0; dx < patch; ++dx)
                  acc[(static_cast<std::size_t>(cc) * h + ty * patch + dy) * w + tx * patch + dx] +=
                      src[(cc * patch + dy) * patch + dx];
          }
      });
}

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, int factor) {
  if (x.rank() != 3) throw DimensionError("avg_pool2d: rank-3 tensor required");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (factor < 1 || h % factor != 0 || w % factor != 0)
    throw DimensionError("avg_pool2d: extents not divisible by factor " + std::to_string(factor));
  if (factor == 1) return reshape(x, x.shape());  // identity pass-through keeps graph simple
  const int h2 = h / factor, w2 = w / factor;
  const S inv = S(1) / static_cast<S>(factor * factor);
  std::vector<S> out(static_cast<std::size_t>(c) * h2 * w2);
  for (int cc = 0; cc < c; ++cc) {
    const S* src = x.value().data() + static_cast<std::size_t>(cc) * h * w;
    S* dst = out.data() + static_cast<std::size_t>(cc) * h2 * w2;
    for (int i = 0; i < h2; ++i)
      for (int j = 0; j < w2; ++j) {
        S s = S(0);
        for (int di = 0; di < factor; ++di)
          for (int dj = 0; dj < factor; ++dj)
            s += src[static_cast<std::size_t>(i * factor + di) * w + (j * factor + dj)];
        dst[static_cast<std::size_t>(i) * w2 + j] = s * inv;
      }
  }
  return Tensor<S>::make(
      {c, h2, w2}, std::move(out), {x},
      [c, h, w, h2, w2, factor, inv](const TensorNode<S>& self, const std::vector<S>& g,
                                     BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int cc = 0; cc < c; ++cc) {
          S* dst = acc.data() + static_cast<std::size_t>(cc) * h * w;
          const S* gr = g.data() + static_cast<std::size_t>(cc) * h2 * w2;
          for (int i = 0; i < h2; ++i)
            for (int j = 0; j < w2; ++j) {
              const S go = gr[static_cast<std::size_t>(i) * w2 + j] * inv;
              for (int di = 0; di < factor; ++di)
                for (int dj = 0; dj < factor; ++dj)
                  dst[static_cast<std::size_t>(i * factor + di) * w + (j * factor + dj)] += go;
            }
        }
      });
}

}  // namespace pixnet
