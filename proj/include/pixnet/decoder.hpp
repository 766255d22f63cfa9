#pragma once

// Progressive U-style decoder. Deep stages upsample through a
// depth-to-space block, shallow stages through a bilinear path; each stage
// refines the skip feature with a depthwise residual block and fuses the
// two streams under separable attention. A final bilinear resize plus 1x1
// convolution produces the per-pixel expression map.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pixnet/nn.hpp"
#include "pixnet/params.hpp"
#include "pixnet/tensor.hpp"

namespace pixnet {

enum class AttentionMode { channel, spatial };

struct DecoderConfig {
  std::vector<int> filter_sizes = {16, 32, 64, 64};  // finest -> coarsest, length L
  int d_exponent = 2;        // filter expansion K = C * 2^d; depth-to-space r = 2^(d/2)
  int shallow_threshold = 3; // levels above take the depth-to-space path
  AttentionMode attention_mode = AttentionMode::channel;
  int genes = 8;

  int levels() const { return static_cast<int>(filter_sizes.size()); }
  int d2s_factor() const { return 1 << (d_exponent / 2); }

  static DecoderConfig make(std::vector<int> filters, int genes,
                            AttentionMode mode = AttentionMode::channel) {
    DecoderConfig c;
    c.filter_sizes = std::move(filters);
    c.genes = genes;
    c.attention_mode = mode;
    c.shallow_threshold = std::min(3, c.levels() - 1);
    return c;
  }

  void validate() const {
    if (levels() < 2) throw DimensionError("decoder: at least two pyramid levels required");
    for (int f : filter_sizes)
      if (f < 1) throw DimensionError("decoder: filter sizes must be positive");
    if (shallow_threshold >= levels() || shallow_threshold < 1)
      throw DimensionError("decoder: shallow_threshold must be in [1, levels)");
    if (d_exponent < 2 || d_exponent % 2 != 0)
      throw DimensionError("decoder: d exponent must be even and >= 2");
    if (genes < 1) throw DimensionError("decoder: gene count must be positive");
  }
};

// normalization factor: sqrt of the attended dot-product dimension
inline double attention_beta(AttentionMode mode, int channels, int sites) {
  return std::sqrt(static_cast<double>(mode == AttentionMode::channel ? sites : channels));
}

// filter count of the depth-to-space expansion conv: K = C * 2^d
inline int dsub_expansion_filters(int channels, int d_exponent) {
  return channels * (1 << d_exponent);
}

// composite convolutional block: conv3x3 -> batch norm -> ReLU
template <typename S>
struct ConvBN {
  Tensor<S> w, b, bn_gain, bn_bias;

  static ConvBN init(int c_in, int c_out, Rng& rng) {
    ConvBN cb;
    cb.w = param_kaiming_uniform<S>({c_out, c_in, 3, 3}, rng, c_in * 9);
    cb.b = param_const<S>({c_out}, S(0));
    cb.bn_gain = param_const<S>({c_out}, S(1));
    cb.bn_bias = param_const<S>({c_out}, S(0));
    return cb;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return relu(normalize(conv2d(x, w, b, 1, 1), NormKind::batch, bn_gain, bn_bias));
  }

  void collect(const std::string& prefix, ParamMap<S>& out) const {
    out.add(prefix + "weight", w);
    out.add(prefix + "bias", b);
    out.add(prefix + "bn.gain", bn_gain);
    out.add(prefix + "bn.bias", bn_bias);
  }
};

// deep-stage upsampling: conv expands C -> C*2^d so depth-to-space is
// well-defined, a second conv maps to the target width, then a CB block
template <typename S>
struct DsubBlock {
  Tensor<S> conv1_w, conv1_b, conv2_w, conv2_b;
  ConvBN<S> cb;
  int r = 2;

  static DsubBlock init(int c_in, int c_out, int d_exponent, Rng& rng) {
    DsubBlock blk;
    const int k_filters = dsub_expansion_filters(c_in, d_exponent);
    blk.r = 1 << (d_exponent / 2);
    blk.conv1_w = param_kaiming_uniform<S>({k_filters, c_in, 3, 3}, rng, c_in * 9);
    blk.conv1_b = param_const<S>({k_filters}, S(0));
    blk.conv2_w = param_kaiming_uniform<S>({c_out, c_in, 3, 3}, rng, c_in * 9);
    blk.conv2_b = param_const<S>({c_out}, S(0));
    blk.cb = ConvBN<S>::init(c_out, c_out, rng);
    return blk;
  }

  int expansion_filters() const { return conv1_w.extent(0); }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> up = depth_to_space(relu(conv2d(x, conv1_w, conv1_b, 1, 1)), r);
    return cb.forward(relu(conv2d(up, conv2_w, conv2_b, 1, 1)));
  }

  void collect(const std::string& prefix, ParamMap<S>& out) const {
    out.add(prefix + "conv1.weight", conv1_w);
    out.add(prefix + "conv1.bias", conv1_b);
    out.add(prefix + "conv2.weight", conv2_w);
    out.add(prefix + "conv2.bias", conv2_b);
    cb.collect(prefix + "cb.", out);
  }
};

// shallow-stage upsampling: CB -> bilinear x2 -> CB
template <typename S>
struct ShallowBlock {
  ConvBN<S> cb1, cb2;

  static ShallowBlock init(int c_in, int c_out, Rng& rng) {
    ShallowBlock blk;
    blk.cb1 = ConvBN<S>::init(c_in, c_out, rng);
    blk.cb2 = ConvBN<S>::init(c_out, c_out, rng);
    return blk;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> h = cb1.forward(x);
    return cb2.forward(bilinear_resize(h, h.extent(1) * 2, h.extent(2) * 2));
  }

  void collect(const std::string& prefix, ParamMap<S>& out) const {
    cb1.collect(prefix + "cb1.", out);
    cb2.collect(prefix + "cb2.", out);
  }
};

// depthwise residual refinement; the two depthwise applications share one
// weight set, so the branch is computed once and consumed twice
template <typename S>
struct SafbRefine {
  Tensor<S> dwc_w, dwc_b, pw_w, pw_b, ln_gain, ln_bias, bn_gain, bn_bias;

  static SafbRefine init(int c, Rng& rng) {
    SafbRefine blk;
    blk.dwc_w = param_kaiming_uniform<S>({c, 3, 3}, rng, 9);
    blk.dwc_b = param_const<S>({c}, S(0));
    blk.pw_w = param_kaiming_uniform<S>({c, c, 1, 1}, rng, c);
    blk.pw_b = param_const<S>({c}, S(0));
    blk.ln_gain = param_const<S>({c}, S(1));
    blk.ln_bias = param_const<S>({c}, S(0));
    blk.bn_gain = param_const<S>({c}, S(1));
    blk.bn_bias = param_const<S>({c}, S(0));
    return blk;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> dw = depthwise_conv2d(x, dwc_w, dwc_b, 1);
    Tensor<S> mid = normalize(conv2d(silu(dw), pw_w, pw_b, 1, 0), NormKind::layer, ln_gain, ln_bias);
    return normalize(silu(add(dw, mid)), NormKind::batch, bn_gain, bn_bias);
  }

  void collect(const std::string& prefix, ParamMap<S>& out) const {
    out.add(prefix + "dwc.weight", dwc_w);
    out.add(prefix + "dwc.bias", dwc_b);
    out.add(prefix + "pw.weight", pw_w);
    out.add(prefix + "pw.bias", pw_b);
    out.add(prefix + "ln.gain", ln_gain);
    out.add(prefix + "ln.bias", ln_bias);
    out.add(prefix + "bn.gain", bn_gain);
    out.add(prefix + "bn.bias", bn_bias);
  }
};

// concat + residual attention gate; one 1x1 conv produces Q,K,V in thirds
template <typename S>
struct SafbFuse {
  Tensor<S> qkv_w, qkv_b;
  AttentionMode mode = AttentionMode::channel;

  static SafbFuse init(int c_fused, AttentionMode mode, Rng& rng) {
    SafbFuse blk;
    blk.mode = mode;
    blk.qkv_w = param_kaiming_uniform<S>({3 * c_fused, c_fused, 1, 1}, rng, c_fused);
    blk.qkv_b = param_const<S>({3 * c_fused}, S(0));
    return blk;
  }

  Tensor<S> forward(const Tensor<S>& f_hat, const Tensor<S>& u) const {
    if (f_hat.extent(1) != u.extent(1) || f_hat.extent(2) != u.extent(2))
      throw DimensionError("safb_fuse: spatial extents must match, got " +
                           shape_str(f_hat.shape()) + " vs " + shape_str(u.shape()));
    Tensor<S> fu = concat_channels(f_hat, u);
    const int c = fu.extent(0), h = fu.extent(1), w = fu.extent(2);
    const int sites = h * w;
    Tensor<S> qkv = conv2d(fu, qkv_w, qkv_b, 1, 0);
    Tensor<S> q = reshape(narrow(qkv, 0, 0, c), {c, sites});
    Tensor<S> k = reshape(narrow(qkv, 0, c, c), {c, sites});
    Tensor<S> v = reshape(narrow(qkv, 0, 2 * c, c), {c, sites});
    const S inv_beta = S(1) / static_cast<S>(attention_beta(mode, c, sites));
    Tensor<S> gated;
    if (mode == AttentionMode::channel) {
      Tensor<S> attn = softmax_rows(scale(matmul(q, transpose(k)), inv_beta));  // [C,C]
      gated = reshape(matmul(attn, v), {c, h, w});
    } else {
      Tensor<S> qs = transpose(q), ks = transpose(k), vs = transpose(v);  // [sites,C]
      Tensor<S> attn = softmax_rows(scale(matmul(qs, transpose(ks)), inv_beta));
      gated = reshape(transpose(matmul(attn, vs)), {c, h, w});
    }
    return add(fu, gated);
  }

  void collect(const std::string& prefix, ParamMap<S>& out) const {
    out.add(prefix + "qkv.weight", qkv_w);
    out.add(prefix + "qkv.bias", qkv_b);
  }
};

// which path produced each level's upsampled input, for routing assertions
struct DecodeTrace {
  std::vector<int> dsub_levels;
  std::vector<int> bilinear_levels;
};

template <typename S>
class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const auto& fs = cfg_.filter_sizes;
    const int levels = cfg_.levels();
    for (int l = levels; l >= 2; --l) {
      Stage st;
      st.level = l;
      st.use_dsub = l > cfg_.shallow_threshold;
      const int c_in = fs[static_cast<std::size_t>(l - 1)] * (l == levels ? 1 : 2);
      const int c_out = fs[static_cast<std::size_t>(l - 2)];
      if (st.use_dsub)
        st.dsub = DsubBlock<S>::init(c_in, c_out, cfg_.d_exponent, rng);
      else
        st.shallow = ShallowBlock<S>::init(c_in, c_out, rng);
      st.refine = SafbRefine<S>::init(c_out, rng);
      st.fuse = SafbFuse<S>::init(2 * c_out, cfg_.attention_mode, rng);
      stages_.push_back(std::move(st));
    }
    const int head_in = 2 * fs[0];
    // the head starts near (not at) zero: circular aggregation amplifies
    // map values by mask area, and any fine-scale component the spot sums
    // cannot see keeps its initial value for good
    head_w_ = param_kaiming_uniform<S>({cfg_.genes, head_in, 1, 1}, rng, head_in);
    for (auto& v : head_w_.value()) v *= S(0.05);
    head_b_ = param_const<S>({cfg_.genes}, S(0));
  }

  const DecoderConfig& config() const { return cfg_; }

  // pyramid is finest-first; output is [genes, out_h, out_w]
  Tensor<S> decode(const std::vector<Tensor<S>>& pyramid, int out_h, int out_w,
                   DecodeTrace* trace = nullptr) const {
    const int levels = cfg_.levels();
    if (static_cast<int>(pyramid.size()) != levels)
      throw DimensionError("decode: expected " + std::to_string(levels) + " pyramid levels, got " +
                           std::to_string(pyramid.size()));
    for (int l = 1; l <= levels; ++l)
      if (pyramid[static_cast<std::size_t>(l - 1)].extent(0) !=
          cfg_.filter_sizes[static_cast<std::size_t>(l - 1)])
        throw DimensionError("decode: level " + std::to_string(l) + " channel count mismatch");

    Tensor<S> d = pyramid.back();
    for (const Stage& st : stages_) {
      Tensor<S> up;
      if (st.use_dsub) {
        up = st.dsub->forward(d);
        if (trace) trace->dsub_levels.push_back(st.level);
      } else {
        up = st.shallow->forward(d);
        if (trace) trace->bilinear_levels.push_back(st.level);
      }
      const Tensor<S>& skip = pyramid[static_cast<std::size_t>(st.level - 2)];
      if (up.extent(1) != skip.extent(1) || up.extent(2) != skip.extent(2))
        throw DimensionError("decode: upsampled extent does not match level " +
                             std::to_string(st.level - 1));
      d = st.fuse.forward(st.refine.forward(skip), up);
    }
    return conv2d(bilinear_resize(d, out_h, out_w), head_w_, head_b_, 1, 0);
  }

  void collect(const std::string& prefix, ParamMap<S>& out) const {
    for (const Stage& st : stages_) {
      const std::string sp = prefix + "stage" + std::to_string(st.level) + ".";
      if (st.use_dsub)
        st.dsub->collect(sp + "up.", out);
      else
        st.shallow->collect(sp + "up.", out);
      st.refine.collect(sp + "refine.", out);
      st.fuse.collect(sp + "fuse.", out);
    }
    out.add(prefix + "head.weight", head_w_);
    out.add(prefix + "head.bias", head_b_);
  }

  // test access
  const Tensor<S>& head_weight() { return head_w_; }
  const Tensor<S>& head_bias() { return head_b_; }

 private:
  struct Stage {
    int level = 0;
    bool use_dsub = false;
    std::optional<DsubBlock<S>> dsub;
    std::optional<ShallowBlock<S>> shallow;
    SafbRefine<S> refine;
    SafbFuse<S> fuse;
  };

  DecoderConfig cfg_;
  std::vector<Stage> stages_;
  Tensor<S> head_w_, head_b_;
};

}  // namespace pixnet
