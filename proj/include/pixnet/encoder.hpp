#pragma once

// Vision-transformer encoder with pyramid taps. Token embeddings from
// non-overlapping patches run through sequential pre-norm transformer
// groups; after selected groups the token grid is reshaped to a 2-D map,
// average-pooled to the level stride and projected to the level width.

#include <cmath>
#include <string>
#include <vector>

#include "pixnet/nn.hpp"
#include "pixnet/params.hpp"
#include "pixnet/tensor.hpp"

namespace pixnet {

struct EncoderConfig {
  int patch_size = 4;
  int embed_dim = 64;
  int levels = 4;           // pyramid levels L
  int groups = 0;           // transformer groups; 0 means one per level
  int blocks_per_group = 1;
  int heads = 4;
  int mlp_ratio = 4;
  int input_h = 64;
  int input_w = 64;
  std::vector<int> tap_channels = {16, 32, 64, 64};  // finest -> coarsest

  int total_groups() const { return groups > 0 ? groups : levels; }
  int level_stride(int level) const { return patch_size << (level - 1); }
  // taps sit after evenly spaced groups, the last one after the final group
  int tap_group(int level) const {
    return (total_groups() * level + levels - 1) / levels;
  }

  void validate() const {
    if (levels < 1) throw DimensionError("encoder: levels must be >= 1");
    if (patch_size < 1) throw DimensionError("encoder: patch_size must be >= 1");
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
      throw DimensionError("encoder: embed_dim must be a positive multiple of heads");
    if (static_cast<int>(tap_channels.size()) != levels)
      throw DimensionError("encoder: tap_channels length must equal levels");
    if (total_groups() < levels)
      throw DimensionError("encoder: need at least one transformer group per level");
    const int max_stride = level_stride(levels);
    if (input_h % max_stride != 0 || input_w % max_stride != 0)
      throw DimensionError("encoder: input extents must be divisible by " +
                           std::to_string(max_stride));
  }
};

template <typename S>
struct TransformerBlock {
  Tensor<S> ln1_gain, ln1_bias;
  Tensor<S> qkv_w, qkv_b;
  Tensor<S> proj_w, proj_b;
  Tensor<S> ln2_gain, ln2_bias;
  Tensor<S> mlp1_w, mlp1_b;
  Tensor<S> mlp2_w, mlp2_b;

  static TransformerBlock init(int dim, int mlp_ratio, Rng& rng) {
    TransformerBlock b;
    b.ln1_gain = param_const<S>({dim}, S(1));
    b.ln1_bias = param_const<S>({dim}, S(0));
    b.qkv_w = param_trunc_normal<S>({dim, 3 * dim}, rng);
    b.qkv_b = param_const<S>({3 * dim}, S(0));
    b.proj_w = param_trunc_normal<S>({dim, dim}, rng);
    b.proj_b = param_const<S>({dim}, S(0));
    b.ln2_gain = param_const<S>({dim}, S(1));
    b.ln2_bias = param_const<S>({dim}, S(0));
    b.mlp1_w = param_trunc_normal<S>({dim, mlp_ratio * dim}, rng);
    b.mlp1_b = param_const<S>({mlp_ratio * dim}, S(0));
    b.mlp2_w = param_trunc_normal<S>({mlp_ratio * dim, dim}, rng);
    b.mlp2_b = param_const<S>({dim}, S(0));
    return b;
  }

  void collect(const std::string& prefix, ParamMap<S>& out) const {
    out.add(prefix + "ln1.gain", ln1_gain);
    out.add(prefix + "ln1.bias", ln1_bias);
    out.add(prefix + "qkv.weight", qkv_w);
    out.add(prefix + "qkv.bias", qkv_b);
    out.add(prefix + "proj.weight", proj_w);
    out.add(prefix + "proj.bias", proj_b);
    out.add(prefix + "ln2.gain", ln2_gain);
    out.add(prefix + "ln2.bias", ln2_bias);
    out.add(prefix + "mlp1.weight", mlp1_w);
    out.add(prefix + "mlp1.bias", mlp1_b);
    out.add(prefix + "mlp2.weight", mlp2_w);
    out.add(prefix + "mlp2.bias", mlp2_b);
  }
};

// scaled dot-product self-attention over tokens [T,D], softmax per query row
template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& tokens, const Tensor<S>& qkv_w,
                               const Tensor<S>& qkv_b, const Tensor<S>& proj_w,
                               const Tensor<S>& proj_b, int heads) {
  const int dim = tokens.extent(1);
  if (dim % heads != 0) throw DimensionError("attention: dim not divisible by heads");
  const int head_dim = dim / heads;
  const S inv_scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(head_dim)));
  Tensor<S> qkv = linear(tokens, qkv_w, qkv_b);  // [T, 3D]
  std::vector<Tensor<S>> merged;
  merged.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor<S> q = narrow(qkv, 1, h * head_dim, head_dim);
    Tensor<S> k = narrow(qkv, 1, dim + h * head_dim, head_dim);
    Tensor<S> v = narrow(qkv, 1, 2 * dim + h * head_dim, head_dim);
    Tensor<S> attn = softmax_rows(scale(matmul(q, transpose(k)), inv_scale));
    merged.push_back(matmul(attn, v));
  }
  Tensor<S> out = heads == 1 ? merged[0] : concat(merged, 1);
  return linear(out, proj_w, proj_b);
}

template <typename S>
Tensor<S> transformer_block_forward(const Tensor<S>& tokens, const TransformerBlock<S>& blk,
                                    int heads) {
  Tensor<S> h = normalize(tokens, NormKind::layer, blk.ln1_gain, blk.ln1_bias);
  Tensor<S> x = add(tokens, multi_head_attention(h, blk.qkv_w, blk.qkv_b, blk.proj_w,
                                                 blk.proj_b, heads));
  Tensor<S> h2 = normalize(x, NormKind::layer, blk.ln2_gain, blk.ln2_bias);
  Tensor<S> m = linear(silu(linear(h2, blk.mlp1_w, blk.mlp1_b)), blk.mlp2_w, blk.mlp2_b);
  return add(x, m);
}

template <typename S>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.embed_dim, p = cfg_.patch_size;
    patch_w_ = param_trunc_normal<S>({3 * p * p, d}, rng);
    patch_b_ = param_const<S>({d}, S(0));
    pos_ = param_trunc_normal<S>({(cfg_.input_h / p) * (cfg_.input_w / p), d}, rng);
    const int nblocks = cfg_.total_groups() * cfg_.blocks_per_group;
    blocks_.reserve(static_cast<std::size_t>(nblocks));
    for (int i = 0; i < nblocks; ++i)
      blocks_.push_back(TransformerBlock<S>::init(d, cfg_.mlp_ratio, rng));
    for (int l = 1; l <= cfg_.levels; ++l) {
      const int c = cfg_.tap_channels[static_cast<std::size_t>(l - 1)];
      tap_w_.push_back(param_kaiming_uniform<S>({c, d, 1, 1}, rng, d));
      tap_b_.push_back(param_const<S>({c}, S(0)));
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  // [3,H,W] -> tokens [T,D], learned per-patch projection plus positional table
  Tensor<S> patch_embed(const Tensor<S>& image) const {
    if (image.rank() != 3 || image.extent(0) != 3)
      throw DimensionError("patch_embed: image must be [3,H,W]");
    if (image.extent(1) % cfg_.patch_size != 0 || image.extent(2) % cfg_.patch_size != 0)
      throw DimensionError("patch_embed: extents not divisible by patch size");
    Tensor<S> patches = extract_patches(image, cfg_.patch_size);
    if (patches.extent(0) != pos_.extent(0))
      throw DimensionError("patch_embed: image extents do not match the positional table");
    return add(linear(patches, patch_w_, patch_b_), pos_);
  }

  // group_index is 1-based
  Tensor<S> group_forward(Tensor<S> tokens, int group_index) const {
    if (group_index < 1 || group_index > cfg_.total_groups())
      throw DimensionError("group_forward: group index out of range");
    const int base = (group_index - 1) * cfg_.blocks_per_group;
    for (int b = 0; b < cfg_.blocks_per_group; ++b)
      tokens = transformer_block_forward(tokens, blocks_[static_cast<std::size_t>(base + b)],
                                         cfg_.heads);
    return tokens;
  }

  // levels finest-first, level l at stride patch_size * 2^(l-1)
  std::vector<Tensor<S>> extract_pyramid(const Tensor<S>& image) const {
    const int hp = image.extent(1) / cfg_.patch_size;
    const int wp = image.extent(2) / cfg_.patch_size;
    Tensor<S> tokens = patch_embed(image);
    std::vector<Tensor<S>> pyramid;
    pyramid.reserve(static_cast<std::size_t>(cfg_.levels));
    int next_level = 1;
    for (int g = 1; g <= cfg_.total_groups(); ++g) {
      tokens = group_forward(tokens, g);
      if (next_level <= cfg_.levels && g == cfg_.tap_group(next_level)) {
        const int l = next_level++;
        Tensor<S> map = tokens_to_map(tokens, hp, wp);
        Tensor<S> pooled = avg_pool2d(map, 1 << (l - 1));
        pyramid.push_back(conv2d(pooled, tap_w_[static_cast<std::size_t>(l - 1)],
                                 tap_b_[static_cast<std::size_t>(l - 1)], 1, 0));
      }
    }
    return pyramid;
  }

  void collect(const std::string& prefix, ParamMap<S>& out) const {
    out.add(prefix + "patch.weight", patch_w_);
    out.add(prefix + "patch.bias", patch_b_);
    out.add(prefix + "pos", pos_);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + "block" + std::to_string(i) + ".", out);
    for (std::size_t l = 0; l < tap_w_.size(); ++l) {
      out.add(prefix + "tap" + std::to_string(l + 1) + ".weight", tap_w_[l]);
      out.add(prefix + "tap" + std::to_string(l + 1) + ".bias", tap_b_[l]);
    }
  }

 private:
  EncoderConfig cfg_;
  Tensor<S> patch_w_, patch_b_, pos_;
  std::vector<TransformerBlock<S>> blocks_;
  std::vector<Tensor<S>> tap_w_, tap_b_;
};

}  // namespace pixnet
