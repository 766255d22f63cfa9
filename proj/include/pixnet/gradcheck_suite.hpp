#pragma once

// The registered gradient-check suite: every differentiable operation plus
// the decoder blocks and a miniature end-to-end model, all at 64-bit with
// central finite differences. Shared by the CLI `gradcheck` subcommand and
// the acceptance tests.
//
// Functions with ReLU kinks are not differentiable on a measure-zero set,
// and a central difference that straddles a kink reports a large spurious
// error. Each case therefore allows up to three independent input draws:
// a genuine backward bug fails every draw, a kink collision does not.

#include <string>
#include <vector>

#include "pixnet/gradcheck.hpp"
#include "pixnet/model.hpp"
#include "pixnet/objective.hpp"
#include "pixnet/spots.hpp"
#include "pixnet/train.hpp"

namespace pixnet {

struct SuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

namespace detail {

inline Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

// values bounded away from zero, for kinked activations
inline Tensor<double> rand_tensor_offzero(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    const double u = rng.uniform(0.15, 1.0);
    x = rng.uniform() < 0.5 ? -u : u;
  }
  return Tensor<double>::from(std::move(shape), std::move(v));
}

using OpFn = std::function<Tensor<double>(std::vector<Tensor<double>>&)>;
using InputsFn = std::function<std::vector<Tensor<double>>(Rng&)>;

inline void run_case(std::vector<SuiteEntry>& out, const std::string& name, const OpFn& fn,
                     const InputsFn& make_inputs, std::uint64_t case_seed, double tol = 1e-4) {
  double best = 1e300;
  for (int attempt = 0; attempt < 3 && best >= tol; ++attempt) {
    Rng rng(case_seed + 0xa5a5a5a5ull * static_cast<std::uint64_t>(attempt));
    GradCheckReport<double> rep = gradcheck<double>(fn, make_inputs(rng), {}, 1e-5, tol);
    best = std::min(best, rep.max_rel_err);
  }
  out.push_back({name, best, best < tol});
}

}  // namespace detail

inline std::vector<SuiteEntry> run_gradcheck_suite(std::uint64_t seed = 42) {
  using detail::rand_tensor;
  using detail::rand_tensor_offzero;
  std::vector<SuiteEntry> out;
  std::uint64_t case_id = seed * 1009;
  auto next_seed = [&case_id] { return ++case_id * 0x9e3779b97f4a7c15ull; };

  detail::run_case(
      out, "conv2d", [](auto& in) { return scalarize(conv2d(in[0], in[1], in[2], 1, 1)); },
      [](Rng& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 5, 5}, rng),
                                           rand_tensor({3, 2, 3, 3}, rng), rand_tensor({3}, rng)};
      },
      next_seed());
  detail::run_case(
      out, "conv2d_strided", [](auto& in) { return scalarize(conv2d(in[0], in[1], in[2], 2, 1)); },
      [](Rng& rng) {
        return std::vector<Tensor<double>>{rand_tensor({2, 5, 5}, rng),
                                           rand_tensor({3, 2, 3, 3}, rng), rand_tensor({3}, rng)};
      },
      next_seed());
  detail::run_case(
      out, "depthwise_conv2d",
      [](auto& in) { return scalarize(depthwise_conv2d(in[0], in[1], in[2], 1)); },
      [](Rng& rng) {
        return std::vector<Tensor<double>>{rand_tensor({3, 5, 5}, rng),
                                           rand_tensor({3, 3, 3}, rng), rand_tensor({3}, rng)};
      },
      next_seed());
  detail::run_case(
      out, "relu", [](auto& in) { return scalarize(relu(in[0])); },
      [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor_offzero({4, 3, 3}, rng)}; },
      next_seed());
  detail::run_case(
      out, "silu", [](auto& in) { return scalarize(silu(in[0])); },
      [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({4, 3, 3}, rng)}; },
      next_seed());
  detail::run_case(
      out, "sigmoid", [](auto& in) { return scalarize(sigmoid(in[0])); },
      [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({4, 3, 3}, rng)}; },
      next_seed());
  detail::run_case(
      out, "layer_norm",
      [](auto& in) { return scalarize(normalize(in[0], NormKind::layer, in[1], in[2])); },
      [](Rng& rng) {
        return std::vector<Tensor<double>>{rand_tensor({4, 3, 3}, rng),
                                           rand_tensor({4}, rng, 0.5, 1.5), rand_tensor({4}, rng)};
      },
      next_seed());
  detail::run_case(
      out, "batch_norm",
      [](auto& in) { return scalarize(normalize(in[0], NormKind::batch, in[1], in[2])); },
      [](Rng& rng) {
        return std::vector<Tensor<double>>{rand_tensor({4, 3, 3}, rng),
                                           rand_tensor({4}, rng, 0.5, 1.5), rand_tensor({4}, rng)};
      },
      next_seed());
  detail::run_case(
      out, "layer_norm_tokens",
      [](auto& in) { return scalarize(normalize(in[0], NormKind::layer, in[1], in[2])); },
      [](Rng& rng) {
        return std::vector<Tensor<double>>{rand_tensor({5, 6}, rng),
                                           rand_tensor({6}, rng, 0.5, 1.5), rand_tensor({6}, rng)};
      },
      next_seed());
  detail::run_case(
      out, "depth_to_space", [](auto& in) { return scalarize(depth_to_space(in[0], 2)); },
      [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({8, 2, 3}, rng)}; },
      next_seed());
  detail::run_case(
      out, "bilinear_resize", [](auto& in) { return scalarize(bilinear_resize(in[0], 7, 5)); },
      [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({2, 4, 4}, rng)}; },
      next_seed());
  detail::run_case(
      out, "avg_pool2d", [](auto& in) { return scalarize(avg_pool2d(in[0], 2)); },
      [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({3, 4, 4}, rng)}; },
      next_seed());
  detail::run_case(
      out, "matmul", [](auto& in) { return scalarize(matmul(in[0], in[1])); },
      [](Rng& rng) {
        return std::vector<Tensor<double>>{rand_tensor({3, 4}, rng), rand_tensor({4, 5}, rng)};
      },
      next_seed());
  detail::run_case(
      out, "softmax_rows", [](auto& in) { return scalarize(softmax_rows(in[0])); },
      [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({3, 5}, rng)}; },
      next_seed());
  detail::run_case(
      out, "extract_patches", [](auto& in) { return scalarize(extract_patches(in[0], 2)); },
      [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({3, 4, 4}, rng)}; },
      next_seed());

  // softmax-attention block: 4 channels, 3 sites
  detail::run_case(
      out, "attention_block",
      [](auto& in) {
        Tensor<double> scores = scale(matmul(in[0], transpose(in[1])), 1.0 / 2.0);
        return scalarize(matmul(softmax_rows(scores), in[2]));
      },
      [](Rng& rng) {
        return std::vector<Tensor<double>>{rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng),
                                           rand_tensor({3, 4}, rng)};
      },
      next_seed());

  // decoder blocks; block parameters ride along as gradcheck inputs (the
  // handles share nodes with the block, so perturbations are visible)
  {
    Rng wrng(seed + 1);
    auto blk = SafbRefine<double>::init(4, wrng);
    detail::run_case(
        out, "safb_refine", [blk](auto& in) { return scalarize(blk.forward(in[0])); },
        [blk](Rng& rng) {
          return std::vector<Tensor<double>>{rand_tensor({4, 3, 3}, rng), blk.dwc_w, blk.dwc_b,
                                             blk.pw_w, blk.pw_b, blk.ln_gain, blk.ln_bias,
                                             blk.bn_gain, blk.bn_bias};
        },
        next_seed());
  }
  {
    Rng wrng(seed + 2);
    auto blk = SafbFuse<double>::init(6, AttentionMode::channel, wrng);
    detail::run_case(
        out, "safb_fuse_channel", [blk](auto& in) { return scalarize(blk.forward(in[0], in[1])); },
        [blk](Rng& rng) {
          return std::vector<Tensor<double>>{rand_tensor({2, 3, 3}, rng),
                                             rand_tensor({4, 3, 3}, rng), blk.qkv_w, blk.qkv_b};
        },
        next_seed());
  }
  {
    Rng wrng(seed + 3);
    auto blk = SafbFuse<double>::init(6, AttentionMode::spatial, wrng);
    detail::run_case(
        out, "safb_fuse_spatial", [blk](auto& in) { return scalarize(blk.forward(in[0], in[1])); },
        [blk](Rng& rng) {
          return std::vector<Tensor<double>>{rand_tensor({2, 3, 3}, rng),
                                             rand_tensor({4, 3, 3}, rng), blk.qkv_w, blk.qkv_b};
        },
        next_seed());
  }
  {
    Rng wrng(seed + 4);
    auto blk = ShallowBlock<double>::init(3, 4, wrng);
    detail::run_case(
        out, "shallow_upsample", [blk](auto& in) { return scalarize(blk.forward(in[0])); },
        [blk](Rng& rng) {
          return std::vector<Tensor<double>>{rand_tensor({3, 4, 4}, rng), blk.cb1.w, blk.cb1.b,
                                             blk.cb1.bn_gain, blk.cb1.bn_bias, blk.cb2.w,
                                             blk.cb2.b, blk.cb2.bn_gain, blk.cb2.bn_bias};
        },
        next_seed());
  }
  {
    Rng wrng(seed + 5);
    auto blk = DsubBlock<double>::init(4, 3, 2, wrng);
    detail::run_case(
        out, "dsub", [blk](auto& in) { return scalarize(blk.forward(in[0])); },
        [blk](Rng& rng) {
          return std::vector<Tensor<double>>{rand_tensor({4, 3, 3}, rng), blk.conv1_w, blk.conv1_b,
                                             blk.conv2_w, blk.conv2_b, blk.cb.w, blk.cb.b,
                                             blk.cb.bn_gain, blk.cb.bn_bias};
        },
        next_seed());
  }

  // masked aggregation: gradient is the 0/1 indicator, checked like any op
  {
    Spot spot{3.1, 2.7, 1.9, {}};
    detail::run_case(
        out, "aggregate_spot", [spot](auto& in) { return scalarize(aggregate_spot(in[0], spot)); },
        [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({3, 6, 6}, rng)}; },
        next_seed());
  }

  // losses are differentiated with respect to predictions; targets are data
  {
    Rng trng(seed + 7);
    Tensor<double> target = rand_tensor({5, 3}, trng);
    detail::run_case(
        out, "mse_loss", [target](auto& in) { return mse_loss(in[0], target); },
        [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({5, 3}, rng)}; },
        next_seed());
    detail::run_case(
        out, "pcc_loss", [target](auto& in) { return pcc_loss(in[0], target); },
        [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({5, 3}, rng)}; },
        next_seed());
    detail::run_case(
        out, "combined_loss", [target](auto& in) { return combined_loss(in[0], target, 0.5); },
        [](Rng& rng) { return std::vector<Tensor<double>>{rand_tensor({5, 3}, rng)}; },
        next_seed());
  }

  // end-to-end miniature model: every parameter plus the input image
  {
    ModelConfig cfg;
    cfg.encoder.patch_size = 2;
    cfg.encoder.embed_dim = 8;
    cfg.encoder.levels = 2;
    cfg.encoder.heads = 2;
    cfg.encoder.mlp_ratio = 2;
    cfg.encoder.input_h = 8;
    cfg.encoder.input_w = 8;
    cfg.encoder.tap_channels = {4, 6};
    cfg.decoder = DecoderConfig::make({4, 6}, 2);
    PixNetModel<double> model(cfg, seed + 6);

    std::vector<Spot> spots = {{2.4, 2.1, 1.4, {}}, {5.6, 3.0, 1.7, {}}, {4.0, 6.2, 1.2, {}}};
    std::vector<std::vector<int>> masks;
    for (const auto& s : spots) masks.push_back(circular_mask(s, 8, 8));
    Rng trng(seed + 8);
    Tensor<double> target = rand_tensor({3, 2}, trng, 0.5, 2.0);

    ParamMap<double> params = model.params();
    // undo the deliberately small head initialization: a healthy output
    // scale keeps upstream derivatives clear of the finite-difference floor
    for (auto& v : params.find("decoder.head.weight")->value()) v *= 20.0;

    auto fn = [&model, &masks, &target](std::vector<Tensor<double>>& in) {
      Tensor<double> map = model.forward(in[0]);
      Tensor<double> pred = aggregate_spots(map, masks);
      return combined_loss(pred, target, 0.5);
    };
    detail::run_case(
        out, "end_to_end_mini_model", fn,
        [&params](Rng& rng) {
          std::vector<Tensor<double>> inputs;
          inputs.push_back(rand_tensor({3, 8, 8}, rng, 0.0, 1.0));
          for (auto& [name, t] : params.items) inputs.push_back(t);
          return inputs;
        },
        next_seed());
  }

  return out;
}

}  // namespace pixnet
