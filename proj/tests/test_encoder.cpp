#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pixnet/encoder.hpp"

using namespace pixnet;
using T = Tensor<double>;

namespace {

T rand_image(int h, int w, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(3) * h * w);
  for (auto& x : v) x = rng.uniform();
  return T::from({3, h, w}, std::move(v));
}

EncoderConfig small_cfg(int h, int w, int patch, int levels) {
  EncoderConfig cfg;
  cfg.patch_size = patch;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.levels = levels;
  cfg.input_h = h;
  cfg.input_w = w;
  cfg.tap_channels.assign(static_cast<std::size_t>(levels), 4);
  return cfg;
}

void fill(Tensor<double>& t, double v) { std::fill(t.value().begin(), t.value().end(), v); }

}  // namespace

TEST_CASE("patch_embed token counts") {
  Rng rng(1);
  Encoder<double> enc8(small_cfg(8, 8, 4, 1), rng);
  CHECK(enc8.patch_embed(rand_image(8, 8, rng)).shape() == Shape{4, 8});

  Rng rng2(2);
  EncoderConfig cfg = small_cfg(64, 64, 4, 1);
  cfg.embed_dim = 16;
  Encoder<double> enc64(cfg, rng2);
  CHECK(enc64.patch_embed(rand_image(64, 64, rng2)).shape() == Shape{256, 16});
}

TEST_CASE("zero image and zero positional table leave only the projection bias") {
  Rng rng(3);
  EncoderConfig cfg = small_cfg(8, 8, 4, 1);
  Encoder<double> enc(cfg, rng);
  ParamMap<double> params;
  enc.collect("", params);
  fill(*params.find("pos"), 0.0);
  Tensor<double>* bias = params.find("patch.bias");
  for (int d = 0; d < cfg.embed_dim; ++d) bias->value()[static_cast<std::size_t>(d)] = 0.1 * d;
  T tokens = enc.patch_embed(T::zeros({3, 8, 8}));
  for (int t = 0; t < tokens.extent(0); ++t)
    for (int d = 0; d < cfg.embed_dim; ++d) CHECK(tokens.at(t, d) == 0.1 * d);
}

TEST_CASE("patch_embed validates extents") {
  Rng rng(4);
  Encoder<double> enc(small_cfg(8, 8, 4, 1), rng);
  CHECK_THROWS_AS(enc.patch_embed(rand_image(10, 8, rng)), DimensionError);
  CHECK_THROWS_AS(enc.patch_embed(rand_image(16, 16, rng)), DimensionError);  // pos table mismatch
}

TEST_CASE("transformer group preserves token shape") {
  Rng rng(5);
  Encoder<double> enc(small_cfg(16, 16, 4, 2), rng);
  std::vector<double> v(16 * 8);
  for (auto& x : v) x = rng.uniform(-1, 1);
  T tokens = T::from({16, 8}, std::move(v));
  T out = enc.group_forward(tokens, 1);
  CHECK(out.shape() == tokens.shape());
  CHECK_THROWS_AS(enc.group_forward(tokens, 0), DimensionError);
  CHECK_THROWS_AS(enc.group_forward(tokens, 3), DimensionError);
}

TEST_CASE("zero attention and MLP weights make the block an identity") {
  Rng rng(6);
  Encoder<double> enc(small_cfg(8, 8, 4, 1), rng);
  ParamMap<double> params;
  enc.collect("", params);
  for (auto& [name, t] : params.items)
    if (name.find("block0.") == 0 && name.find("ln") == std::string::npos) fill(t, 0.0);
  std::vector<double> v(4 * 8);
  for (auto& x : v) x = rng.uniform(0.1, 1.0);
  T tokens = T::from({4, 8}, v);
  T out = enc.group_forward(tokens, 1);
  CHECK(out.value() == tokens.value());
}

TEST_CASE("single-token attention returns the value projection") {
  Rng rng(7);
  const int dim = 8;
  T qkv_w = T::from({dim, 3 * dim}, [&] {
    std::vector<double> v(dim * 3 * dim);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
  }());
  T qkv_b = T::zeros({3 * dim});
  // identity out-projection isolates the value path
  std::vector<double> eye(dim * dim, 0.0);
  for (int i = 0; i < dim; ++i) eye[static_cast<std::size_t>(i) * dim + i] = 1.0;
  T proj_w = T::from({dim, dim}, eye);
  T proj_b = T::zeros({dim});
  std::vector<double> tv(dim);
  for (auto& x : tv) x = rng.uniform(-1, 1);
  T token = T::from({1, dim}, tv);

  T out = multi_head_attention(token, qkv_w, qkv_b, proj_w, proj_b, 2);
  // softmax over one key is 1, so the output is V = token * Wv
  for (int d = 0; d < dim; ++d) {
    double v = 0;
    for (int k = 0; k < dim; ++k) v += tv[static_cast<std::size_t>(k)] * qkv_w.at(k, 2 * dim + d);
    CHECK(out.at(0, d) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("pyramid level shapes for the toy config") {
  Rng rng(8);
  EncoderConfig cfg = small_cfg(64, 64, 4, 4);
  cfg.tap_channels = {16, 32, 64, 64};
  Encoder<double> enc(cfg, rng);
  auto pyr = enc.extract_pyramid(rand_image(64, 64, rng));
  REQUIRE(pyr.size() == 4);
  CHECK(pyr[0].shape() == Shape{16, 16, 16});
  CHECK(pyr[1].shape() == Shape{32, 8, 8});
  CHECK(pyr[2].shape() == Shape{64, 4, 4});
  CHECK(pyr[3].shape() == Shape{64, 2, 2});
}

TEST_CASE("constant image gives spatially constant pyramid levels") {
  Rng rng(9);
  Encoder<double> enc(small_cfg(32, 32, 4, 3), rng);
  // the positional table is the one deliberate source of spatial variation;
  // zero it so the test sees pure pooling of constants
  ParamMap<double> params;
  enc.collect("", params);
  fill(*params.find("pos"), 0.0);
  auto pyr = enc.extract_pyramid(T::filled({3, 32, 32}, 0.4));
  for (const auto& level : pyr) {
    for (int c = 0; c < level.extent(0); ++c) {
      const double ref = level.at(c, 0, 0);
      for (int i = 0; i < level.extent(1); ++i)
        for (int j = 0; j < level.extent(2); ++j)
          CHECK(level.at(c, i, j) == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("degenerate single-level pyramid is the reshaped tokens with no extra pooling") {
  Rng rng(10);
  Encoder<double> enc(small_cfg(16, 16, 4, 1), rng);
  auto pyr = enc.extract_pyramid(rand_image(16, 16, rng));
  REQUIRE(pyr.size() == 1);
  CHECK(pyr[0].shape() == Shape{4, 4, 4});  // stride 4 only
}

TEST_CASE("spatial extents halve between adjacent levels for every valid config") {
  for (int patch : {2, 4})
    for (int levels : {2, 3, 4}) {
      Rng rng(100 + patch * 10 + levels);
      const int extent = patch * (1 << (levels - 1)) * 2;
      Encoder<double> enc(small_cfg(extent, extent, patch, levels), rng);
      auto pyr = enc.extract_pyramid(rand_image(extent, extent, rng));
      for (int l = 1; l < levels; ++l) {
        CHECK(pyr[static_cast<std::size_t>(l - 1)].extent(1) ==
              2 * pyr[static_cast<std::size_t>(l)].extent(1));
        CHECK(pyr[static_cast<std::size_t>(l - 1)].extent(2) ==
              2 * pyr[static_cast<std::size_t>(l)].extent(2));
      }
    }
}

TEST_CASE("extraction is deterministic given the weights, bitwise") {
  Rng rng(11);
  Encoder<double> enc(small_cfg(16, 16, 4, 2), rng);
  T image = rand_image(16, 16, rng);
  auto a = enc.extract_pyramid(image);
  auto b = enc.extract_pyramid(image);
  for (std::size_t l = 0; l < a.size(); ++l) CHECK(a[l].value() == b[l].value());
}

TEST_CASE("gradients reach the patch embedding from every pyramid level") {
  Rng rng(12);
  Encoder<double> enc(small_cfg(16, 16, 4, 2), rng);
  ParamMap<double> params;
  enc.collect("", params);
  Tensor<double>* patch_w = params.find("patch.weight");
  T image = rand_image(16, 16, rng);
  auto pyr = enc.extract_pyramid(image);
  for (std::size_t l = 0; l < pyr.size(); ++l) {
    patch_w->zero_grad();
    sum(pyr[l]).backward();
    double norm = 0;
    for (double g : patch_w->grad()) norm += std::abs(g);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("config validation") {
  EncoderConfig cfg = small_cfg(16, 16, 4, 2);
  cfg.embed_dim = 9;  // not divisible by heads=2
  CHECK_THROWS_AS(cfg.validate(), DimensionError);
  cfg = small_cfg(20, 16, 4, 2);  // 20 % 8 != 0
  CHECK_THROWS_AS(cfg.validate(), DimensionError);
  cfg = small_cfg(16, 16, 4, 2);
  cfg.tap_channels = {4};
  CHECK_THROWS_AS(cfg.validate(), DimensionError);
}

TEST_CASE("evenly spaced tap groups, last tap on the final group") {
  EncoderConfig cfg;
  cfg.levels = 3;
  cfg.groups = 6;
  CHECK(cfg.tap_group(1) == 2);
  CHECK(cfg.tap_group(2) == 4);
  CHECK(cfg.tap_group(3) == 6);
  cfg.groups = 0;  // defaults to one per level
  CHECK(cfg.tap_group(2) == 2);
}
