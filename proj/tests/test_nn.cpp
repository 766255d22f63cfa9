#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pixnet/gradcheck.hpp"
#include "pixnet/nn.hpp"

using namespace pixnet;
using T = Tensor<double>;

namespace {

T rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T::from(std::move(shape), std::move(v));
}

// plain six-loop convolution, the reference for conv2d
std::vector<double> conv_oracle(const std::vector<double>& x, int ci, int h, int w,
                                const std::vector<double>& wt, int co, int k,
                                const std::vector<double>& b, int stride, int pad, int& hout,
                                int& wout) {
  hout = (h + 2 * pad - k) / stride + 1;
  wout = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(co) * hout * wout, 0.0);
  for (int oc = 0; oc < co; ++oc)
    for (int oy = 0; oy < hout; ++oy)
      for (int ox = 0; ox < wout; ++ox) {
        double acc = b[static_cast<std::size_t>(oc)];
        for (int ic = 0; ic < ci; ++ic)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const int iy = oy * stride - pad + dy;
              const int ix = ox * stride - pad + dx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(static_cast<std::size_t>(ic) * h + iy) * w + ix] *
                     wt[((static_cast<std::size_t>(oc) * ci + ic) * k + dy) * k + dx];
            }
        out[(static_cast<std::size_t>(oc) * hout + oy) * wout + ox] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d identity kernel maps [[5]] to [[5]]") {
  T x = T::from({1, 1, 1}, {5.0});
  T w = T::from({1, 1, 1, 1}, {1.0});
  T b = T::zeros({1});
  CHECK(conv2d(x, w, b, 1, 0).value() == std::vector<double>{5.0});
}

TEST_CASE("conv2d with zero weights annihilates any input") {
  Rng rng(1);
  T x = rand_tensor({2, 4, 4}, rng);
  T w = T::zeros({3, 2, 3, 3});
  T b = T::zeros({3});
  T y = conv2d(x, w, b, 1, 1);
  for (double v : y.value()) CHECK(v == 0.0);
}

TEST_CASE("conv2d on a ramp with an averaging kernel matches the loop oracle exactly") {
  std::vector<double> ramp(9);
  for (int i = 0; i < 9; ++i) ramp[static_cast<std::size_t>(i)] = i;
  T x = T::from({1, 3, 3}, ramp);
  T w = T::from({1, 1, 3, 3}, std::vector<double>(9, 1.0 / 9));
  T b = T::from({1}, {0.25});
  int hout, wout;
  const auto expect =
      conv_oracle(x.value(), 1, 3, 3, w.value(), 1, 3, b.value(), 1, 1, hout, wout);
  T y = conv2d(x, w, b, 1, 1);
  CHECK(y.shape() == Shape{1, 3, 3});
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(expect[i]).epsilon(1e-15));
}

TEST_CASE("conv2d random case matches the loop oracle exactly") {
  Rng rng(2);
  T x = rand_tensor({3, 6, 5}, rng);
  T w = rand_tensor({4, 3, 3, 3}, rng);
  T b = rand_tensor({4}, rng);
  int hout, wout;
  const auto expect = conv_oracle(x.value(), 3, 6, 5, w.value(), 4, 3, b.value(), 1, 1, hout, wout);
  T y = conv2d(x, w, b, 1, 1);
  REQUIRE(y.shape() == Shape{4, hout, wout});
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("conv2d rejects bad geometry") {
  Rng rng(3);
  T x = rand_tensor({2, 5, 5}, rng);
  T w = rand_tensor({3, 2, 3, 3}, rng);
  T b = T::zeros({3});
  CHECK_THROWS_AS(conv2d(x, rand_tensor({3, 1, 3, 3}, rng), b, 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, rand_tensor({3, 2, 2, 2}, rng), b, 1, 0), DimensionError);  // even kernel
  CHECK_THROWS_AS(conv2d(x, w, T::zeros({4}), 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(rand_tensor({2, 2, 2}, rng), w, b, 1, 0), DimensionError);  // kernel > input
}

TEST_CASE("conv2d non-exact output extent is a dimension error") {
  Rng rng(4);
  T x = rand_tensor({1, 6, 6}, rng);
  T w = rand_tensor({1, 1, 3, 3}, rng);
  T b = T::zeros({1});
  // (6 - 3) = 3 divides by 3 -> ok; by 2 -> error
  CHECK_NOTHROW(conv2d(x, w, b, 3, 0));
  CHECK_THROWS_AS(conv2d(x, w, b, 2, 0), DimensionError);
}

TEST_CASE("depthwise delta kernel preserves the input") {
  Rng rng(5);
  T x = rand_tensor({2, 4, 4}, rng);
  std::vector<double> delta(2 * 9, 0.0);
  delta[4] = 1.0;   // center of channel 0
  delta[13] = 1.0;  // center of channel 1
  T w = T::from({2, 3, 3}, delta);
  T b = T::zeros({2});
  CHECK(depthwise_conv2d(x, w, b, 1).value() == x.value());
}

TEST_CASE("depthwise channels are independent") {
  Rng rng(6);
  T x = rand_tensor({2, 4, 4}, rng);
  std::vector<double> wv(2 * 9, 0.0);
  wv[4] = 1.0;  // channel 0: delta; channel 1: zeros
  T w = T::from({2, 3, 3}, wv);
  T b = T::zeros({2});
  T y = depthwise_conv2d(x, w, b, 1);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(y.at(0, i, j) == x.at(0, i, j));
      CHECK(y.at(1, i, j) == 0.0);
    }
}

TEST_CASE("depthwise random case matches a grouped loop oracle exactly") {
  Rng rng(7);
  T x = rand_tensor({3, 5, 5}, rng);
  T w = rand_tensor({3, 3, 3}, rng);
  T b = rand_tensor({3}, rng);
  T y = depthwise_conv2d(x, w, b, 1);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double acc = b.at(c);
        for (int dy = 0; dy < 3; ++dy)
          for (int dx = 0; dx < 3; ++dx) {
            const int iy = i - 1 + dy, ix = j - 1 + dx;
            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
            acc += x.at(c, iy, ix) * w.at(c, dy, dx);
          }
        CHECK(y.at(c, i, j) == doctest::Approx(acc).epsilon(1e-13));
      }
  CHECK_THROWS_AS(depthwise_conv2d(x, rand_tensor({2, 3, 3}, rng), b, 1), DimensionError);
  CHECK_THROWS_AS(depthwise_conv2d(x, w, b, 2), DimensionError);  // padding != (k-1)/2
}

TEST_CASE("activation values") {
  T x = T::from({3}, {-1, 0, 2});
  CHECK(relu(x).value() == std::vector<double>{0, 0, 2});
  CHECK(silu(T::from({1}, {0.0})).value() == std::vector<double>{0.0});
  // sigma(1) = 1/(1+e^-1)
  CHECK(silu(T::from({1}, {1.0})).item() == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(sigmoid(T::from({1}, {0.0})).item() == 0.5);
  // dispatcher agrees with the direct functions
  CHECK(activation(x, Activation::relu).value() == relu(x).value());
  CHECK(activation(x, Activation::silu).value() == silu(x).value());
  CHECK(activation(x, Activation::sigmoid).value() == sigmoid(x).value());
}

TEST_CASE("normalize: constant input maps to zero via eps") {
  T x = T::filled({3, 2, 2}, 4.2);
  T gain = T::filled({3}, 1.0);
  T bias = T::zeros({3});
  for (NormKind kind : {NormKind::layer, NormKind::batch}) {
    T y = normalize(x, kind, gain, bias);
    for (double v : y.value()) CHECK(v == 0.0);
  }
}

TEST_CASE("normalize: two-element group lands within 1e-4 of +-1") {
  T x = T::from({1, 2}, {1.0, 3.0});  // one token row, layer norm over its two features
  T gain = T::filled({2}, 1.0);
  T bias = T::zeros({2});
  T y = normalize(x, NormKind::layer, gain, bias);
  CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("normalize: zero gain and bias 7 yields all sevens") {
  Rng rng(8);
  T x = rand_tensor({3, 2, 2}, rng);
  T gain = T::zeros({3});
  T bias = T::filled({3}, 7.0);
  for (NormKind kind : {NormKind::layer, NormKind::batch}) {
    T y = normalize(x, kind, gain, bias);
    for (double v : y.value()) CHECK(v == 7.0);
  }
}

TEST_CASE("normalize group statistics are unit before affine") {
  Rng rng(9);
  T x = rand_tensor({8, 3, 3}, rng);
  T gain = T::filled({8}, 1.0);
  T bias = T::zeros({8});
  T y = normalize(x, NormKind::batch, gain, bias, 1e-10);
  for (int c = 0; c < 8; ++c) {
    double m = 0, v = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m += y.at(c, i, j);
    m /= 9;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) v += (y.at(c, i, j) - m) * (y.at(c, i, j) - m);
    v /= 9;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(normalize(x, NormKind::batch, T::filled({7}, 1.0), bias), DimensionError);
  CHECK_THROWS_AS(normalize(x, NormKind::batch, gain, bias, 0.0), ArgumentError);
}

TEST_CASE("depth_to_space follows the declared index convention") {
  T x = T::from({4, 1, 1}, {1, 2, 3, 4});  // a,b,c,d
  T y = depth_to_space(x, 2);
  CHECK(y.shape() == Shape{1, 2, 2});
  CHECK(y.value() == std::vector<double>{1, 2, 3, 4});  // [[a,b],[c,d]]
}

TEST_CASE("depth_to_space is a bijection, bitwise") {
  Rng rng(10);
  T x = rand_tensor({8, 2, 3}, rng);
  CHECK(space_to_depth(depth_to_space(x, 2), 2).value() == x.value());
  CHECK_THROWS_AS(depth_to_space(rand_tensor({6, 2, 2}, rng), 2), DimensionError);
}

TEST_CASE("depth_to_space matches the index-formula oracle exactly") {
  Rng rng(11);
  T x = rand_tensor({8, 2, 3}, rng);
  T y = depth_to_space(x, 2);
  REQUIRE(y.shape() == Shape{2, 4, 6});
  for (int c = 0; c < 2; ++c)
    for (int yy = 0; yy < 2; ++yy)
      for (int xx = 0; xx < 3; ++xx)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            CHECK(y.at(c, yy * 2 + dy, xx * 2 + dx) == x.at(c * 4 + dy * 2 + dx, yy, xx));
}

TEST_CASE("bilinear resize maps constants to constants exactly") {
  T x = T::filled({2, 3, 5}, 3.0);
  T y = bilinear_resize(x, 7, 11);
  for (double v : y.value()) CHECK(v == 3.0);
}

TEST_CASE("bilinear resize at identity size is bitwise identity") {
  Rng rng(12);
  T x = rand_tensor({3, 4, 5}, rng);
  CHECK(bilinear_resize(x, 4, 5).value() == x.value());
}

TEST_CASE("bilinear resize matches the hand-evaluated sampling formula") {
  T x = T::from({1, 1, 2}, {0.0, 1.0});
  T y = bilinear_resize(x, 1, 4);
  CHECK(y.value() == std::vector<double>{0.0, 0.25, 0.75, 1.0});
  CHECK_THROWS_AS(bilinear_resize(x, 0, 2), DimensionError);
}

TEST_CASE("avg_pool2d of constants and divisibility") {
  T x = T::filled({2, 4, 4}, 1.5);
  T y = avg_pool2d(x, 2);
  CHECK(y.shape() == Shape{2, 2, 2});
  for (double v : y.value()) CHECK(v == 1.5);
  CHECK_THROWS_AS(avg_pool2d(x, 3), DimensionError);
}

TEST_CASE("extract_patches layout") {
  Rng rng(13);
  T x = rand_tensor({3, 4, 4}, rng);
  T p = extract_patches(x, 2);
  CHECK(p.shape() == Shape{4, 12});
  // token 3 is (ty=1, tx=1); element (c=2, dy=1, dx=0)
  CHECK(p.at(3, (2 * 2 + 1) * 2 + 0) == x.at(2, 3, 2));
}

TEST_CASE("linearity of the linear ops at 64-bit") {
  Rng rng(14);
  const double alpha = 1.7, beta = -0.6;
  T x = rand_tensor({4, 4, 4}, rng);
  T y = rand_tensor({4, 4, 4}, rng);
  std::vector<double> comb(x.size());
  for (std::size_t i = 0; i < comb.size(); ++i)
    comb[i] = alpha * x.value()[i] + beta * y.value()[i];
  T xy = T::from({4, 4, 4}, comb);

  T w = rand_tensor({3, 4, 3, 3}, rng);
  T b = T::zeros({3});
  auto check_linear = [&](auto&& f) {
    T fx = f(x);
    T fy = f(y);
    T fxy = f(xy);
    for (std::size_t i = 0; i < fxy.size(); ++i)
      CHECK(fxy.value()[i] ==
            doctest::Approx(alpha * fx.value()[i] + beta * fy.value()[i]).epsilon(1e-10));
  };
  check_linear([&](const T& t) { return conv2d(t, w, b, 1, 1); });
  check_linear([&](const T& t) { return depth_to_space(t, 2); });
  check_linear([&](const T& t) { return bilinear_resize(t, 7, 5); });
  check_linear([&](const T& t) { return avg_pool2d(t, 2); });
}

TEST_CASE("gradchecks of the feature-map ops") {
  Rng rng(15);
  using OpFn = std::function<T(std::vector<T>&)>;
  auto check = [](const OpFn& fn, std::vector<T> inputs) {
    return gradcheck<double>(fn, std::move(inputs)).max_rel_err;
  };
  CHECK(check([](auto& in) { return scalarize(conv2d(in[0], in[1], in[2], 1, 1)); },
              {rand_tensor({2, 5, 5}, rng), rand_tensor({3, 2, 3, 3}, rng),
               rand_tensor({3}, rng)}) < 1e-4);
  CHECK(check([](auto& in) { return scalarize(depthwise_conv2d(in[0], in[1], in[2], 1)); },
              {rand_tensor({3, 4, 4}, rng), rand_tensor({3, 3, 3}, rng),
               rand_tensor({3}, rng)}) < 1e-4);
  CHECK(check([](auto& in) { return scalarize(normalize(in[0], NormKind::layer, in[1], in[2])); },
              {rand_tensor({4, 3, 3}, rng), rand_tensor({4}, rng, 0.5, 1.5),
               rand_tensor({4}, rng)}) < 1e-4);
  CHECK(check([](auto& in) { return scalarize(bilinear_resize(in[0], 5, 7)); },
              {rand_tensor({2, 3, 4}, rng)}) < 1e-4);
  CHECK(check([](auto& in) { return scalarize(extract_patches(in[0], 2)); },
              {rand_tensor({3, 4, 4}, rng)}) < 1e-4);
  CHECK(check([](auto& in) { return scalarize(avg_pool2d(in[0], 2)); },
              {rand_tensor({2, 4, 4}, rng)}) < 1e-4);
}
