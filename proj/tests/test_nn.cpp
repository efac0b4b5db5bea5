#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "lpv/nn.hpp"

using namespace lpv;
using lpv_test::random_tensor;

namespace {

std::vector<Tensor> params_of(const auto& module) {
  ParamList list;
  module.collect("m", list);
  return tensors_of(list);
}

}  // namespace

TEST_CASE("sinusoidal encoding examples") {
  auto pe = sinusoidal_pe(6, 8);
  CHECK(pe.shape() == Shape{6, 8});
  for (std::size_t c = 0; c < 8; ++c) CHECK(pe.at({0, c}) == (c % 2 ? 1 : 0));
  CHECK(pe.at({1, 0}) == doctest::Approx(0.8414709848).epsilon(1e-10));
  CHECK(pe.at({3, 5}) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 4.0 / 8))).epsilon(1e-12));
  CHECK_THROWS_AS(sinusoidal_pe(4, 7), ConfigError);

  auto wide = sinusoidal_pe(64, 16);
  for (std::size_t p = 0; p < 64; ++p) {
    for (std::size_t q = p + 1; q < 64; ++q) {
      bool differ = false;
      for (std::size_t c = 0; c < 16; ++c) differ |= wide.at({p, c}) != wide.at({q, c});
      REQUIRE(differ);
    }
  }
  CHECK_THROWS_AS(sinusoidal_pe_2d(2, 3, 6), ConfigError);
}

TEST_CASE("layer norm of a constant row is the shift") {
  auto x = Tensor::full({2, 4}, 3.5);
  auto gamma = Tensor::from_data({4}, {2, -1, 0.5, 3});
  auto beta = Tensor::from_data({4}, {0.1, 0.2, 0.3, 0.4});
  auto y = layer_norm(x, gamma, beta);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(y.at({r, c}) == doctest::Approx(beta.data()[c]).epsilon(1e-12));
}

TEST_CASE("layer norm gradient") {
  Rng rng(1);
  auto x = random_tensor({3, 6}, rng, -2, 2, true);
  auto gamma = random_tensor({6}, rng, 0.5, 1.5, true);
  auto beta = random_tensor({6}, rng, -1, 1, true);
  auto w = random_tensor({3, 6}, rng);
  CHECK(finite_diff_check([&] { return sum(mul(layer_norm(x, gamma, beta), w)); }, {x, gamma, beta}) < 1e-4);
}

TEST_CASE("1x1 convolution with identity kernel is the identity") {
  Rng rng(2);
  auto x = random_tensor({2, 3, 5, 4}, rng);
  std::vector<Real> eye(16, 0);
  for (std::size_t c = 0; c < 4; ++c) eye[c * 4 + c] = 1;
  auto y = conv2d(x, Tensor::from_data({4, 4}, eye), Tensor(), 1, 1);
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("3x3 convolution matches a direct loop") {
  Rng rng(3);
  const std::size_t h = 5, w = 6, cin = 2, cout = 3;
  auto x = random_tensor({1, h, w, cin}, rng);
  auto weight = random_tensor({9 * cin, cout}, rng);
  auto bias = random_tensor({cout}, rng);
  for (auto padding : {Padding::kZero, Padding::kCircular}) {
    for (std::size_t stride : {1, 2}) {
      auto y = conv2d(x, weight, bias, 3, stride, padding);
      const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
      REQUIRE(y.shape() == Shape{1, oh, ow, cout});
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          for (std::size_t co = 0; co < cout; ++co) {
            double s = bias.data()[co];
            for (std::size_t ky = 0; ky < 3; ++ky) {
              for (std::size_t kx = 0; kx < 3; ++kx) {
                long iy = static_cast<long>(oy * stride + ky) - 1, ix = static_cast<long>(ox * stride + kx) - 1;
                if (padding == Padding::kCircular) {
                  iy = (iy + static_cast<long>(h)) % static_cast<long>(h);
                  ix = (ix + static_cast<long>(w)) % static_cast<long>(w);
                } else if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) {
                  continue;
                }
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  s += x.at({0, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ci}) *
                       weight.at({(ky * 3 + kx) * cin + ci, co});
                }
              }
            }
            REQUIRE(y.at({0, oy, ox, co}) == doctest::Approx(s).epsilon(1e-12));
          }
        }
      }
    }
  }
}

TEST_CASE("convolution, upsampling and linear gradients") {
  Rng rng(4);
  auto x = random_tensor({2, 4, 6, 3}, rng, -1, 1, true);
  Conv2d conv(3, 2, 3, 2, rng);
  auto w = random_tensor({2, 2, 3, 2}, rng);
  auto ps = params_of(conv);
  ps.push_back(x);
  CHECK(finite_diff_check([&] { return sum(mul(conv.forward(x), w)); }, ps) < 1e-4);

  auto wu = random_tensor({2, 8, 12, 3}, rng);
  CHECK(finite_diff_check([&] { return sum(mul(upsample2x(x), wu)); }, {x}) < 1e-4);

  Linear lin(3, 5, rng);
  auto wl = random_tensor({2, 4, 6, 5}, rng);
  auto pl = params_of(lin);
  pl.push_back(x);
  CHECK(finite_diff_check([&] { return sum(mul(lin.forward(x), wl)); }, pl) < 1e-4);
}

TEST_CASE("multi-head attention examples") {
  Rng rng(5);
  MultiHeadAttention mha(8, 2, rng);
  auto x = random_tensor({1, 3, 8}, rng);

  auto plain = mha.forward(x, x, x);
  auto zero = mha.forward(x, x, x, Tensor::zeros({1, 3, 3}));
  for (std::size_t i = 0; i < plain.out.numel(); ++i) CHECK(plain.out.data()[i] == zero.out.data()[i]);

  std::vector<Real> m(9, 0);
  for (std::size_t q = 0; q < 3; ++q) m[q * 3 + 1] = kMaskedValue;
  auto masked = mha.forward(x, x, x, Tensor::from_data({1, 3, 3}, m));
  CHECK(masked.attn.shape() == Shape{1, 2, 3, 3});
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t q = 0; q < 3; ++q) CHECK(masked.attn.at({0, h, q, 1}) == 0);

  CHECK_THROWS_AS(MultiHeadAttention(10, 4, rng), ConfigError);
}

TEST_CASE("multi-head attention gradient on three tokens") {
  Rng rng(6);
  MultiHeadAttention mha(8, 2, rng);
  auto x = random_tensor({1, 3, 8}, rng, -1, 1, true);
  auto w = random_tensor({1, 3, 8}, rng);
  auto ps = params_of(mha);
  ps.push_back(x);
  CHECK(finite_diff_check([&] { return sum(mul(mha.forward(x, x, x).out, w)); }, ps) < 1e-4);
}

TEST_CASE("attention rows are normalized") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    MultiHeadAttention mha(8, 4, rng);
    const std::size_t t = 2 + rng.below(8);
    auto x = random_tensor({2, t, 8}, rng, -3, 3);
    auto attn = mha.forward(x, x, x).attn;
    for (std::size_t r = 0; r < 2 * 4 * t; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < t; ++c) total += attn.data()[r * t + c];
      REQUIRE(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("encoder block is permutation-equivariant without a mask") {
  Rng rng(8);
  EncoderBlock block(8, 2, rng);
  const std::size_t t = 6;
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({1, t, 8}, rng);
    std::vector<std::size_t> perm(t);
    for (std::size_t i = 0; i < t; ++i) perm[i] = i;
    for (std::size_t i = t - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<Real> px(t * 8);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < 8; ++c) px[i * 8 + c] = x.data()[perm[i] * 8 + c];
    auto y = block.forward(x).out;
    auto py = block.forward(Tensor::from_data({1, t, 8}, px)).out;
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t c = 0; c < 8; ++c) REQUIRE(py.at({0, i, c}) == doctest::Approx(y.at({0, perm[i], c})).epsilon(1e-10));
  }
}

TEST_CASE("encoder block gradient") {
  Rng rng(9);
  EncoderBlock block(8, 2, rng);
  auto x = random_tensor({1, 4, 8}, rng, -1, 1, true);
  auto w = random_tensor({1, 4, 8}, rng);
  auto ps = params_of(block);
  ps.push_back(x);
  CHECK(finite_diff_check([&] { return sum(mul(block.forward(x).out, w)); }, ps) < 1e-4);
}

TEST_CASE("mini U-Net shape examples") {
  Rng rng(10);
  MiniUNet net32(32, rng);
  CHECK(net32.forward(Tensor::zeros({1, 8, 24, 32})).shape() == Shape{1, 8, 24, 32});
  MiniUNet net16(16, rng);
  CHECK(net16.forward(Tensor::zeros({1, 4, 12, 16})).shape() == Shape{1, 4, 12, 16});
  CHECK_THROWS_AS(net16.forward(Tensor::zeros({1, 6, 12, 16})), ConfigError);
  CHECK_THROWS_AS(net16.forward(Tensor::zeros({1, 4, 2, 16})), ConfigError);
}

TEST_CASE("mini U-Net preserves shape for random legal inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t e = 2 * (1 + rng.below(6));
    const std::size_t h = 4 * (1 + rng.below(3)), w = 4 * (1 + rng.below(4)), b = 1 + rng.below(2);
    MiniUNet net(e, rng);
    REQUIRE(net.forward(random_tensor({b, h, w, e}, rng)).shape() == Shape{b, h, w, e});
  }
}

TEST_CASE("mini U-Net gradient at 4x4x4") {
  Rng rng(12);
  MiniUNet net(4, rng);
  auto x = random_tensor({1, 4, 4, 4}, rng, -1, 1, true);
  auto w = random_tensor({1, 4, 4, 4}, rng);
  auto ps = params_of(net);
  ps.push_back(x);
  CHECK(finite_diff_check([&] { return sum(mul(net.forward(x), w)); }, ps) < 1e-4);
}

TEST_CASE("parameter names are unique") {
  Rng rng(13);
  EncoderBlock block(8, 2, rng);
  MiniUNet net(8, rng);
  ParamList list;
  block.collect("block", list);
  net.collect("unet", list);
  std::set<std::string> names;
  for (const auto& p : list) CHECK(names.insert(p.name).second);
}
