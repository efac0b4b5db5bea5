#include "doctest.h"
#include "helpers.hpp"
#include "lpv/backbone.hpp"

using namespace lpv;
using lpv_test::random_tensor;

TEST_CASE("token grid examples") {
  BackboneConfig paper;
  paper.img_h = 32;
  paper.img_w = 100;
  CHECK(paper.grid_h() == 8);
  CHECK(paper.grid_w() == 25);
  CHECK(paper.tokens() == 200);

  BackboneConfig desk;
  Rng rng(1);
  Backbone net(desk, rng);
  auto tokens = net.forward(Tensor::zeros({2, 16, 48, 1}));
  CHECK(tokens.shape() == Shape{2, 48, 32});
}

TEST_CASE("token count is HW/16 for legal configs") {
  Rng rng(2);
  for (int trial = 0; trial < 8; ++trial) {
    BackboneConfig cfg;
    cfg.img_h = 16 * (1 + rng.below(2));
    cfg.img_w = 16 * (1 + rng.below(3));
    cfg.e = 4 * (1 + rng.below(3));
    cfg.heads = 2;
    cfg.n_mix_blocks = rng.below(2);
    Backbone net(cfg, rng);
    auto out = net.forward(random_tensor({1, cfg.img_h, cfg.img_w, 1}, rng, 0, 1));
    REQUIRE(out.shape() == Shape{1, cfg.img_h * cfg.img_w / 16, cfg.e});
  }
}

TEST_CASE("illegal backbone configs are rejected") {
  Rng rng(3);
  BackboneConfig cfg;
  cfg.img_w = 40;
  CHECK_THROWS_AS(Backbone(cfg, rng), ConfigError);
  cfg = {};
  cfg.e = 30;
  CHECK_THROWS_AS(Backbone(cfg, rng), ConfigError);
  cfg = {};
  Backbone ok(cfg, rng);
  CHECK_THROWS_AS(ok.forward(Tensor::zeros({1, 16, 32, 1})), ShapeError);
}

TEST_CASE("stem is translation-covariant under periodic padding") {
  Rng rng(4);
  BackboneConfig cfg;
  cfg.img_h = 16;
  cfg.img_w = 32;
  cfg.e = 8;
  cfg.heads = 2;
  cfg.periodic_padding = true;
  Backbone net(cfg, rng);
  auto img = random_tensor({1, 16, 32, 1}, rng, 0, 1);
  std::vector<Real> shifted(16 * 32);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 32; ++x) shifted[y * 32 + (x + 4) % 32] = img.data()[y * 32 + x];
  auto a = net.stem(img);
  auto b = net.stem(Tensor::from_data({1, 16, 32, 1}, shifted));
  REQUIRE(a.shape() == Shape{1, 4, 8, 8});
  for (std::size_t gy = 0; gy < 4; ++gy)
    for (std::size_t gx = 0; gx < 8; ++gx)
      for (std::size_t c = 0; c < 8; ++c)
        REQUIRE(b.at({0, gy, (gx + 1) % 8, c}) == doctest::Approx(a.at({0, gy, gx, c})).epsilon(1e-12));
}

TEST_CASE("backbone gradient at 16x16, E=8") {
  Rng rng(5);
  BackboneConfig cfg;
  cfg.img_h = 16;
  cfg.img_w = 16;
  cfg.e = 8;
  cfg.heads = 2;
  cfg.n_mix_blocks = 1;
  Backbone net(cfg, rng);
  auto img = random_tensor({1, 16, 16, 1}, rng, 0, 1);
  auto w = random_tensor({1, 16, 8}, rng);
  ParamList list;
  net.collect("backbone", list);
  CHECK(finite_diff_check([&] { return sum(mul(net.forward(img), w)); }, tensors_of(list)) < 1e-4);
}
