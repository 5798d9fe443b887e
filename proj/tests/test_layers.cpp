#include <catch2/catch_amalgamated.hpp>

#include "fd_check.hpp"
#include "lmdet/layers.hpp"

using namespace lmdet;

namespace {

// Scalar readout gradient check of a conv layer wrt input, weight, and bias.
double conv_max_rel_err(Conv2d& conv, Tensor4 x, SeededRng& rng) {
  Tensor4 y = conv.forward(x);
  const Tensor4 w = randn_init(y.n(), y.c(), y.h(), y.w(), rng, 1.0);
  conv.zero_grad();
  const Tensor4 gx = conv.backward(w);

  const auto f = [&]() { return fd::weighted_sum(conv.forward(x), w); };
  double worst = 0.0;
  auto idx = fd::pick_indices(x.size(), 40, rng);
  worst = std::max(worst, fd::max_rel_err(f, x.data(), gx.data(), idx));
  idx = fd::pick_indices(conv.weight().size(), 40, rng);
  worst = std::max(worst, fd::max_rel_err(f, conv.weight().data(),
                                          conv.grad_weight().data(), idx));
  idx = fd::pick_indices(conv.bias().size(), 8, rng);
  worst = std::max(worst, fd::max_rel_err(f, conv.bias().data(), conv.grad_bias().data(), idx));
  return worst;
}

}  // namespace

TEST_CASE("conv2d identity and plateau examples") {
  // 1x1 identity kernel, zero bias
  Conv2d id(3, 3, 1, 1, 1, 0);
  for (int c = 0; c < 3; ++c) id.weight().at(c, c, 0, 0) = 1.0;
  SeededRng rng(1);
  const Tensor4 x = randn_init(2, 3, 5, 6, rng, 1.0);
  const Tensor4 y = id.forward(x);
  CHECK(std::equal(y.data(), y.data() + y.size(), x.data()));

  // all-ones 3x3 kernel on a one-hot image: 3x3 plateau of ones
  Conv2d ones(1, 1, 3, 3, 1, 1);
  ones.weight().fill(1.0);
  Tensor4 hot(1, 1, 7, 7);
  hot.at(0, 0, 3, 3) = 1.0;
  const Tensor4 p = ones.forward(hot);
  for (int yy = 0; yy < 7; ++yy)
    for (int xx = 0; xx < 7; ++xx) {
      const bool inside = std::abs(yy - 3) <= 1 && std::abs(xx - 3) <= 1;
      CHECK(p.at(0, 0, yy, xx) == (inside ? 1.0 : 0.0));
    }
}

TEST_CASE("conv2d output sizing and error paths") {
  Conv2d c(2, 4, 3, 3, 2, 1);
  SeededRng rng(2);
  c.init(rng);
  const Tensor4 y = c.forward(randn_init(1, 2, 9, 9, rng, 1.0));
  CHECK(y.h() == 5);  // floor((9 + 2 - 3)/2) + 1
  CHECK(y.w() == 5);

  Tensor4 wrong_c(1, 3, 9, 9);
  CHECK_THROWS_AS(c.forward(wrong_c), Error);
  CHECK_THROWS_AS(Conv2d(3, 4, 3, 3, 1, 1, 2), Error);  // channels not divisible
  Conv2d tiny(1, 1, 5, 5, 1, 0);
  Tensor4 small(1, 1, 3, 3);
  CHECK_THROWS_AS(tiny.forward(small), Error);  // zero-size output

  Conv2d fresh(1, 1, 3, 3, 1, 1);
  Tensor4 g(1, 1, 3, 3);
  CHECK_THROWS_AS(fresh.backward(g), Error);  // backward before forward
}

TEST_CASE("depthwise conv respects group isolation") {
  const int C = 4;
  Conv2d dw(C, C, 3, 3, 1, 1, C);
  SeededRng rng(3);
  dw.init(rng);
  Tensor4 x = randn_init(1, C, 6, 6, rng, 1.0);
  const Tensor4 y0 = dw.forward(x);
  // perturbing channel 0 leaves channels 1..C-1 unchanged
  for (int i = 0; i < 6 * 6; ++i) x.plane(0, 0)[i] += 0.37;
  const Tensor4 y1 = dw.forward(x);
  bool ch0_changed = false;
  for (int i = 0; i < 6 * 6; ++i)
    if (y0.plane(0, 0)[i] != y1.plane(0, 0)[i]) ch0_changed = true;
  CHECK(ch0_changed);
  for (int c = 1; c < C; ++c)
    for (int i = 0; i < 6 * 6; ++i) REQUIRE(y0.plane(0, c)[i] == y1.plane(0, c)[i]);
}

TEST_CASE("conv2d gradient checks across layouts") {
  SeededRng rng(4);
  struct Case {
    int in_c, out_c, k, stride, pad, groups, h, w, n;
  };
  const Case cases[] = {
      {3, 5, 3, 1, 1, 1, 8, 7, 2},   // plain 3x3
      {4, 6, 3, 2, 1, 2, 9, 6, 1},   // strided, grouped
      {5, 5, 3, 1, 1, 5, 6, 6, 2},   // depthwise
      {6, 4, 1, 1, 0, 1, 5, 5, 2},   // pointwise
      {3, 12, 5, 1, 2, 3, 7, 7, 1},  // per-keypoint 1 -> s^2 style
  };
  for (const auto& c : cases) {
    Conv2d conv(c.in_c, c.out_c, c.k, c.k, c.stride, c.pad, c.groups);
    conv.init(rng);
    Tensor4 x = randn_init(c.n, c.in_c, c.h, c.w, rng, 1.0);
    const double err = conv_max_rel_err(conv, x, rng);
    INFO("case k=" << c.k << " groups=" << c.groups << " stride=" << c.stride);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("conv2d backward is linear and zero on zero grad") {
  SeededRng rng(5);
  Conv2d conv(3, 4, 3, 3, 1, 1);
  conv.init(rng);
  Tensor4 x = randn_init(1, 3, 6, 6, rng, 1.0);
  Tensor4 y = conv.forward(x);

  Tensor4 zero(y.n(), y.c(), y.h(), y.w());
  conv.zero_grad();
  const Tensor4 gx0 = conv.backward(zero);
  for (size_t i = 0; i < gx0.size(); ++i) REQUIRE(gx0.data()[i] == 0.0);
  for (size_t i = 0; i < conv.grad_weight().size(); ++i)
    REQUIRE(conv.grad_weight().data()[i] == 0.0);

  const Tensor4 g = randn_init(y.n(), y.c(), y.h(), y.w(), rng, 1.0);
  Tensor4 g2(g.n(), g.c(), g.h(), g.w());
  for (size_t i = 0; i < g.size(); ++i) g2.data()[i] = 2.0 * g.data()[i];
  conv.forward(x);
  conv.zero_grad();
  const Tensor4 gx1 = conv.backward(g);
  conv.forward(x);
  conv.zero_grad();
  const Tensor4 gx2 = conv.backward(g2);
  for (size_t i = 0; i < gx1.size(); ++i)
    REQUIRE(gx2.data()[i] == Catch::Approx(2.0 * gx1.data()[i]).margin(1e-12));
}

TEST_CASE("batchnorm train-mode statistics and special cases") {
  SeededRng rng(6);
  BatchNorm2d bn(3);
  bn.set_train(true);

  // constant channel collapses to beta
  Tensor4 x(2, 3, 4, 4);
  x.fill(7.5);
  bn.beta()[1] = 0.25;
  const Tensor4 y = bn.forward(x);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 16; ++i) {
      CHECK(y.plane(n, 0)[i] == Catch::Approx(0.0).margin(1e-9));
      CHECK(y.plane(n, 1)[i] == Catch::Approx(0.25).margin(1e-9));
    }

  // large batch of N(3, 4): output approximately standardized pre-affine
  BatchNorm2d bn2(2);
  bn2.set_train(true);
  Tensor4 big(4, 2, 16, 16);
  for (size_t i = 0; i < big.size(); ++i) big.data()[i] = 3.0 + 2.0 * rng.normal();
  const Tensor4 z = bn2.forward(big);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    size_t count = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 16 * 16; ++i) {
        mean += z.plane(n, c)[i];
        ++count;
      }
    mean /= count;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 16 * 16; ++i) {
        const double d = z.plane(n, c)[i] - mean;
        var += d * d;
      }
    var /= count;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.05);
  }
}

TEST_CASE("batchnorm eval mode uses running statistics") {
  SeededRng rng(7);
  BatchNorm2d bn(2, 0.5);
  bn.set_train(true);
  for (int step = 0; step < 20; ++step)
    bn.forward(randn_init(4, 2, 8, 8, rng, 1.0));
  bn.set_train(false);
  // running stats near (0, 1), so eval output tracks the input
  const Tensor4 x = randn_init(2, 2, 8, 8, rng, 1.0);
  const Tensor4 y = bn.forward(x);
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(y.data()[i] == Catch::Approx(x.data()[i]).margin(0.35));
}

TEST_CASE("batchnorm gradient check, train and eval modes") {
  SeededRng rng(8);
  for (const bool train : {true, false}) {
    const int shapes[3][4] = {{2, 3, 4, 4}, {3, 2, 5, 6}, {1, 4, 7, 3}};
    for (const auto& s : shapes) {
      BatchNorm2d bn(s[1]);
      bn.set_train(true);
      bn.forward(randn_init(s[0], s[1], s[2], s[3], rng, 1.0));  // seed running stats
      bn.set_train(train);
      Tensor4 x = randn_init(s[0], s[1], s[2], s[3], rng, 1.0);
      Tensor4 y = bn.forward(x);
      const Tensor4 w = randn_init(y.n(), y.c(), y.h(), y.w(), rng, 1.0);
      bn.zero_grad();
      const Tensor4 gx = bn.backward(w);
      std::vector<ParamRef> refs;
      bn.collect_params("bn", refs);  // gamma, beta, running stats
      // in train mode each re-forward nudges running stats, but the readout
      // only depends on batch statistics, so the oracle is unaffected
      const auto f = [&]() { return fd::weighted_sum(bn.forward(x), w); };
      auto idx = fd::pick_indices(x.size(), 30, rng);
      CHECK(fd::max_rel_err(f, x.data(), gx.data(), idx) < 1e-4);
      idx = fd::pick_indices(refs[0].len, 8, rng);
      CHECK(fd::max_rel_err(f, refs[0].value, refs[0].grad, idx) < 1e-4);
      CHECK(fd::max_rel_err(f, refs[1].value, refs[1].grad, idx) < 1e-4);
    }
  }
}

TEST_CASE("gelu and relu values and gradients") {
  CHECK(gelu_scalar(0.0) == 0.0);
  CHECK(gelu_scalar(3.0) == Catch::Approx(2.996362607918227).epsilon(1e-12));
  CHECK(gelu_scalar(1.0) == Catch::Approx(0.84119199060827672).epsilon(1e-12));
  CHECK(gelu_scalar(-1.0) == Catch::Approx(-0.15880800939172328).epsilon(1e-12));

  Relu relu;
  Tensor4 neg(1, 1, 1, 1);
  neg.at(0, 0, 0, 0) = -1.0;
  CHECK(relu.forward(neg).at(0, 0, 0, 0) == 0.0);

  SeededRng rng(9);
  for (int rep = 0; rep < 3; ++rep) {
    Gelu gelu;
    Tensor4 x = randn_init(1, 2, 10, 5, rng, 2.0);
    Tensor4 y = gelu.forward(x);
    const Tensor4 w = randn_init(1, 2, 10, 5, rng, 1.0);
    const Tensor4 gx = gelu.backward(w);
    const auto f = [&]() { return fd::weighted_sum(gelu.forward(x), w); };
    const auto idx = fd::pick_indices(x.size(), 100, rng);
    CHECK(fd::max_rel_err(f, x.data(), gx.data(), idx) < 1e-4);
  }

  for (int rep = 0; rep < 3; ++rep) {
    Relu r;
    Tensor4 x = randn_init(1, 2, 8, 8, rng, 2.0);
    // keep samples away from the kink, where FD is meaningless
    for (size_t i = 0; i < x.size(); ++i)
      if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.5;
    Tensor4 y = r.forward(x);
    const Tensor4 w = randn_init(1, 2, 8, 8, rng, 1.0);
    const Tensor4 gx = r.backward(w);
    const auto f = [&]() { return fd::weighted_sum(r.forward(x), w); };
    const auto idx = fd::pick_indices(x.size(), 100, rng);
    CHECK(fd::max_rel_err(f, x.data(), gx.data(), idx) < 1e-4);
  }
}

TEST_CASE("pixel shuffle index map, conservation, inversion") {
  // (1,4,2,2), s=2: channel block [a,b,c,d] lands as [[a,b],[c,d]]
  Tensor4 x(1, 4, 2, 2);
  const double vals[4] = {1.0, 2.0, 3.0, 4.0};  // a b c d at pixel (0,0)
  for (int c = 0; c < 4; ++c) x.at(0, c, 0, 0) = vals[c];
  x.at(0, 0, 1, 1) = 9.0;
  const Tensor4 y = pixel_shuffle(x, 2);
  REQUIRE(y.c() == 1);
  REQUIRE(y.h() == 4);
  REQUIRE(y.w() == 4);
  CHECK(y.at(0, 0, 0, 0) == 1.0);
  CHECK(y.at(0, 0, 0, 1) == 2.0);
  CHECK(y.at(0, 0, 1, 0) == 3.0);
  CHECK(y.at(0, 0, 1, 1) == 4.0);
  CHECK(y.at(0, 0, 2, 2) == 9.0);

  SeededRng rng(10);
  const Tensor4 r = randn_init(2, 18, 3, 5, rng, 1.0);
  const Tensor4 s = pixel_shuffle(r, 3);
  double sum_in = 0.0, sum_out = 0.0;
  for (size_t i = 0; i < r.size(); ++i) sum_in += r.data()[i];
  for (size_t i = 0; i < s.size(); ++i) sum_out += s.data()[i];
  CHECK(sum_in == Catch::Approx(sum_out).epsilon(1e-12));
  const Tensor4 back = pixel_unshuffle(s, 3);
  CHECK(std::equal(back.data(), back.data() + back.size(), r.data()));

  CHECK_THROWS_AS(pixel_shuffle(Tensor4(1, 3, 2, 2), 2), Error);

  // layer backward is the inverse permutation
  PixelShuffle layer(2);
  Tensor4 in = randn_init(1, 8, 3, 3, rng, 1.0);
  layer.forward(in);
  const Tensor4 g = randn_init(1, 2, 6, 6, rng, 1.0);
  const Tensor4 gin = layer.backward(g);
  const Tensor4 expect = pixel_unshuffle(g, 2);
  CHECK(std::equal(gin.data(), gin.data() + gin.size(), expect.data()));
}

TEST_CASE("bilinear upsample values and gradient") {
  // constant image stays constant
  BilinearUp2 up;
  Tensor4 c(1, 1, 3, 3);
  c.fill(4.25);
  const Tensor4 yc = up.forward(c);
  for (size_t i = 0; i < yc.size(); ++i) REQUIRE(yc.data()[i] == Catch::Approx(4.25));

  // ramp [0,1] widened to 4 columns: 0, 1/3, 2/3, 1
  BilinearUp2 up2;
  Tensor4 ramp(1, 1, 1, 2);
  ramp.at(0, 0, 0, 1) = 1.0;
  const Tensor4 yr = up2.forward(ramp);
  REQUIRE(yr.w() == 4);
  CHECK(yr.at(0, 0, 0, 0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(yr.at(0, 0, 0, 1) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(yr.at(0, 0, 0, 2) == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(yr.at(0, 0, 0, 3) == Catch::Approx(1.0).epsilon(1e-12));

  // 1-pixel axis replicates
  BilinearUp2 up1;
  Tensor4 one(1, 1, 1, 1);
  one.at(0, 0, 0, 0) = 3.0;
  const Tensor4 y1 = up1.forward(one);
  for (size_t i = 0; i < y1.size(); ++i) CHECK(y1.data()[i] == 3.0);

  SeededRng rng(11);
  const int shapes[3][4] = {{1, 2, 4, 5}, {2, 1, 3, 3}, {1, 3, 6, 2}};
  for (const auto& s : shapes) {
    BilinearUp2 u;
    Tensor4 x = randn_init(s[0], s[1], s[2], s[3], rng, 1.0);
    Tensor4 y = u.forward(x);
    const Tensor4 w = randn_init(y.n(), y.c(), y.h(), y.w(), rng, 1.0);
    const Tensor4 gx = u.backward(w);
    const auto f = [&]() { return fd::weighted_sum(u.forward(x), w); };
    const auto idx = fd::pick_indices(x.size(), 40, rng);
    CHECK(fd::max_rel_err(f, x.data(), gx.data(), idx) < 1e-4);
  }
}
