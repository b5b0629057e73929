#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "stseg/gradcheck.hpp"
#include "stseg/ops.hpp"

using namespace stseg;

namespace {

std::vector<double> randvec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("conv2d matches the naive loop oracle across randomized configs") {
  Rng rng(13);
  int tested = 0;
  struct Cfg {
    std::int64_t n, c, h, w, o, kh, kw;
    Pair stride, dil;
    Quad pad;
  };
  std::vector<Cfg> cfgs = {
      {2, 3, 5, 5, 4, 3, 3, {1, 1}, {1, 1}, {1, 1, 1, 1}},
      {1, 1, 7, 7, 1, 3, 3, {1, 1}, {2, 2}, {0, 0, 0, 0}},
      {1, 2, 8, 6, 3, 2, 2, {2, 2}, {1, 1}, {0, 1, 0, 1}},
      {2, 4, 6, 6, 2, 3, 3, {2, 2}, {1, 1}, {1, 1, 1, 1}},
      {1, 3, 9, 7, 5, 3, 2, {1, 2}, {2, 1}, {2, 0, 1, 1}},
      {3, 2, 4, 4, 2, 1, 1, {1, 1}, {1, 1}, {0, 0, 0, 0}},
  };
  // randomized configurations on top of the hand-picked ones
  for (int i = 0; i < 18; ++i) {
    Cfg c;
    c.n = rng.range(1, 2);
    c.c = rng.range(1, 4);
    c.h = rng.range(4, 9);
    c.w = rng.range(4, 9);
    c.o = rng.range(1, 4);
    c.kh = rng.range(1, 3);
    c.kw = rng.range(1, 3);
    c.stride = {static_cast<int>(rng.range(1, 2)), static_cast<int>(rng.range(1, 2))};
    c.dil = {static_cast<int>(rng.range(1, 2)), static_cast<int>(rng.range(1, 2))};
    c.pad = {static_cast<int>(rng.range(0, 2)), static_cast<int>(rng.range(0, 2)),
             static_cast<int>(rng.range(0, 2)), static_cast<int>(rng.range(0, 2))};
    if (c.h + c.pad[0] + c.pad[1] < c.dil[0] * (c.kh - 1) + 1) continue;
    if (c.w + c.pad[2] + c.pad[3] < c.dil[1] * (c.kw - 1) + 1) continue;
    cfgs.push_back(c);
  }

  for (const auto& c : cfgs) {
    auto xv = randvec(static_cast<std::size_t>(c.n * c.c * c.h * c.w), rng);
    auto wv = randvec(static_cast<std::size_t>(c.o * c.c * c.kh * c.kw), rng);
    auto bv = randvec(static_cast<std::size_t>(c.o), rng);
    auto x = Tensor<double>::from_data({c.n, c.c, c.h, c.w}, xv);
    auto w = Tensor<double>::from_data({c.o, c.c, c.kh, c.kw}, wv);
    auto b = Tensor<double>::from_data({c.o}, bv);
    auto y = conv2d(x, w, b, c.stride, c.pad, c.dil);
    std::int64_t ho, wo;
    auto ref = oracles::naive_conv2d(xv, c.n, c.c, c.h, c.w, wv, c.o, c.kh, c.kw, bv, c.stride,
                                     c.pad, c.dil, ho, wo);
    REQUIRE(y.shape() == std::vector<std::int64_t>{c.n, c.o, ho, wo});
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(y.data()[i] - ref[i]) < 1e-10);
    ++tested;
  }
  CHECK(tested >= 20);
}

TEST_CASE("conv2d dilation shape arithmetic: 7x7 k3 d2 -> 3x3") {
  auto x = Tensor<double>::zeros({1, 1, 7, 7});
  auto w = Tensor<double>::zeros({1, 1, 3, 3});
  auto y = conv2d(x, w, Tensor<double>{}, {1, 1}, {0, 0, 0, 0}, {2, 2});
  CHECK(y.shape() == std::vector<std::int64_t>{1, 1, 3, 3});
}

TEST_CASE("conv2d rejects channel mismatch with a descriptive error") {
  auto x = Tensor<double>::zeros({1, 3, 4, 4});
  auto w = Tensor<double>::zeros({2, 4, 3, 3});
  CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor<double>{}),
                       doctest::Contains("channels"), ShapeError);
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
  auto x = Tensor<double>::zeros({1, 1, 2, 2});
  auto w = Tensor<double>::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(x, w, Tensor<double>{}), ShapeError);
}

TEST_CASE("conv_transpose2d: disjoint placement of an all-ones kernel") {
  auto x = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  auto w = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  auto y = conv_transpose2d(x, w, Tensor<double>{}, {2, 2});
  CHECK(y.shape() == std::vector<std::int64_t>{1, 1, 4, 4});
  for (double v : y.data()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("conv_transpose2d matches the scatter oracle") {
  Rng rng(17);
  for (int rep = 0; rep < 8; ++rep) {
    const std::int64_t n = rng.range(1, 2), c = rng.range(1, 3), h = rng.range(2, 5),
                       w = rng.range(2, 5), o = rng.range(1, 3), k = rng.range(1, 3);
    const Pair stride = {static_cast<int>(rng.range(1, 3)), static_cast<int>(rng.range(1, 3))};
    auto xv = randvec(static_cast<std::size_t>(n * c * h * w), rng);
    auto wv = randvec(static_cast<std::size_t>(c * o * k * k), rng);
    auto bv = randvec(static_cast<std::size_t>(o), rng);
    auto y = conv_transpose2d(Tensor<double>::from_data({n, c, h, w}, xv),
                              Tensor<double>::from_data({c, o, k, k}, wv),
                              Tensor<double>::from_data({o}, bv), stride);
    std::int64_t ho, wo;
    auto ref = oracles::naive_conv_transpose2d(xv, n, c, h, w, wv, o, k, k, bv, stride, ho, wo);
    REQUIRE(y.shape() == std::vector<std::int64_t>{n, o, ho, wo});
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(y.data()[i] - ref[i]) < 1e-10);
  }
}

TEST_CASE("adjoint identity <conv(x,w), y> == <x, conv_t(y,w)>") {
  Rng rng(19);
  for (int rep = 0; rep < 10; ++rep) {
    const std::int64_t c = rng.range(1, 3), o = rng.range(1, 3), k = rng.range(1, 3);
    const int s = static_cast<int>(rng.range(1, 2));
    // conv output extent must reconstruct exactly: (h - k) divisible by s
    const std::int64_t h = k + s * rng.range(1, 3), w = k + s * rng.range(1, 3);
    const std::int64_t ho = (h - k) / s + 1, wo = (w - k) / s + 1;
    if (ho < 1 || wo < 1) continue;
    auto xv = randvec(static_cast<std::size_t>(c * h * w), rng);
    auto wv = randvec(static_cast<std::size_t>(o * c * k * k), rng);
    auto yv = randvec(static_cast<std::size_t>(o * ho * wo), rng);

    auto x = Tensor<double>::from_data({1, c, h, w}, xv);
    auto wcv = Tensor<double>::from_data({o, c, k, k}, wv);
    auto y = Tensor<double>::from_data({1, o, ho, wo}, yv);
    auto cx = conv2d(x, wcv, Tensor<double>{}, {s, s});

    // same buffer reinterpreted as [C_in=o, C_out=c, k, k]
    auto wtv = Tensor<double>::from_data({o, c, k, k}, wv);
    auto ty = conv_transpose2d(y, wtv, Tensor<double>{}, {s, s});
    REQUIRE(ty.shape() == x.shape());

    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < cx.data().size(); ++i) lhs += cx.data()[i] * yv[i];
    for (std::size_t i = 0; i < xv.size(); ++i) rhs += xv[i] * ty.data()[i];
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("maxpool examples and oracle") {
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = maxpool2d(x);
  CHECK(y.item() == doctest::Approx(4.0));

  // tie-break: constant input routes all gradient to the first window element
  auto cx = Tensor<double>::full({1, 1, 2, 2}, 5.0);
  cx.set_requires_grad(true);
  auto cy = sum_all(maxpool2d(cx));
  backward(cy);
  CHECK(cx.grad()[0] == doctest::Approx(1.0));
  CHECK(cx.grad()[1] == doctest::Approx(0.0));
  CHECK(cx.grad()[2] == doctest::Approx(0.0));
  CHECK(cx.grad()[3] == doctest::Approx(0.0));

  CHECK_THROWS_AS(maxpool2d(Tensor<double>::zeros({1, 1, 3, 4})), ShapeError);

  Rng rng(23);
  auto rv = randvec(1 * 2 * 4 * 4, rng);
  auto rx = Tensor<double>::from_data({1, 2, 4, 4}, rv);
  auto ry = maxpool2d(rx);
  auto ref = oracles::naive_maxpool2d(rv, 2, 4, 4);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(ry.data()[i] == ref[i]);
}

TEST_CASE("batchnorm normalizes to mean 0, variance 1 in train mode") {
  Rng rng(29);
  const std::int64_t n = 2, c = 3, h = 4, w = 4;
  auto x = Tensor<double>::from_data({n, c, h, w}, randvec(n * c * h * w, rng));
  auto gamma = Tensor<double>::full({c}, 1.0);
  auto beta = Tensor<double>::zeros({c});
  auto st = BatchNormState<double>::make(c);
  auto y = batchnorm2d(x, gamma, beta, st, true);
  for (std::int64_t ci = 0; ci < c; ++ci) {
    double mean = 0, var = 0;
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t p = 0; p < h * w; ++p)
        mean += y.data()[(ni * c + ci) * h * w + p];
    mean /= static_cast<double>(n * h * w);
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t p = 0; p < h * w; ++p) {
        const double d = y.data()[(ni * c + ci) * h * w + p] - mean;
        var += d * d;
      }
    var /= static_cast<double>(n * h * w);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm with gamma 0 collapses to beta") {
  auto x = Tensor<double>::from_data({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto gamma = Tensor<double>::zeros({2});
  auto beta = Tensor<double>::from_data({2}, {0.25, -0.5});
  auto st = BatchNormState<double>::make(2);
  auto y = batchnorm2d(x, gamma, beta, st, true);
  for (int p = 0; p < 4; ++p) {
    CHECK(y.data()[p] == doctest::Approx(0.25));
    CHECK(y.data()[4 + p] == doctest::Approx(-0.5));
  }
}

TEST_CASE("batchnorm rejects degenerate train batches") {
  auto x = Tensor<double>::zeros({1, 2, 1, 1});
  auto gamma = Tensor<double>::full({2}, 1.0);
  auto beta = Tensor<double>::zeros({2});
  auto st = BatchNormState<double>::make(2);
  CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, st, true), ShapeError);
  CHECK_NOTHROW(batchnorm2d(x, gamma, beta, st, false));
}

TEST_CASE("batchnorm gradient vs finite differences on 2x3x4x4") {
  Rng rng(31);
  auto x = Tensor<double>::from_data({2, 3, 4, 4}, randvec(2 * 3 * 4 * 4, rng));
  auto gamma = Tensor<double>::from_data({3}, {1.1, 0.9, 1.3});
  auto beta = Tensor<double>::from_data({3}, {0.1, -0.2, 0.05});
  auto proj = Tensor<double>::from_data({2, 3, 4, 4}, randvec(2 * 3 * 4 * 4, rng));
  auto st = BatchNormState<double>::make(3);
  auto res = grad_check<double>(
      [&] {
        return sum_all(mul(batchnorm2d(x, gamma, beta, st, true), proj));
      },
      {x, gamma, beta}, 1e-4);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("conv ops pass finite-difference gradient checks") {
  Rng rng(37);
  auto x = Tensor<double>::from_data({2, 2, 5, 4}, randvec(2 * 2 * 5 * 4, rng));
  auto w = Tensor<double>::from_data({3, 2, 3, 3}, randvec(3 * 2 * 3 * 3, rng));
  auto b = Tensor<double>::from_data({3}, randvec(3, rng));
  auto proj = Tensor<double>::from_data({2, 3, 3, 4}, randvec(2 * 3 * 3 * 4, rng));
  auto res = grad_check<double>(
      [&] {
        return sum_all(mul(conv2d(x, w, b, {2, 1}, {1, 1, 1, 1}, {1, 1}), proj));
      },
      {x, w, b}, 1e-4);
  CHECK(res.max_rel_err < 1e-6);

  auto xt = Tensor<double>::from_data({1, 2, 3, 3}, randvec(1 * 2 * 3 * 3, rng));
  auto wt = Tensor<double>::from_data({2, 3, 2, 2}, randvec(2 * 3 * 2 * 2, rng));
  auto bt = Tensor<double>::from_data({3}, randvec(3, rng));
  auto projt = Tensor<double>::from_data({1, 3, 6, 6}, randvec(1 * 3 * 6 * 6, rng));
  auto rest = grad_check<double>(
      [&] {
        return sum_all(mul(conv_transpose2d(xt, wt, bt, {2, 2}), projt));
      },
      {xt, wt, bt}, 1e-4);
  CHECK(rest.max_rel_err < 1e-6);

  auto xp = Tensor<double>::from_data({1, 2, 4, 4}, randvec(1 * 2 * 4 * 4, rng));
  auto projp = Tensor<double>::from_data({1, 2, 2, 2}, randvec(1 * 2 * 2 * 2, rng));
  auto resp = grad_check<double>(
      [&] { return sum_all(mul(maxpool2d(xp), projp)); }, {xp}, 1e-5);
  CHECK(resp.max_rel_err < 1e-4);
}
