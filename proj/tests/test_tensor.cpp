#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "stseg/gradcheck.hpp"
#include "stseg/io.hpp"
#include "stseg/ops.hpp"
#include "stseg/tensor.hpp"

using namespace stseg;

TEST_CASE("tensor invariants") {
  auto t = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor<double>::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::from_data({0, 2}, {}), ShapeError);
}

TEST_CASE("add/mul backward follows the product rule") {
  auto x = Tensor<double>::from_data({2}, {3.0, -1.0});
  auto y = Tensor<double>::from_data({2}, {2.0, 5.0});
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  auto z = sum_all(mul(x, y));
  backward(z);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(5.0));
  CHECK(y.grad()[0] == doctest::Approx(3.0));
  CHECK(y.grad()[1] == doctest::Approx(-1.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  auto x = Tensor<double>::from_data({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  auto y = add(x, x);
  CHECK_THROWS_AS(backward(y), ShapeError);
}

TEST_CASE("diamond graph accumulates both paths exactly once") {
  auto x = Tensor<double>::from_data({1}, {4.0});
  x.set_requires_grad(true);
  auto y = add(x, x);  // dy/dx = 2
  auto z = mul(y, y);  // z = 4x^2, dz/dx = 8x = 32
  backward(z);
  CHECK(x.grad()[0] == doctest::Approx(32.0));
}

TEST_CASE("two backward passes over identical graphs are bit-identical") {
  Rng rng(7);
  std::vector<double> xs(24), ws(24);
  for (auto& v : xs) v = rng.normal();
  for (auto& v : ws) v = rng.normal();
  std::vector<double> g1, g2;
  for (int rep = 0; rep < 2; ++rep) {
    auto x = Tensor<double>::from_data({2, 3, 2, 2}, xs);
    auto w = Tensor<double>::from_data({2, 3, 2, 2}, ws);
    w.set_requires_grad(true);
    auto out = sum_all(mul(tanh_op(x), w));
    backward(out);
    auto g = w.grad();
    (rep == 0 ? g1 : g2).assign(g.begin(), g.end());
  }
  CHECK(g1 == g2);
}

TEST_CASE("STT1 round-trip is bit-exact") {
  Rng rng(9);
  std::vector<float> vals(12);
  for (auto& v : vals) v = static_cast<float>(rng.normal());
  auto t = Tensor<float>::from_data({3, 4}, vals);
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  std::istringstream is(os.str(), std::ios::binary);
  auto back = read_tensor<float>(is);
  CHECK(back.shape() == t.shape());
  for (int i = 0; i < 12; ++i) CHECK(back.data()[i] == t.data()[i]);

  std::istringstream bad("XXXX\x00\x01", std::ios::binary);
  CHECK_THROWS_AS(read_tensor<float>(bad), FormatError);
}

TEST_CASE("grad norm clip examples") {
  auto p = Tensor<float>::from_data({2}, {0.f, 0.f});
  p.set_requires_grad(true);
  auto g = p.grad();
  g[0] = 3;
  g[1] = 4;
  std::vector<Tensor<float>> params{p};
  CHECK(global_grad_norm_clip(params, 5.0f) == doctest::Approx(1.0f));
  CHECK(p.grad()[0] == doctest::Approx(3.0f));

  g = p.grad();
  g[0] = 6;
  g[1] = 8;  // norm 10
  CHECK(global_grad_norm_clip(params, 5.0f) == doctest::Approx(0.5f));
  CHECK(global_grad_norm(params) == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("cross entropy: uniform logits give ln C") {
  auto logits = Tensor<float>::zeros({1, 19, 2, 2});
  LabelMap labels(1, 2, 2, 3);
  auto loss = softmax_cross_entropy_ignore(logits, labels);
  CHECK(loss.item() == doctest::Approx(std::log(19.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy: all-void labels give zero loss and zero gradient") {
  auto logits = Tensor<double>::from_data({1, 3, 1, 2}, {1, 2, 3, 4, 5, 6});
  logits.set_requires_grad(true);
  LabelMap labels(1, 1, 2, kVoidLabel);
  auto loss = softmax_cross_entropy_ignore(logits, labels);
  CHECK(loss.item() == 0.0);
  backward(loss);
  for (double g : logits.grad()) CHECK(g == 0.0);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(11);
  std::vector<double> vals(1 * 3 * 2 * 2);
  for (auto& v : vals) v = rng.normal();
  auto logits = Tensor<double>::from_data({1, 3, 2, 2}, vals);
  LabelMap labels(1, 2, 2);
  labels.v = {0, 2, kVoidLabel, 1};
  auto res = grad_check<double>(
      [&] { return softmax_cross_entropy_ignore(logits, labels); }, {logits}, 1e-4);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("conv2d scalar-scaling example") {
  auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto w = Tensor<double>::from_data({1, 1, 1, 1}, {2.0});
  auto y = conv2d(x, w, Tensor<double>{});
  CHECK(y.shape() == std::vector<std::int64_t>{1, 1, 3, 3});
  for (double v : y.data()) CHECK(v == doctest::Approx(2.0));
}
