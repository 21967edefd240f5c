#include <doctest.h>

#include <cmath>
#include <vector>

#include "zeropur/gradcheck.hpp"
#include "zeropur/kernels.hpp"
#include "zeropur/ops.hpp"
#include "zeropur/rng.hpp"

using namespace zp;

namespace {

Tensor random_tensor(std::uint64_t seed, Shape shape, DType dt = DType::f32) {
  Rng rng(seed);
  Tensor t(std::move(shape), dt);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-1, 1));
  return t;
}

}  // namespace

TEST_CASE("tensor shape invariants and copy-on-write") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(a.numel() == 6);
  Tensor b = a;
  b.set(0, 42);
  CHECK(a.at(0) == 1);
  CHECK(b.at(0) == 42);
  CHECK_THROWS_AS(a.reshaped({4}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2}, {1, 2, 3}), ShapeError);
  CHECK(a.to(DType::f64).to(DType::f32).identical(a));
}

TEST_CASE("relu forward and subgradient at zero") {
  Tape tape;
  Var x = tape.leaf(Tensor::from({3}, {-1, 0, 2}), true);
  Var y = ops::relu(x);
  CHECK(y.value().values() == std::vector<double>{0, 0, 2});
  tape.backward(y, Tensor::full({3}, 1.0));
  CHECK(tape.grad(x).values() == std::vector<double>{0, 0, 1});
}

TEST_CASE("conv2d of a constant image with a unit-sum kernel is constant in the interior") {
  Tape tape;
  Var x = tape.constant(Tensor::full({1, 1, 6, 6}, 0.7));
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0 / 9.0);
  Var y = ops::conv2d(x, tape.constant(w), 1, 1);
  for (std::size_t r = 1; r < 5; ++r) {
    for (std::size_t c = 1; c < 5; ++c) CHECK(y.value().at(r * 6 + c) == doctest::Approx(0.7).epsilon(1e-6));
  }
}

TEST_CASE("conv2d gradient matches central differences in f32") {
  Rng rng(7);
  Tensor w = random_tensor(11, {4, 3, 3, 3});
  Tensor r = random_tensor(12, {1, 4, 8, 8});
  ScalarFunction f = [&](Tape& t, Var x) { return ops::dot(t.constant(r), ops::conv2d(x, t.constant(w), 1, 1)); };
  const auto res = grad_check(f, random_tensor(13, {1, 3, 8, 8}), 1e-3);
  CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("cosine similarity examples") {
  Tape tape;
  auto cos = [&](std::initializer_list<double> a, std::initializer_list<double> b) {
    const std::size_t n = a.size();
    return ops::cosine_similarity(tape.constant(Tensor::from({n}, a, DType::f64)),
                                  tape.constant(Tensor::from({n}, b, DType::f64)))
        .value()
        .item();
  };
  CHECK(cos({3, -1, 2}, {3, -1, 2}) == doctest::Approx(1.0));
  CHECK(cos({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cos({1, 2}, {2, 1}) == doctest::Approx(0.8));
  CHECK_THROWS_AS(cos({0, 0}, {1, 1}), NumericError);
}

TEST_CASE("cross entropy keeps a true-class gradient at saturated confidence in f32") {
  Tape tape;
  Var z = tape.leaf(Tensor::from({1, 2}, {40.0, 0.0}, DType::f32), true);
  const int label = 0;
  tape.backward(ops::cross_entropy(z, std::span<const int>(&label, 1)));
  const Tensor g = tape.grad(z);
  CHECK(g.at(0) < 0.0);
  CHECK(g.at(1) > 0.0);
  CHECK(g.at(0) == doctest::Approx(-g.at(1)).epsilon(1e-6));
  CHECK(g.at(1) == doctest::Approx(std::exp(-40.0)).epsilon(1e-4));
}

TEST_CASE("grad_check on sum of squares in f64") {
  ScalarFunction f = [](Tape&, Var x) { return ops::dot(x, x); };
  Tensor x = Tensor::from({2}, {1, 2}, DType::f64);
  Tape tape;
  Var v = tape.leaf(x, true);
  tape.backward(f(tape, v));
  CHECK(tape.grad(v).values() == std::vector<double>{2, 4});
  CHECK(grad_check(f, x, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("cosine similarity gradient on random 64-vectors in f64") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor other = random_tensor(100 + seed, {64}, DType::f64);
    ScalarFunction f = [&](Tape& t, Var x) { return ops::cosine_similarity(x, t.constant(other)); };
    CHECK(grad_check(f, random_tensor(seed, {64}, DType::f64), 1e-6).max_rel_error < 1e-4);
  }
}

TEST_CASE("every registered op passes grad_check in both precisions") {
  const DType dts[] = {DType::f32, DType::f64};
  for (const auto& s : run_op_checks(3, dts)) {
    INFO(s.name << " " << dtype_name(s.dtype) << " worst " << s.worst);
    CHECK(s.passed);
  }
}

TEST_CASE("tape linearity: backward(a) + backward(b) equals backward(a + b)") {
  Tensor x0 = random_tensor(3, {2, 3, 5, 5}, DType::f64);
  Tensor w = random_tensor(4, {2, 3, 3, 3}, DType::f64);
  auto losses = [&](Tape& t, Var x) {
    Var y = ops::relu(ops::conv2d(x, t.constant(w), 1, 1));
    return std::make_pair(ops::sum(ops::mul(y, y)), ops::l2_norm(x));
  };
  Tape t1;
  Var x1 = t1.leaf(x0, true);
  auto [a1, b1] = losses(t1, x1);
  t1.backward(a1);
  t1.backward(b1);
  Tape t2;
  Var x2 = t2.leaf(x0, true);
  auto [a2, b2] = losses(t2, x2);
  t2.backward(ops::add(a2, b2));
  CHECK(max_abs_diff(t1.grad(x1), t2.grad(x2)) < 1e-12);
}

TEST_CASE("channel_normalize yields unit channel norms") {
  Tape tape;
  Tensor x = random_tensor(9, {2, 5, 3, 3});
  x.set(0, 0);  // location (0,0,0) still has other nonzero channels
  Var y = ops::channel_normalize(tape.constant(x));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t p = 0; p < 9; ++p) {
      double ss = 0;
      for (std::size_t c = 0; c < 5; ++c) ss += std::pow(y.value().at((n * 5 + c) * 9 + p), 2);
      CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
  Var z = ops::channel_normalize(tape.constant(Tensor::zeros({1, 3, 2, 2})));
  CHECK(z.value().values() == std::vector<double>(12, 0.0));
}

TEST_CASE("shape mismatch and non-finite results are hard errors") {
  Tape tape;
  Var a = tape.constant(Tensor::zeros({2, 3}));
  Var b = tape.constant(Tensor::zeros({3, 2}));
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  Var zero = tape.constant(Tensor::zeros({2, 3}));
  try {
    ops::div(tape.constant(Tensor::full({2, 3}, 1.0)), zero);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("div") != std::string::npos);
  }
}

TEST_CASE("max_pool2d routes ties to the first maximum") {
  Tape tape;
  Var x = tape.leaf(Tensor::from({1, 1, 2, 2}, {1, 1, 1, 1}), true);
  tape.backward(ops::sum(ops::max_pool2d(x, 2, 2)));
  CHECK(tape.grad(x).values() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("parallel kernels agree with the serial reference") {
  Conv2dGeometry g{3, 4, 9, 7, 5, 3, 3, 2, 1};
  Tensor x = random_tensor(1, {g.batch, g.in_channels, g.height, g.width}, DType::f64);
  Tensor w = random_tensor(2, {g.out_channels, g.in_channels, 3, 3}, DType::f64);
  Tensor gy = random_tensor(3, {g.batch, g.out_channels, g.out_height(), g.out_width()}, DType::f64);
  std::vector<double> y1(g.output_numel()), y2(g.output_numel());
  kernels::conv2d_forward<double>(g, x.view<double>(), w.view<double>(), y1);
  reference::conv2d_forward<double>(g, x.view<double>(), w.view<double>(), y2);
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
  std::vector<double> gx1(g.input_numel()), gx2(g.input_numel());
  kernels::conv2d_backward_input<double>(g, w.view<double>(), gy.view<double>(), gx1);
  reference::conv2d_backward_input<double>(g, w.view<double>(), gy.view<double>(), gx2);
  for (std::size_t i = 0; i < gx1.size(); ++i) CHECK(gx1[i] == doctest::Approx(gx2[i]).epsilon(1e-12));
  std::vector<double> gw1(g.weight_numel()), gw2(g.weight_numel());
  kernels::conv2d_backward_weight<double>(g, x.view<double>(), gy.view<double>(), gw1);
  reference::conv2d_backward_weight<double>(g, x.view<double>(), gy.view<double>(), gw2);
  for (std::size_t i = 0; i < gw1.size(); ++i) CHECK(gw1[i] == doctest::Approx(gw2[i]).epsilon(1e-12));

  Pool2dGeometry p{2, 3, 6, 6, 2, 2};
  Tensor px = random_tensor(4, {2, 3, 6, 6}, DType::f64);
  std::vector<double> m1(2 * 3 * 9), m2(2 * 3 * 9), a1(18 * 3), a2(18 * 3);
  std::vector<std::size_t> i1(m1.size()), i2(m2.size());
  kernels::max_pool2d_forward<double>(p, px.view<double>(), m1, i1);
  reference::max_pool2d_forward<double>(p, px.view<double>(), m2, i2);
  CHECK(m1 == m2);
  CHECK(i1 == i2);
  kernels::avg_pool2d_forward<double>(p, px.view<double>(), a1);
  reference::avg_pool2d_forward<double>(p, px.view<double>(), a2);
  for (std::size_t i = 0; i < a1.size(); ++i) CHECK(a1[i] == doctest::Approx(a2[i]));

  Tensor ma = random_tensor(5, {7, 9}, DType::f64), mb = random_tensor(6, {9, 4}, DType::f64);
  std::vector<double> c1(28), c2(28);
  kernels::matmul<double>(7, 9, 4, ma.view<double>(), mb.view<double>(), c1);
  reference::matmul<double>(7, 9, 4, ma.view<double>(), mb.view<double>(), c2);
  for (std::size_t i = 0; i < 28; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
}
