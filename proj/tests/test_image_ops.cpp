#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zeropur/image_ops.hpp"
#include "zeropur/ops.hpp"
#include "zeropur/rng.hpp"

using namespace zp;

namespace {

Tensor random_image(std::uint64_t seed, Shape shape = {1, 3, 12, 12}, DType dt = DType::f32) {
  Rng rng(seed);
  Tensor t(std::move(shape), dt);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform());
  return t;
}

Tensor step_edge(std::size_t edge) {
  Tensor t({1, 1, 16, 16}, DType::f64);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) t.set(y * 16 + x, x < edge ? 0.2 : 0.8);
  }
  return t;
}

std::size_t edge_column(const Tensor& img) {
  // Column with the largest mean horizontal jump.
  std::size_t best = 0;
  double best_jump = -1;
  for (std::size_t x = 0; x + 1 < 16; ++x) {
    double jump = 0;
    for (std::size_t y = 0; y < 16; ++y) jump += std::abs(img.at(y * 16 + x + 1) - img.at(y * 16 + x));
    if (jump > best_jump) {
      best_jump = jump;
      best = x + 1;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("gaussian kernel for sigma 1.2 has radius 4 and the expected centre weight") {
  const auto k = gaussian_kernel(1.2);
  REQUIRE(k.size() == 9);
  double norm = 0;
  for (int i = -4; i <= 4; ++i) norm += std::exp(-i * i / (2 * 1.44));
  CHECK(k[4] == doctest::Approx(1.0 / norm).epsilon(1e-12));
  CHECK(k[4] == doctest::Approx(0.3328).epsilon(1e-3));
  CHECK(std::accumulate(k.begin(), k.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("gaussian blur: constant images, linearity, smoothing and errors") {
  const Tensor c = Tensor::full({1, 3, 10, 10}, 0.37f);
  CHECK(max_abs_diff(gaussian_blur(c, 1.2), c) < 1e-6);
  CHECK_THROWS_AS(gaussian_blur(c, 0.0), ConfigError);
  CHECK_THROWS_AS(gaussian_blur(c, -1.0), ConfigError);

  const Tensor a = random_image(1, {1, 3, 12, 12}, DType::f64), b = random_image(2, {1, 3, 12, 12}, DType::f64);
  Tensor mix = Tensor::zeros_like(a);
  for (std::size_t i = 0; i < a.numel(); ++i) mix.set(i, 0.3 * a.at(i) + 0.5 * b.at(i));
  const Tensor ba = gaussian_blur(a, 1.2), bb = gaussian_blur(b, 1.2), bm = gaussian_blur(mix, 1.2);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(bm.at(i) - (0.3 * ba.at(i) + 0.5 * bb.at(i))) < 1e-5);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = random_image(seed + 10);
    const Tensor once = gaussian_blur(x, 1.2);
    CHECK(total_variation(gaussian_blur(once, 1.2)) < total_variation(once));
  }
}

TEST_CASE("differentiable gaussian blur matches the tensor version") {
  const Tensor x = random_image(5, {2, 3, 9, 9}, DType::f64);
  Tape tape;
  const Var y = gaussian_blur(tape.constant(x), 0.8);
  CHECK(max_abs_diff(y.value(), gaussian_blur(x, 0.8)) < 1e-12);
}

TEST_CASE("median filter examples") {
  const Tensor c = Tensor::full({1, 1, 7, 7}, 0.25f);
  CHECK(median_filter(c, 3).identical(c));

  Tensor w({1, 1, 3, 3}, DType::f64);
  const double vals[] = {0.7, 0.1, 0.9, 0.3, 0.5, 0.2, 0.8, 0.4, 0.6};
  for (std::size_t i = 0; i < 9; ++i) w.set(i, vals[i]);
  CHECK(median_filter(w, 3).at(4) == doctest::Approx(0.5));

  Tensor impulse({1, 1, 9, 9}, DType::f32);
  impulse.set(4 * 9 + 4, 1.0);
  CHECK(median_filter(impulse, 3).at(4 * 9 + 4) == 0.0);

  CHECK_THROWS_AS(median_filter(c, 4), ConfigError);
  CHECK_THROWS_AS(BlurOp::median(9).validate(), ConfigError);
}

TEST_CASE("tvm denoising examples") {
  const Tensor c = Tensor::full({1, 3, 8, 8}, 0.6, DType::f64);
  CHECK(max_abs_diff(tvm(c, 0.1, 30), c) < 1e-12);

  const Tensor x = random_image(3, {1, 3, 12, 12}, DType::f64);
  CHECK(max_abs_diff(tvm(x, 1e-4, 30), x) < 1e-3);
  const Tensor d = tvm(x, 0.1, 30);
  CHECK(total_variation(d) <= total_variation(x));
  CHECK(within_unit_range(d));

  const Tensor edge = step_edge(8);
  const Tensor smooth = tvm(edge, 0.1, 30);
  CHECK(total_variation(smooth) < total_variation(edge));
  const auto before = edge_column(edge), after = edge_column(smooth);
  CHECK(std::max(before, after) - std::min(before, after) <= 1);
}

TEST_CASE("project_linf and clip01 contracts") {
  const Tensor center = random_image(4);
  const double eps = 8.0 / 255.0;
  Tensor inside = center.clone();
  for (std::size_t i = 0; i < inside.numel(); ++i) inside.set(i, center.at(i) + 0.5 * eps * ((i % 3) - 1.0));
  CHECK(project_linf(inside, center, eps).identical(inside));

  Tensor far = center.clone();
  for (std::size_t i = 0; i < far.numel(); ++i) far.set(i, center.at(i) + 2 * eps);
  const Tensor sat = project_linf(far, center, eps);
  for (std::size_t i = 0; i < sat.numel(); ++i) {
    CHECK(sat.at(i) == static_cast<float>(static_cast<float>(center.at(i)) + static_cast<float>(eps)));
  }
  CHECK_THROWS_AS(project_linf(far, center, -0.1), ConfigError);

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Tensor x = center.clone();
    for (std::size_t i = 0; i < x.numel(); ++i) x.set(i, center.at(i) + rng.uniform(-0.3, 0.3));
    const Tensor p = clip01(project_linf(x, center, eps));
    CHECK(within_linf_ball(p, center, eps));
    CHECK(within_unit_range(p));
    CHECK(project_linf(p, center, eps).identical(p));
  }
}

TEST_CASE("every blur keeps shape and range") {
  const Tensor x = random_image(9, {2, 3, 10, 10});
  for (const BlurOp& op : {BlurOp::identity(), BlurOp::gaussian(0.6), BlurOp::gaussian(1.8), BlurOp::median(5),
                           BlurOp::median(7), BlurOp::tvm()}) {
    const Tensor y = apply_blur(op, x);
    CHECK(y.shape() == x.shape());
    CHECK(within_unit_range(y));
  }
}

TEST_CASE("sign step uses sgn(0) = 0") {
  const Tensor x = Tensor::from({3}, {0.5, 0.5, 0.5});
  const Tensor d = Tensor::from({3}, {-2, 0, 3});
  CHECK(sign_step(x, d, 0.25).values() == std::vector<double>{0.25, 0.5, 0.75});
}
