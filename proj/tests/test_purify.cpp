#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "zeropur/purify.hpp"
#include "zeropur/rng.hpp"
#include "support.hpp"

using namespace zp;
namespace fs = std::filesystem;

namespace {

const Classifier& model() {
  static const Classifier m = testing::untrained_with_head(testing::small_spec(), 21);
  return m;
}

Tensor random_batch(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  Tensor t({n, 3, 8, 8}, DType::f32);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform());
  return t;
}

GuidedShiftConfig small_gs(std::size_t iters = 4) {
  GuidedShiftConfig g;
  g.iterations = iters;
  g.blur = BlurOp::gaussian(0.6);
  return g;
}

AdaptiveProjectionConfig small_ap(std::size_t iters = 4) {
  AdaptiveProjectionConfig a;
  a.iterations = iters;
  return a;
}

}  // namespace

TEST_CASE("purification config validation") {
  GuidedShiftConfig g;
  g.validate();
  g.step = 0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GuidedShiftConfig{};
  g.random_start = 2;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = GuidedShiftConfig{};
  g.blur = BlurOp::median(3);
  g.differentiate_blur = true;
  CHECK_THROWS_AS(g.validate(), ConfigError);

  AdaptiveProjectionConfig a;
  a.validate();
  a.taps.clear();
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = AdaptiveProjectionConfig{};
  a.lambda1 = a.lambda2 = 0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = AdaptiveProjectionConfig{};
  a.iterations = 0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  CHECK_THROWS_AS(parse_defense_mode("diffusion"), ConfigError);
}

TEST_CASE("guided shift with zero iterations returns the random start") {
  const Tensor x = random_batch(1, 3);
  GuidedShiftConfig g = small_gs(0);
  g.seed = 5;
  const auto r = guided_shift(model(), x, g);
  CHECK(within_linf_ball(r.x_g, x, g.random_start * g.eps + 1e-7));
  CHECK(within_unit_range(r.x_g));
  CHECK_FALSE(r.x_g.identical(x));
  CHECK(r.traces.size() == 3);
  CHECK(r.traces[0].size() == 1);
}

TEST_CASE("guided shift with an identity blur does not move") {
  const Tensor x = random_batch(2, 3);
  GuidedShiftConfig g = small_gs(5);
  g.blur = BlurOp::identity();
  const auto moved = guided_shift(model(), x, g);
  g.iterations = 0;
  const auto start = guided_shift(model(), x, g);
  CHECK(moved.x_g.identical(start.x_g));
  for (const auto& row : moved.traces[1]) CHECK(row.cos_g_blur == doctest::Approx(1.0));
}

TEST_CASE("guided shift traces, determinism and sample independence") {
  const Tensor x = random_batch(3, 4);
  const Tensor nat = random_batch(4, 4);
  GuidedShiftConfig g = small_gs(3);
  g.seed = 8;
  const auto a = guided_shift(model(), x, g, &nat);
  const auto b = guided_shift(model(), x, g, &nat);
  CHECK(a.x_g.identical(b.x_g));
  for (const auto& tr : a.traces) {
    REQUIRE(tr.size() == 4);
    for (std::size_t t = 0; t < tr.size(); ++t) {
      CHECK(tr[t].t == t);
      CHECK(std::isfinite(tr[t].cos_g_nat));
      CHECK(std::abs(tr[t].cos_g_blur) <= 1.0 + 1e-6);
    }
  }
  // A sample's result does not depend on its batch neighbours beyond its index.
  const auto head = guided_shift(model(), x.slice0(0, 2), g);
  CHECK(head.x_g.identical(a.x_g.slice0(0, 2)));

  const auto no_ref = guided_shift(model(), x, g);
  CHECK(std::isnan(no_ref.traces[0][0].cos_g_nat));

  GuidedShiftConfig diff = g;
  diff.differentiate_blur = true;
  const auto d = guided_shift(model(), x, diff);
  CHECK(within_linf_ball(d.x_g, x, g.eps));
}

TEST_CASE("guided shift rejects out-of-range input") {
  Tensor x = random_batch(5, 1);
  x.set(0, 1.5);
  CHECK_THROWS_AS(guided_shift(model(), x, small_gs()), ConfigError);
}

TEST_CASE("trace csv has a header and T+1 rows") {
  const Tensor x = random_batch(6, 2);
  const auto r = guided_shift(model(), x, small_gs(3), &x);
  const fs::path path = fs::temp_directory_path() / "zeropur_test_trace.csv";
  write_trace_csv(path, mean_trace(r.traces));
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,cos_g_nat,cos_blur_nat,cos_g_blur");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
  fs::remove(path);
}

TEST_CASE("perceptual distance: identity, symmetry, growth with noise") {
  const std::vector<std::string> taps = Classifier::tap_universe();
  const Tensor a = random_batch(7, 3), b = random_batch(8, 3);
  const Tensor same = lpips_distance(model(), a, a, taps);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same.at(i) == 0.0);
  const Tensor ab = lpips_distance(model(), a, b, taps), ba = lpips_distance(model(), b, a, taps);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(ab.at(i) - ba.at(i)) < 1e-6);

  const Tensor x = random_batch(9, 20);
  Rng rng(1);
  Tensor dir = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < dir.numel(); ++i) dir.set(i, rng.bernoulli(0.5) ? 1.0 : -1.0);
  std::vector<Tensor> d;
  for (double amp : {1.0, 2.0, 4.0, 8.0}) {
    Tensor noisy = x.clone();
    for (std::size_t i = 0; i < x.numel(); ++i) noisy.set(i, x.at(i) + amp / 255.0 * dir.at(i));
    d.push_back(lpips_distance(model(), x, noisy, taps));
  }
  std::size_t monotone = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    monotone += d[0].at(i) < d[1].at(i) && d[1].at(i) < d[2].at(i) && d[2].at(i) < d[3].at(i);
  }
  CHECK(monotone == 20);
  CHECK_THROWS_AS(lpips_distance(model(), a, b, std::vector<std::string>{}), ConfigError);
}

TEST_CASE("adaptive projection: fixed point, one step bound, budget") {
  const Tensor x = random_batch(10, 3);
  const auto fixed = adaptive_projection(model(), x, x, small_ap(6));
  CHECK(fixed.x_p.identical(x));

  AdaptiveProjectionConfig one = small_ap(1);
  const Tensor xg = guided_shift(model(), x, small_gs(3)).x_g;
  const auto r1 = adaptive_projection(model(), x, xg, one);
  CHECK(linf_distance(r1.x_p, x) <= one.eps + 1e-7);
  CHECK(within_unit_range(r1.x_p));

  const auto r = adaptive_projection(model(), x, xg, small_ap(5), true);
  CHECK(r.projection.size() == 6);
  CHECK(within_linf_ball(r.x_p, x, 8.0 / 255.0));
  for (double p : r.projection[0]) CHECK(p == 0.0);
  CHECK(r.x_p.identical(adaptive_projection(model(), x, xg, small_ap(5)).x_p));
}

TEST_CASE("adaptive projection grows the projection onto the guide direction") {
  const Tensor x = random_batch(11, 10);
  GuidedShiftConfig g = small_gs(4);
  g.blur = BlurOp::gaussian(1.2);
  const Tensor xg = guided_shift(model(), x, g).x_g;
  AdaptiveProjectionConfig a = small_ap(8);
  a.lambda2 = 0.0;
  const auto r = adaptive_projection(model(), x, xg, a, true);
  std::size_t grew = 0;
  for (std::size_t i = 0; i < 10; ++i) grew += r.projection.back()[i] > r.projection.front()[i];
  CHECK(grew >= 9);
}

TEST_CASE("dynamics: zero weight and stationary point") {
  const Tensor x = random_batch(12, 2);
  const Tensor xg = guided_shift(model(), x, small_gs(2)).x_g;
  AdaptiveProjectionConfig a = small_ap();
  a.lambda1 = 0.0;
  const auto d0 = measure_dynamics(model(), x, xg, xg, a);
  for (double v : d0.f1) CHECK(v == 0.0);
  CHECK(d0.f2.size() == 2);
  const auto still = measure_dynamics(model(), x, x, x, small_ap());
  for (double v : still.f1) CHECK(v == 0.0);
  for (double v : still.f2) CHECK(v == 0.0);
}

TEST_CASE("zeropur with a zero budget returns the input") {
  const Tensor x = random_batch(13, 3);
  GuidedShiftConfig g = small_gs(3);
  g.eps = 0.0;
  AdaptiveProjectionConfig a = small_ap(3);
  a.eps = 0.0;
  CHECK(zeropur(model(), x, g, a).identical(x));
  CHECK(defend(model(), x, DefenseMode::none, g, a, 1).identical(x));
}

TEST_CASE("purified outputs stay in budget and range over many seeds") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const Tensor x = random_batch(100 + seed, 2);
    GuidedShiftConfig g = small_gs(2);
    g.seed = seed;
    g.eps = rng.uniform(0.0, 0.1);
    g.random_start = rng.uniform();
    AdaptiveProjectionConfig a = small_ap(2);
    a.eps = rng.uniform(0.0, 0.1);
    const auto gs = guided_shift(model(), x, g);
    CHECK(within_linf_ball(gs.x_g, x, g.eps));
    const auto ap = adaptive_projection(model(), x, gs.x_g, a);
    CHECK(within_linf_ball(ap.x_p, x, a.eps));
    CHECK(within_unit_range(ap.x_p));
  }
}
