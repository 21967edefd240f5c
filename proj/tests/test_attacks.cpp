#include <doctest.h>

#include <cmath>

#include "zeropur/attacks.hpp"
#include "zeropur/image_ops.hpp"
#include "zeropur/ops.hpp"
#include "zeropur/rng.hpp"
#include "support.hpp"

using namespace zp;

namespace {

Tensor random_batch(std::uint64_t seed, std::size_t n, DType dt = DType::f32) {
  Rng rng(seed);
  Tensor t({n, 3, 8, 8}, dt);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(0.05, 0.95));
  return t;
}

std::vector<int> labels_for(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 4);
  return y;
}

const Classifier& model() {
  static const Classifier m = testing::untrained_with_head(testing::small_spec(), 11);
  return m;
}

}  // namespace

TEST_CASE("attack config validation and names") {
  AttackConfig c;
  c.validate();
  c.eps = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AttackConfig{};
  c.di_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AttackConfig{};
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.kind = AttackKind::fgsm;
  c.validate();
  for (auto k : {AttackKind::fgsm, AttackKind::pgd, AttackKind::di2_fgsm, AttackKind::bpda_pgd}) {
    CHECK(parse_attack_kind(attack_kind_name(k)) == k);
  }
  CHECK_THROWS_AS(parse_attack_kind("cw"), ConfigError);
  CHECK_THROWS_AS(parse_norm("l1"), ConfigError);
}

TEST_CASE("input gradient matches central differences") {
  const Classifier m = model().to(DType::f64);
  const Tensor x = random_batch(1, 2, DType::f64);
  const auto y = labels_for(2);
  const Tensor g = input_gradient(m, x, y);
  auto loss = [&](const Tensor& v) {
    Tape tape;
    const auto out = m.forward(tape, tape.constant(v));
    return ops::cross_entropy(out.logits, y).value().item() * 2.0;
  };
  Rng rng(3);
  double worst = 0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t i = rng.below(x.numel());
    Tensor a = x.clone(), b = x.clone();
    a.set(i, x.at(i) + 1e-5);
    b.set(i, x.at(i) - 1e-5);
    const double fd = (loss(a) - loss(b)) / 2e-5;
    worst = std::max(worst, std::abs(fd - g.at(i)) / std::max(1e-6, std::abs(fd) + std::abs(g.at(i))));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("linear softmax model: cross-entropy input gradient has the closed form") {
  // Two classes, logits = W x + b, so dL/dx = (softmax - onehot) W.
  Tape tape;
  const Tensor w = Tensor::from({2, 3}, {0.5, -1.0, 2.0, -0.3, 0.8, 0.1}, DType::f64);
  const Tensor b = Tensor::from({2}, {0.1, -0.2}, DType::f64);
  const Tensor x = Tensor::from({1, 3}, {0.2, 0.7, 0.4}, DType::f64);
  const Var xv = tape.leaf(x, true);
  const int label[] = {1};
  tape.backward(ops::cross_entropy(ops::linear(xv, tape.constant(w), tape.constant(b)), label));
  const Tensor g = tape.grad(xv);
  double z[2];
  for (int k = 0; k < 2; ++k) z[k] = b.at(k) + w.at(3 * k) * 0.2 + w.at(3 * k + 1) * 0.7 + w.at(3 * k + 2) * 0.4;
  const double p0 = 1.0 / (1.0 + std::exp(z[1] - z[0]));
  // Residual for label 1: (p0, p1 - 1) = (p0, -p0).
  for (int j = 0; j < 3; ++j) {
    const double expect = p0 * w.at(j) - p0 * w.at(3 + j);
    CHECK(g.at(j) == doctest::Approx(expect).epsilon(1e-12));
    const double step = 8.0 / 255.0 * (expect > 0 ? 1 : -1);
    CHECK(sign_step(x, g, 8.0 / 255.0).at(j) == doctest::Approx(x.at(j) + step));
  }
}

TEST_CASE("fgsm: zero budget, sign rule and saturation") {
  const Tensor x = random_batch(2, 4);
  const auto y = labels_for(4);
  AttackConfig c;
  c.kind = AttackKind::fgsm;
  c.eps = 0.0;
  CHECK(fgsm(model(), x, y, c).identical(x));

  c.eps = 8.0 / 255.0;
  const Tensor adv = fgsm(model(), x, y, c);
  const Tensor g = input_gradient(model(), x, y);
  CHECK(adv.identical(clip01(project_linf(sign_step(x, g, c.eps), x, c.eps))));
  std::size_t saturated = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (g.at(i) == 0.0) continue;
    CHECK(std::abs(std::abs(adv.at(i) - x.at(i)) - c.eps) < 1e-6);
    ++saturated;
  }
  CHECK(saturated > x.numel() / 2);
}

TEST_CASE("pgd: one full-size step without random start equals fgsm") {
  const Tensor x = random_batch(3, 4);
  const auto y = labels_for(4);
  AttackConfig c;
  c.steps = 1;
  c.random_start = false;
  c.step_size = c.eps;
  AttackConfig f = c;
  f.kind = AttackKind::fgsm;
  CHECK(pgd(model(), x, y, c).identical(fgsm(model(), x, y, f)));
}

TEST_CASE("every attack respects the budget and range exactly") {
  const auto y = labels_for(3);
  const Purifier noisy = [](const Tensor& v, std::uint64_t seed) {
    Rng rng(seed);
    Tensor out = v.clone();
    for (std::size_t i = 0; i < out.numel(); ++i) out.set(i, v.at(i) + rng.uniform(-0.2, 0.2));
    return clip01(out);
  };
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Tensor x = random_batch(seed + 50, 3);
    // Push some pixels onto the range boundary.
    for (std::size_t i = 0; i < x.numel(); i += 7) x.set(i, rng.bernoulli(0.5) ? 0.0 : 1.0);
    AttackConfig c;
    c.seed = seed;
    c.steps = 3;
    c.eps = rng.uniform(0.0, 0.1);
    c.step_size = rng.uniform(0.001, 0.05);
    c.kind = seed % 4 == 0 ? AttackKind::fgsm : seed % 4 == 1 ? AttackKind::pgd
             : seed % 4 == 2 ? AttackKind::di2_fgsm : AttackKind::bpda_pgd;
    c.di_prob = 1.0;
    const Tensor adv = run_attack(model(), x, y, c, &noisy);
    CHECK(within_linf_ball(adv, x, c.eps));
    CHECK(within_unit_range(adv));
  }
}

TEST_CASE("attacks are deterministic and checkpoints match shorter runs") {
  const Tensor x = random_batch(4, 5);
  const auto y = labels_for(5);
  AttackConfig c;
  c.seed = 17;
  c.steps = 4;
  CHECK(pgd(model(), x, y, c).identical(pgd(model(), x, y, c)));
  c.seed = 18;
  CHECK_FALSE(pgd(model(), x, y, c).identical(pgd(model(), x, y, AttackConfig{})));

  const std::size_t ks[] = {1, 2, 4};
  const auto snaps = attack_checkpoints(model(), x, y, c, ks);
  for (std::size_t k = 0; k < 3; ++k) {
    AttackConfig ck = c;
    ck.steps = ks[k];
    CHECK(snaps[k].identical(pgd(model(), x, y, ck)));
  }
}

TEST_CASE("di2-fgsm: p = 0 follows the plain trajectory, p = 1 is reproducible") {
  const Tensor x = random_batch(5, 4);
  const auto y = labels_for(4);
  AttackConfig c;
  c.seed = 3;
  c.steps = 4;
  c.di_prob = 0.0;
  CHECK(di2_fgsm(model(), x, y, c).identical(pgd(model(), x, y, c)));
  c.di_prob = 1.0;
  c.di_min_scale = 0.75;
  const Tensor a = di2_fgsm(model(), x, y, c);
  CHECK(a.identical(di2_fgsm(model(), x, y, c)));
  CHECK_FALSE(a.identical(pgd(model(), x, y, c)));
}

TEST_CASE("bpda with an identity purifier reduces to pgd") {
  const Tensor x = random_batch(6, 4);
  const auto y = labels_for(4);
  AttackConfig c;
  c.seed = 9;
  c.steps = 3;
  const Purifier identity = [](const Tensor& v, std::uint64_t) { return v; };
  CHECK(bpda_pgd(model(), identity, x, y, c).identical(pgd(model(), x, y, c)));
  c.kind = AttackKind::bpda_pgd;
  CHECK_THROWS_AS(run_attack(model(), x, y, c), ConfigError);
}

TEST_CASE("l2 attacks stay inside the l2 ball") {
  const Tensor x = random_batch(7, 3);
  const auto y = labels_for(3);
  AttackConfig c;
  c.norm = Norm::l2;
  c.eps = 0.5;
  c.step_size = 0.2;
  c.steps = 5;
  const Tensor adv = pgd(model(), x, y, c);
  CHECK(within_unit_range(adv));
  for (std::size_t i = 0; i < 3; ++i) {
    double ss = 0;
    for (std::size_t j = 0; j < 192; ++j) ss += std::pow(adv.at(i * 192 + j) - x.at(i * 192 + j), 2);
    CHECK(std::sqrt(ss) <= 0.5 + 1e-5);
  }
}

TEST_CASE("mismatched labels are rejected") {
  const Tensor x = random_batch(8, 3);
  CHECK_THROWS_AS(input_gradient(model(), x, labels_for(2)), ShapeError);
}
