#include "zeropur/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zeropur/image_ops.hpp"
#include "zeropur/ops.hpp"
#include "zeropur/rng.hpp"

namespace zp {

GradCheckResult grad_check(const ScalarFunction& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Tape tape;
    Var in = tape.leaf(x, true);
    tape.backward(f(tape, in));
    analytic = tape.grad(in);
  }
  auto eval = [&](const Tensor& point) {
    Tape tape;
    return f(tape, tape.leaf(point, false)).value().item();
  };
  std::vector<double> numeric(x.numel());
  Tensor probe = x.clone();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x.at(i);
    probe.set(i, v + h);
    const double up = eval(probe);
    probe.set(i, v - h);
    const double down = eval(probe);
    probe.set(i, v);
    numeric[i] = (up - down) / (2.0 * h);
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) scale = std::max({scale, std::abs(analytic.at(i)), std::abs(numeric[i])});
  GradCheckResult r;
  if (scale == 0.0) return r;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double err = std::abs(analytic.at(i) - numeric[i]) / scale;
    if (err > r.max_rel_error) r = {err, i, analytic.at(i), numeric[i]};
  }
  return r;
}

double gradcheck_step(DType dtype) { return dtype == DType::f32 ? 1e-3 : 1e-6; }
double gradcheck_threshold(DType dtype) { return dtype == DType::f32 ? 1e-3 : 1e-5; }

namespace {

Tensor random_tensor(Rng& rng, Shape shape, DType dtype, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), dtype);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

// Values bounded away from zero so relu never sits on its kink.
Tensor kink_free(Rng& rng, Shape shape, DType dtype) {
  Tensor t(std::move(shape), dtype);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double m = rng.uniform(0.1, 1.0);
    t.set(i, rng.bernoulli(0.5) ? m : -m);
  }
  return t;
}

// A random permutation of well-separated values, so pooling windows have no ties.
Tensor distinct_values(Rng& rng, Shape shape, DType dtype) {
  Tensor t(std::move(shape), dtype);
  std::vector<std::size_t> order(t.numel());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, -1.0 + 0.02 * static_cast<double>(order[i]));
  return t;
}

// f(x) = <r, op(x)> with a fixed random projection r.
ScalarFunction projected(std::function<Var(Tape&, Var)> op, std::uint64_t seed) {
  return [op = std::move(op), seed](Tape& tape, Var x) {
    Var y = op(tape, x);
    Rng rng(derive_seed(seed, 0x5eed));
    Var r = tape.constant(random_tensor(rng, y.shape(), y.dtype()));
    return ops::dot(r, y);
  };
}

using Builder = std::function<std::pair<ScalarFunction, Tensor>(std::uint64_t, DType)>;

OpCheck unary(std::string name, Shape shape, std::function<Var(Tape&, Var)> op, bool avoid_kinks = false) {
  Builder b = [shape, op, avoid_kinks](std::uint64_t seed, DType dt) {
    Rng rng(seed);
    Tensor x = avoid_kinks ? kink_free(rng, shape, dt) : random_tensor(rng, shape, dt);
    return std::make_pair(projected(op, seed), x);
  };
  return {std::move(name), std::move(b)};
}

// Check d/d(first) of op(first, second) where `second` is a fixed random tensor.
OpCheck binary_first(std::string name, Shape a, Shape b, std::function<Var(Var, Var)> op, double lo = -1, double hi = 1) {
  Builder bld = [a, b, op, lo, hi](std::uint64_t seed, DType dt) {
    Rng rng(seed);
    Tensor x = random_tensor(rng, a, dt);
    Tensor other = random_tensor(rng, b, dt, lo, hi);
    auto f = projected([other, op](Tape& t, Var v) { return op(v, t.constant(other)); }, seed);
    return std::make_pair(f, x);
  };
  return {std::move(name), std::move(bld)};
}

OpCheck binary_second(std::string name, Shape a, Shape b, std::function<Var(Var, Var)> op, double lo = -1,
                      double hi = 1) {
  Builder bld = [a, b, op, lo, hi](std::uint64_t seed, DType dt) {
    Rng rng(seed);
    Tensor other = random_tensor(rng, a, dt);
    Tensor x = random_tensor(rng, b, dt, lo, hi);
    auto f = projected([other, op](Tape& t, Var v) { return op(t.constant(other), v); }, seed);
    return std::make_pair(f, x);
  };
  return {std::move(name), std::move(bld)};
}

Tensor nonzero_denominator(Rng& rng, Shape shape, DType dt) {
  Tensor t(std::move(shape), dt);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double m = rng.uniform(0.5, 1.5);
    t.set(i, rng.bernoulli(0.5) ? m : -m);
  }
  return t;
}

std::vector<OpCheck> build_checks() {
  std::vector<OpCheck> c;
  c.push_back(binary_first("add", {3, 4}, {3, 4}, ops::add));
  c.push_back(binary_second("sub", {3, 4}, {3, 4}, ops::sub));
  c.push_back(binary_first("mul", {3, 4}, {3, 4}, ops::mul));
  c.push_back({"div/numerator", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor x = random_tensor(rng, {3, 4}, dt);
                 Tensor den = nonzero_denominator(rng, {3, 4}, dt);
                 return std::make_pair(
                     projected([den](Tape& t, Var v) { return ops::div(v, t.constant(den)); }, seed), x);
               }});
  c.push_back({"div/denominator", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor num = random_tensor(rng, {3, 4}, dt);
                 Tensor x = nonzero_denominator(rng, {3, 4}, dt);
                 return std::make_pair(
                     projected([num](Tape& t, Var v) { return ops::div(t.constant(num), v); }, seed), x);
               }});
  c.push_back(unary("scale", {5}, [](Tape&, Var x) { return ops::scale(x, -2.5); }));
  c.push_back(binary_first("matmul/lhs", {3, 5}, {5, 4}, ops::matmul));
  c.push_back(binary_second("matmul/rhs", {3, 5}, {5, 4}, ops::matmul));
  c.push_back(binary_first("conv2d/input", {1, 3, 8, 8}, {4, 3, 3, 3},
                           [](Var x, Var w) { return ops::conv2d(x, w, 1, 1); }));
  c.push_back(binary_second("conv2d/weight", {2, 3, 8, 8}, {4, 3, 3, 3},
                            [](Var x, Var w) { return ops::conv2d(x, w, 1, 1); }));
  c.push_back(binary_first("conv2d/strided", {1, 3, 8, 8}, {4, 3, 3, 3},
                           [](Var x, Var w) { return ops::conv2d(x, w, 2, 1); }));
  c.push_back({"channel_affine/input", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor x = random_tensor(rng, {2, 3, 4, 4}, dt);
                 Tensor s = random_tensor(rng, {3}, dt), b = random_tensor(rng, {3}, dt);
                 return std::make_pair(projected([s, b](Tape& t, Var v) {
                                         return ops::channel_affine(v, t.constant(s), t.constant(b));
                                       }, seed),
                                       x);
               }});
  c.push_back({"channel_affine/scale", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor xin = random_tensor(rng, {2, 3, 4, 4}, dt);
                 Tensor s = random_tensor(rng, {3}, dt), b = random_tensor(rng, {3}, dt);
                 return std::make_pair(projected([xin, b](Tape& t, Var v) {
                                         return ops::channel_affine(t.constant(xin), v, t.constant(b));
                                       }, seed),
                                       s);
               }});
  c.push_back({"channel_affine/bias", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor xin = random_tensor(rng, {2, 3, 4, 4}, dt);
                 Tensor s = random_tensor(rng, {3}, dt), b = random_tensor(rng, {3}, dt);
                 return std::make_pair(projected([xin, s](Tape& t, Var v) {
                                         return ops::channel_affine(t.constant(xin), t.constant(s), v);
                                       }, seed),
                                       b);
               }});
  c.push_back(unary("relu", {4, 6}, [](Tape&, Var x) { return ops::relu(x); }, true));
  c.push_back({"max_pool2d", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor x = distinct_values(rng, {1, 2, 6, 6}, dt);
                 return std::make_pair(projected([](Tape&, Var v) { return ops::max_pool2d(v, 2, 2); }, seed), x);
               }});
  c.push_back(unary("avg_pool2d", {1, 2, 6, 6}, [](Tape&, Var x) { return ops::avg_pool2d(x, 3, 1); }));
  c.push_back(unary("global_avg_pool", {2, 3, 4, 4}, [](Tape&, Var x) { return ops::global_avg_pool(x); }));
  c.push_back(unary("flatten", {2, 3, 2, 2}, [](Tape&, Var x) { return ops::flatten(x); }));
  c.push_back({"linear/input", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor x = random_tensor(rng, {3, 5}, dt);
                 Tensor w = random_tensor(rng, {4, 5}, dt), b = random_tensor(rng, {4}, dt);
                 return std::make_pair(
                     projected([w, b](Tape& t, Var v) { return ops::linear(v, t.constant(w), t.constant(b)); }, seed),
                     x);
               }});
  c.push_back({"linear/weight", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor xin = random_tensor(rng, {3, 5}, dt);
                 Tensor w = random_tensor(rng, {4, 5}, dt), b = random_tensor(rng, {4}, dt);
                 return std::make_pair(projected([xin, b](Tape& t, Var v) {
                                         return ops::linear(t.constant(xin), v, t.constant(b));
                                       }, seed),
                                       w);
               }});
  c.push_back({"linear/bias", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor xin = random_tensor(rng, {3, 5}, dt);
                 Tensor w = random_tensor(rng, {4, 5}, dt), b = random_tensor(rng, {4}, dt);
                 return std::make_pair(projected([xin, w](Tape& t, Var v) {
                                         return ops::linear(t.constant(xin), t.constant(w), v);
                                       }, seed),
                                       b);
               }});
  c.push_back(unary("softmax", {3, 5}, [](Tape&, Var x) { return ops::softmax(x); }));
  c.push_back(unary("log_softmax", {3, 5}, [](Tape&, Var x) { return ops::log_softmax(x); }));
  c.push_back({"cross_entropy", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor x = random_tensor(rng, {4, 5}, dt, -2, 2);
                 std::vector<int> labels(4);
                 for (int& l : labels) l = static_cast<int>(rng.below(5));
                 ScalarFunction f = [labels](Tape&, Var v) { return ops::cross_entropy(v, labels); };
                 return std::make_pair(f, x);
               }});
  c.push_back(unary("l2_norm", {3, 4}, [](Tape&, Var x) { return ops::l2_norm(x); }));
  c.push_back(unary("row_l2_norm", {3, 4}, [](Tape&, Var x) { return ops::row_l2_norm(x); }));
  c.push_back(binary_first("dot", {6}, {6}, ops::dot));
  c.push_back(unary("sum", {2, 3}, [](Tape&, Var x) { return ops::sum(x); }));
  c.push_back(unary("mean", {2, 3}, [](Tape&, Var x) { return ops::mean(x); }));
  c.push_back(unary("channel_normalize", {2, 4, 3, 3}, [](Tape&, Var x) { return ops::channel_normalize(x); }));
  c.push_back(unary("instance_standardize", {2, 3, 4, 4}, [](Tape&, Var x) { return ops::instance_standardize(x); }));
  c.push_back(binary_first("cosine_similarity", {64}, {64}, ops::cosine_similarity));
  c.push_back(binary_second("cosine_similarity/rows", {3, 8}, {3, 8}, ops::cosine_similarity));
  c.push_back({"concat_columns", [](std::uint64_t seed, DType dt) {
                 Rng rng(seed);
                 Tensor x = random_tensor(rng, {2, 3}, dt);
                 Tensor other = random_tensor(rng, {2, 5}, dt);
                 return std::make_pair(projected([other](Tape& t, Var v) {
                                         const Var parts[] = {t.constant(other), v, ops::scale(v, 2.0)};
                                         return ops::concat_columns(parts);
                                       }, seed),
                                       x);
               }});
  c.push_back(unary("resize_pad", {2, 2, 8, 8}, [](Tape&, Var x) {
    const ops::ResizePad p[] = {{7, 1, 0}, {8, 0, 0}};
    return ops::resize_pad(x, p);
  }));
  c.push_back(unary("gaussian_blur", {1, 2, 9, 9}, [](Tape&, Var x) { return gaussian_blur(x, 1.2); }));
  return c;
}

}  // namespace

const std::vector<OpCheck>& op_checks() {
  static const std::vector<OpCheck> checks = build_checks();
  return checks;
}

std::vector<OpCheckSummary> run_op_checks(std::size_t seeds, std::span<const DType> dtypes) {
  std::vector<OpCheckSummary> out;
  for (const OpCheck& check : op_checks()) {
    for (DType dt : dtypes) {
      OpCheckSummary s{check.name, dt, 0.0, true};
      for (std::size_t seed = 0; seed < seeds; ++seed) {
        auto [f, x] = check.make(seed, dt);
        s.worst = std::max(s.worst, grad_check(f, x, gradcheck_step(dt)).max_rel_error);
      }
      s.passed = s.worst < gradcheck_threshold(dt);
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace zp
