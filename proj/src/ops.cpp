#include "zeropur/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "zeropur/kernels.hpp"

namespace zp::ops {

namespace {

using Grads = std::vector<std::optional<Tensor>>;

constexpr double kDegenerateNorm = 1e-12;

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw Error("operation on a default-constructed Var");
  return *a.tape();
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
  return tape_of(a);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

template <class Fn>
Tensor map1(const Tensor& x, Fn fn) {
  Tensor out = Tensor::zeros_like(x);
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.view<T>();
    auto o = out.mutable_view<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(fn(in[i]));
  });
  return out;
}

template <class Fn>
Tensor map2(const Tensor& a, const Tensor& b, Fn fn) {
  Tensor out = Tensor::zeros_like(a);
  dispatch(a.dtype(), [&]<class T>(T) {
    auto x = a.view<T>();
    auto y = b.view<T>();
    auto o = out.mutable_view<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(fn(x[i], y[i]));
  });
  return out;
}

template <class Fn>
Tensor map3(const Tensor& a, const Tensor& b, const Tensor& c, Fn fn) {
  Tensor out = Tensor::zeros_like(a);
  dispatch(a.dtype(), [&]<class T>(T) {
    auto x = a.view<T>();
    auto y = b.view<T>();
    auto z = c.view<T>();
    auto o = out.mutable_view<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(fn(x[i], y[i], z[i]));
  });
  return out;
}

Tensor transpose2d(const Tensor& a) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m}, a.dtype());
  dispatch(a.dtype(), [&]<class T>(T) {
    auto src = a.view<T>();
    auto dst = out.mutable_view<T>();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }
  });
  return out;
}

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n}, a.dtype());
  dispatch(a.dtype(), [&]<class T>(T) {
    kernels::matmul<T>(m, k, n, a.view<T>(), b.view<T>(), out.mutable_view<T>());
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  dispatch(x.dtype(), [&]<class T>(T) {
    for (T v : x.view<T>()) acc += static_cast<double>(v);
  });
  return Tensor::scalar(acc, x.dtype());
}

Conv2dGeometry conv_geometry(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (x.dim(2) + 2 * pad < w.dim(2) || x.dim(3) + 2 * pad < w.dim(3)) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  Conv2dGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = w.dim(0);
  g.kernel_h = w.dim(2);
  g.kernel_w = w.dim(3);
  g.stride = stride;
  g.pad = pad;
  return g;
}

Pool2dGeometry pool_geometry(const Tensor& x, std::size_t window, std::size_t stride, const char* op) {
  require_rank(x, 4, op);
  if (window == 0 || stride == 0 || window > x.dim(2) || window > x.dim(3)) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(window) + " invalid for " + shape_str(x.shape()));
  }
  return Pool2dGeometry{x.dim(0), x.dim(1), x.dim(2), x.dim(3), window, stride};
}

// Number of elements per channel slice for [N,C] or [N,C,H,W].
std::size_t spatial_size(const Tensor& x) {
  std::size_t s = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) s *= x.dim(i);
  return s;
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  return t.record("add", map2(a.value(), b.value(), [](auto x, auto y) { return x + y; }), {a, b},
                  [](const Tensor& g) { return Grads{g, g}; });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  return t.record("sub", map2(a.value(), b.value(), [](auto x, auto y) { return x - y; }), {a, b},
                  [](const Tensor& g) { return Grads{g, map1(g, [](auto v) { return -v; })}; });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor av = a.value(), bv = b.value();
  return t.record("mul", map2(av, bv, [](auto x, auto y) { return x * y; }), {a, b}, [av, bv](const Tensor& g) {
    return Grads{map2(g, bv, [](auto u, auto y) { return u * y; }), map2(g, av, [](auto u, auto x) { return u * x; })};
  });
}

Var div(Var a, Var b) {
  Tape& t = same_tape(a, b, "div");
  require_same_shape(a.value(), b.value(), "div");
  Tensor av = a.value(), bv = b.value();
  return t.record("div", map2(av, bv, [](auto x, auto y) { return x / y; }), {a, b}, [av, bv](const Tensor& g) {
    return Grads{map2(g, bv, [](auto u, auto y) { return u / y; }),
                 map3(g, av, bv, [](auto u, auto x, auto y) { return -u * x / (y * y); })};
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  return t.record("scale", map1(a.value(), [factor](auto x) { return x * factor; }), {a}, [factor](const Tensor& g) {
    return Grads{map1(g, [factor](auto u) { return u * factor; })};
  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  require_rank(a.value(), 2, "matmul");
  require_rank(b.value(), 2, "matmul");
  if (a.value().dim(1) != b.value().dim(0) || a.dtype() != b.dtype()) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor av = a.value(), bv = b.value();
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return t.record("matmul", matmul_values(av, bv), {a, b}, [av, bv, need_a, need_b](const Tensor& g) {
    Grads out(2);
    if (need_a) out[0] = matmul_values(g, transpose2d(bv));
    if (need_b) out[1] = matmul_values(transpose2d(av), g);
    return out;
  });
}

Var conv2d(Var x, Var weight, std::size_t stride, std::size_t pad) {
  Tape& t = same_tape(x, weight, "conv2d");
  if (x.dtype() != weight.dtype()) throw ShapeError("conv2d: dtype mismatch");
  const Conv2dGeometry geo = conv_geometry(x.value(), weight.value(), stride, pad);
  Tensor xv = x.value(), wv = weight.value();
  Tensor y({geo.batch, geo.out_channels, geo.out_height(), geo.out_width()}, xv.dtype());
  dispatch(xv.dtype(), [&]<class T>(T) {
    kernels::conv2d_forward<T>(geo, xv.view<T>(), wv.view<T>(), y.mutable_view<T>());
  });
  const bool need_x = x.requires_grad(), need_w = weight.requires_grad();
  return t.record("conv2d", std::move(y), {x, weight}, [geo, xv, wv, need_x, need_w](const Tensor& g) {
    Grads out(2);
    dispatch(g.dtype(), [&]<class T>(T) {
      if (need_x) {
        Tensor gx = Tensor::zeros_like(xv);
        kernels::conv2d_backward_input<T>(geo, wv.view<T>(), g.view<T>(), gx.mutable_view<T>());
        out[0] = std::move(gx);
      }
      if (need_w) {
        Tensor gw = Tensor::zeros_like(wv);
        kernels::conv2d_backward_weight<T>(geo, xv.view<T>(), g.view<T>(), gw.mutable_view<T>());
        out[1] = std::move(gw);
      }
    });
    return out;
  });
}

Var channel_affine(Var x, Var scale_v, Var bias) {
  Tape& t = same_tape(x, scale_v, "channel_affine");
  same_tape(x, bias, "channel_affine");
  const Tensor &xv = x.value(), &sv = scale_v.value(), &bv = bias.value();
  if (xv.rank() < 2 || sv.rank() != 1 || bv.rank() != 1 || sv.dim(0) != xv.dim(1) || bv.dim(0) != xv.dim(1) ||
      sv.dtype() != xv.dtype() || bv.dtype() != xv.dtype()) {
    throw ShapeError("channel_affine: x " + shape_str(xv.shape()) + ", scale " + shape_str(sv.shape()) + ", bias " +
                     shape_str(bv.shape()));
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = spatial_size(xv);
  Tensor y = Tensor::zeros_like(xv);
  dispatch(xv.dtype(), [&]<class T>(T) {
    auto in = xv.view<T>();
    auto s = sv.view<T>();
    auto b = bv.view<T>();
    auto o = y.mutable_view<T>();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (i * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) o[base + p] = in[base + p] * s[ch] + b[ch];
      }
    }
  });
  Tensor xs = xv, ss = sv;
  return t.record("channel_affine", std::move(y), {x, scale_v, bias}, [xs, ss, n, c, hw](const Tensor& g) {
    Tensor gx = Tensor::zeros_like(xs), gs = Tensor::zeros_like(ss), gb = Tensor::zeros_like(ss);
    dispatch(g.dtype(), [&]<class T>(T) {
      auto up = g.view<T>();
      auto in = xs.view<T>();
      auto s = ss.view<T>();
      auto dx = gx.mutable_view<T>();
      auto ds = gs.mutable_view<T>();
      auto db = gb.mutable_view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (i * c + ch) * hw;
          T acc_s = 0, acc_b = 0;
          for (std::size_t p = 0; p < hw; ++p) {
            dx[base + p] = up[base + p] * s[ch];
            acc_s += up[base + p] * in[base + p];
            acc_b += up[base + p];
          }
          ds[ch] += acc_s;
          db[ch] += acc_b;
        }
      }
    });
    return Grads{gx, gs, gb};
  });
}

Var relu(Var x) {
  Tape& t = tape_of(x);
  Tensor xv = x.value();
  return t.record("relu", map1(xv, [](auto v) { return v > 0 ? v : decltype(v)(0); }), {x}, [xv](const Tensor& g) {
    return Grads{map2(g, xv, [](auto u, auto v) { return v > 0 ? u : decltype(u)(0); })};
  });
}

Var max_pool2d(Var x, std::size_t window, std::size_t stride) {
  Tape& t = tape_of(x);
  const Pool2dGeometry geo = pool_geometry(x.value(), window, stride, "max_pool2d");
  Tensor y({geo.batch, geo.channels, geo.out_height(), geo.out_width()}, x.dtype());
  std::vector<std::size_t> argmax(y.numel());
  dispatch(x.dtype(), [&]<class T>(T) {
    kernels::max_pool2d_forward<T>(geo, x.value().view<T>(), y.mutable_view<T>(), argmax);
  });
  Shape in_shape = x.shape();
  DType dt = x.dtype();
  return t.record("max_pool2d", std::move(y), {x}, [argmax = std::move(argmax), in_shape, dt](const Tensor& g) {
    Tensor gx(in_shape, dt);
    dispatch(dt, [&]<class T>(T) {
      auto up = g.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t o = 0; o < up.size(); ++o) dx[argmax[o]] += up[o];
    });
    return Grads{gx};
  });
}

Var avg_pool2d(Var x, std::size_t window, std::size_t stride) {
  Tape& t = tape_of(x);
  const Pool2dGeometry geo = pool_geometry(x.value(), window, stride, "avg_pool2d");
  Tensor y({geo.batch, geo.channels, geo.out_height(), geo.out_width()}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    kernels::avg_pool2d_forward<T>(geo, x.value().view<T>(), y.mutable_view<T>());
  });
  Shape in_shape = x.shape();
  return t.record("avg_pool2d", std::move(y), {x}, [geo, in_shape](const Tensor& g) {
    Tensor gx(in_shape, g.dtype());
    dispatch(g.dtype(), [&]<class T>(T) { kernels::avg_pool2d_backward<T>(geo, g.view<T>(), gx.mutable_view<T>()); });
    return Grads{gx};
  });
}

Var global_avg_pool(Var x) {
  Tape& t = tape_of(x);
  require_rank(x.value(), 4, "global_avg_pool");
  const std::size_t n = x.value().dim(0), c = x.value().dim(1), hw = spatial_size(x.value());
  Tensor y({n, c}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.value().view<T>();
    auto o = y.mutable_view<T>();
    for (std::size_t i = 0; i < n * c; ++i) {
      T acc = 0;
      for (std::size_t p = 0; p < hw; ++p) acc += in[i * hw + p];
      o[i] = acc / static_cast<T>(hw);
    }
  });
  Shape in_shape = x.shape();
  return t.record("global_avg_pool", std::move(y), {x}, [in_shape, n, c, hw](const Tensor& g) {
    Tensor gx(in_shape, g.dtype());
    dispatch(g.dtype(), [&]<class T>(T) {
      auto up = g.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t i = 0; i < n * c; ++i) {
        const T v = up[i] / static_cast<T>(hw);
        for (std::size_t p = 0; p < hw; ++p) dx[i * hw + p] = v;
      }
    });
    return Grads{gx};
  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  Shape in_shape = x.shape();
  return t.record("reshape", x.value().reshaped(std::move(shape)), {x},
                  [in_shape](const Tensor& g) { return Grads{g.reshaped(in_shape)}; });
}

Var flatten(Var x) {
  if (x.shape().empty()) throw ShapeError("flatten of rank-0 tensor");
  const std::size_t n = x.shape()[0];
  return reshape(x, {n, n == 0 ? 0 : x.value().numel() / n});
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = same_tape(x, weight, "linear");
  same_tape(x, bias, "linear");
  const Tensor &xv = x.value(), &wv = weight.value(), &bv = bias.value();
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || wv.dim(1) != xv.dim(1) || bv.dim(0) != wv.dim(0) ||
      wv.dtype() != xv.dtype() || bv.dtype() != xv.dtype()) {
    throw ShapeError("linear: x " + shape_str(xv.shape()) + ", weight " + shape_str(wv.shape()) + ", bias " +
                     shape_str(bv.shape()));
  }
  const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  Tensor y({n, out}, xv.dtype());
  dispatch(xv.dtype(), [&]<class T>(T) {
    auto X = xv.view<T>();
    auto W = wv.view<T>();
    auto B = bv.view<T>();
    auto Y = y.mutable_view<T>();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < out; ++o) {
        T acc = B[o];
        for (std::size_t k = 0; k < in; ++k) acc += X[i * in + k] * W[o * in + k];
        Y[i * out + o] = acc;
      }
    }
  });
  Tensor xs = xv, ws = wv, bs = bv;
  return t.record("linear", std::move(y), {x, weight, bias}, [xs, ws, bs, n, in, out](const Tensor& g) {
    Tensor gx = Tensor::zeros_like(xs), gw = Tensor::zeros_like(ws), gb = Tensor::zeros_like(bs);
    dispatch(g.dtype(), [&]<class T>(T) {
      auto G = g.view<T>();
      auto X = xs.view<T>();
      auto W = ws.view<T>();
      auto dX = gx.mutable_view<T>();
      auto dW = gw.mutable_view<T>();
      auto dB = gb.mutable_view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t o = 0; o < out; ++o) {
          const T u = G[i * out + o];
          dB[o] += u;
          for (std::size_t k = 0; k < in; ++k) {
            dX[i * in + k] += u * W[o * in + k];
            dW[o * in + k] += u * X[i * in + k];
          }
        }
      }
    });
    return Grads{gx, gw, gb};
  });
}

namespace {

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor y = Tensor::zeros_like(x);
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.view<T>();
    auto o = y.mutable_view<T>();
    for (std::size_t i = 0; i < n; ++i) {
      T mx = in[i * c];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[i * c + j]);
      T total = 0;
      for (std::size_t j = 0; j < c; ++j) total += (o[i * c + j] = std::exp(in[i * c + j] - mx));
      for (std::size_t j = 0; j < c; ++j) o[i * c + j] /= total;
    }
  });
  return y;
}

Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor y = Tensor::zeros_like(x);
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.view<T>();
    auto o = y.mutable_view<T>();
    for (std::size_t i = 0; i < n; ++i) {
      T mx = in[i * c];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[i * c + j]);
      T total = 0;
      for (std::size_t j = 0; j < c; ++j) total += std::exp(in[i * c + j] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t j = 0; j < c; ++j) o[i * c + j] = in[i * c + j] - lse;
    }
  });
  return y;
}

}  // namespace

Var softmax(Var x) {
  Tape& t = tape_of(x);
  require_rank(x.value(), 2, "softmax");
  Tensor y = softmax_rows(x.value());
  const std::size_t n = y.dim(0), c = y.dim(1);
  return t.record("softmax", y, {x}, [y, n, c](const Tensor& g) {
    Tensor gx = Tensor::zeros_like(y);
    dispatch(g.dtype(), [&]<class T>(T) {
      auto up = g.view<T>();
      auto s = y.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        T inner = 0;
        for (std::size_t j = 0; j < c; ++j) inner += up[i * c + j] * s[i * c + j];
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] = s[i * c + j] * (up[i * c + j] - inner);
      }
    });
    return Grads{gx};
  });
}

Var log_softmax(Var x) {
  Tape& t = tape_of(x);
  require_rank(x.value(), 2, "log_softmax");
  Tensor y = log_softmax_rows(x.value());
  const std::size_t n = y.dim(0), c = y.dim(1);
  return t.record("log_softmax", y, {x}, [y, n, c](const Tensor& g) {
    Tensor gx = Tensor::zeros_like(y);
    dispatch(g.dtype(), [&]<class T>(T) {
      auto up = g.view<T>();
      auto ls = y.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        T total = 0;
        for (std::size_t j = 0; j < c; ++j) total += up[i * c + j];
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] = up[i * c + j] - std::exp(ls[i * c + j]) * total;
      }
    });
    return Grads{gx};
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Tape& t = tape_of(logits);
  require_rank(logits.value(), 2, "cross_entropy");
  const std::size_t n = logits.value().dim(0), c = logits.value().dim(1);
  if (labels.size() != n || n == 0) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ShapeError("cross_entropy: label out of range");
  }
  Tensor ls = log_softmax_rows(logits.value());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) loss -= ls.at(i * c + static_cast<std::size_t>(labels[i]));
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return t.record("cross_entropy", Tensor::scalar(loss, logits.dtype()), {logits}, [ls, lab, n, c](const Tensor& g) {
    Tensor gx = Tensor::zeros_like(ls);
    const double up = g.item() / static_cast<double>(n);
    dispatch(ls.dtype(), [&]<class T>(T) {
      auto l = ls.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        // p_y - 1 is formed as -sum_{j != y} p_j: at high confidence 1 - p_y
        // rounds to zero in f32 and would drop the true-class term.
        const auto y = static_cast<std::size_t>(lab[i]);
        double rest = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          if (j == y) continue;
          const double p = std::exp(static_cast<double>(l[i * c + j]));
          rest += p;
          dx[i * c + j] = static_cast<T>(up * p);
        }
        dx[i * c + y] = static_cast<T>(-up * rest);
      }
    });
    return Grads{gx};
  });
}

Var l2_norm(Var x) {
  Tape& t = tape_of(x);
  Tensor xv = x.value();
  double ss = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) ss += xv.at(i) * xv.at(i);
  const double norm = std::sqrt(ss);
  return t.record("l2_norm", Tensor::scalar(norm, xv.dtype()), {x}, [xv, norm](const Tensor& g) {
    if (norm == 0.0) return Grads{Tensor::zeros_like(xv)};
    const double f = g.item() / norm;
    return Grads{map1(xv, [f](auto v) { return v * f; })};
  });
}

Var row_l2_norm(Var x) {
  Tape& t = tape_of(x);
  require_rank(x.value(), 2, "row_l2_norm");
  Tensor xv = x.value();
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor norms({n}, xv.dtype());
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xv.at(i * d + j) * xv.at(i * d + j);
    norms.set(i, std::sqrt(ss));
  }
  return t.record("row_l2_norm", norms, {x}, [xv, norms, n, d](const Tensor& g) {
    Tensor gx = Tensor::zeros_like(xv);
    dispatch(xv.dtype(), [&]<class T>(T) {
      auto in = xv.view<T>();
      auto nr = norms.view<T>();
      auto up = g.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        if (nr[i] == T(0)) continue;
        const T f = up[i] / nr[i];
        for (std::size_t j = 0; j < d; ++j) dx[i * d + j] = in[i * d + j] * f;
      }
    });
    return Grads{gx};
  });
}

Var dot(Var a, Var b) {
  Tape& t = same_tape(a, b, "dot");
  require_same_shape(a.value(), b.value(), "dot");
  Tensor av = a.value(), bv = b.value();
  double acc = 0.0;
  dispatch(av.dtype(), [&]<class T>(T) {
    auto x = av.view<T>();
    auto y = bv.view<T>();
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  });
  return t.record("dot", Tensor::scalar(acc, av.dtype()), {a, b}, [av, bv](const Tensor& g) {
    const double u = g.item();
    return Grads{map1(bv, [u](auto v) { return v * u; }), map1(av, [u](auto v) { return v * u; })};
  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  Shape in_shape = x.shape();
  return t.record("sum", sum_all(x.value()), {x}, [in_shape](const Tensor& g) {
    return Grads{Tensor::full(in_shape, g.item(), g.dtype())};
  });
}

Var mean(Var x) {
  Tape& t = tape_of(x);
  Shape in_shape = x.shape();
  const double n = static_cast<double>(x.value().numel());
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return t.record("mean", Tensor::scalar(sum_all(x.value()).item() / n, x.dtype()), {x}, [in_shape, n](const Tensor& g) {
    return Grads{Tensor::full(in_shape, g.item() / n, g.dtype())};
  });
}

Var channel_normalize(Var x) {
  Tape& t = tape_of(x);
  require_rank(x.value(), 4, "channel_normalize");
  Tensor xv = x.value();
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = spatial_size(xv);
  Tensor y = Tensor::zeros_like(xv);
  Tensor norms({n, hw}, xv.dtype());
  dispatch(xv.dtype(), [&]<class T>(T) {
    auto in = xv.view<T>();
    auto o = y.mutable_view<T>();
    auto nr = norms.mutable_view<T>();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < hw; ++p) {
        double ss = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = in[(i * c + ch) * hw + p];
          ss += v * v;
        }
        const double norm = std::sqrt(ss);
        nr[i * hw + p] = static_cast<T>(norm);
        if (norm <= kDegenerateNorm) continue;
        for (std::size_t ch = 0; ch < c; ++ch) o[(i * c + ch) * hw + p] = static_cast<T>(in[(i * c + ch) * hw + p] / norm);
      }
    }
  });
  return t.record("channel_normalize", y, {x}, [y, norms, n, c, hw](const Tensor& g) {
    Tensor gx = Tensor::zeros_like(y);
    dispatch(y.dtype(), [&]<class T>(T) {
      auto up = g.view<T>();
      auto out = y.view<T>();
      auto nr = norms.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < hw; ++p) {
          const T norm = nr[i * hw + p];
          if (norm <= T(kDegenerateNorm)) continue;
          T inner = 0;
          for (std::size_t ch = 0; ch < c; ++ch) inner += out[(i * c + ch) * hw + p] * up[(i * c + ch) * hw + p];
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t k = (i * c + ch) * hw + p;
            dx[k] = (up[k] - out[k] * inner) / norm;
          }
        }
      }
    });
    return Grads{gx};
  });
}

Var instance_standardize(Var x, double eps) {
  Tape& t = tape_of(x);
  require_rank(x.value(), 4, "instance_standardize");
  if (!(eps > 0.0)) throw ShapeError("instance_standardize: eps must be > 0");
  Tensor xv = x.value();
  const std::size_t planes = xv.dim(0) * xv.dim(1), hw = spatial_size(xv);
  Tensor y = Tensor::zeros_like(xv);
  std::vector<double> inv(planes);
  dispatch(xv.dtype(), [&]<class T>(T) {
    auto in = xv.view<T>();
    auto o = y.mutable_view<T>();
    for (std::size_t q = 0; q < planes; ++q) {
      const T* p = in.data() + q * hw;
      double mu = 0.0;
      for (std::size_t k = 0; k < hw; ++k) mu += p[k];
      mu /= static_cast<double>(hw);
      double var = 0.0;
      for (std::size_t k = 0; k < hw; ++k) var += (p[k] - mu) * (p[k] - mu);
      var /= static_cast<double>(hw);
      inv[q] = 1.0 / std::sqrt(var + eps);
      for (std::size_t k = 0; k < hw; ++k) o[q * hw + k] = static_cast<T>((p[k] - mu) * inv[q]);
    }
  });
  return t.record("instance_standardize", y, {x}, [y, inv, planes, hw](const Tensor& g) {
    // dx = (g - mean(g) - y * mean(g * y)) / s, per plane.
    Tensor gx = Tensor::zeros_like(y);
    dispatch(y.dtype(), [&]<class T>(T) {
      auto up = g.view<T>();
      auto out = y.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t q = 0; q < planes; ++q) {
        double mg = 0.0, mgy = 0.0;
        for (std::size_t k = 0; k < hw; ++k) {
          mg += up[q * hw + k];
          mgy += up[q * hw + k] * out[q * hw + k];
        }
        mg /= static_cast<double>(hw);
        mgy /= static_cast<double>(hw);
        for (std::size_t k = 0; k < hw; ++k) {
          const std::size_t i = q * hw + k;
          dx[i] = static_cast<T>((up[i] - mg - out[i] * mgy) * inv[q]);
        }
      }
    });
    return Grads{gx};
  });
}

Var cosine_similarity(Var a, Var b) {
  Tape& t = same_tape(a, b, "cosine_similarity");
  require_same_shape(a.value(), b.value(), "cosine_similarity");
  Tensor av = a.value(), bv = b.value();
  if (av.rank() != 1 && av.rank() != 2) {
    throw ShapeError("cosine_similarity: expected vectors or [N,D] rows, got " + shape_str(av.shape()));
  }
  const bool rows = av.rank() == 2;
  const std::size_t n = rows ? av.dim(0) : 1;
  const std::size_t d = rows ? av.dim(1) : av.dim(0);
  std::vector<double> na(n), nb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    double saa = 0, sbb = 0, sab = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = av.at(i * d + j), y = bv.at(i * d + j);
      saa += x * x;
      sbb += y * y;
      sab += x * y;
    }
    na[i] = std::sqrt(saa);
    nb[i] = std::sqrt(sbb);
    ab[i] = sab;
    if (na[i] < kDegenerateNorm || nb[i] < kDegenerateNorm) {
      throw NumericError("cosine_similarity: degenerate embedding (norm below 1e-12) in row " + std::to_string(i));
    }
  }
  Tensor out(rows ? Shape{n} : Shape{1}, av.dtype());
  for (std::size_t i = 0; i < n; ++i) out.set(i, ab[i] / (na[i] * nb[i]));
  return t.record("cosine_similarity", out, {a, b}, [av, bv, na, nb, out, n, d](const Tensor& g) {
    Tensor ga = Tensor::zeros_like(av), gb = Tensor::zeros_like(bv);
    dispatch(av.dtype(), [&]<class T>(T) {
      auto x = av.view<T>();
      auto y = bv.view<T>();
      auto up = g.view<T>();
      auto dA = ga.mutable_view<T>();
      auto dB = gb.mutable_view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        const double cs = out.at(i), u = up[i], inv = 1.0 / (na[i] * nb[i]);
        const double ka = cs / (na[i] * na[i]), kb = cs / (nb[i] * nb[i]);
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t k = i * d + j;
          dA[k] = static_cast<T>(u * (y[k] * inv - x[k] * ka));
          dB[k] = static_cast<T>(u * (x[k] * inv - y[k] * kb));
        }
      }
    });
    return Grads{ga, gb};
  });
}

Var concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_columns of zero tensors");
  Tape& t = tape_of(parts[0]);
  const std::size_t n = parts[0].value().rank() == 2 ? parts[0].value().dim(0) : 0;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw Error("concat_columns: operands live on different tapes");
    if (p.value().rank() != 2 || p.value().dim(0) != n || p.dtype() != parts[0].dtype()) {
      throw ShapeError("concat_columns: part " + shape_str(p.shape()) + " incompatible");
    }
    widths.push_back(p.value().dim(1));
    total += widths.back();
  }
  Tensor y({n, total}, parts[0].dtype());
  dispatch(y.dtype(), [&]<class T>(T) {
    auto o = y.mutable_view<T>();
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto src = parts[k].value().view<T>();
      for (std::size_t i = 0; i < n; ++i) {
        std::copy(src.begin() + i * widths[k], src.begin() + (i + 1) * widths[k], o.begin() + i * total + off);
      }
      off += widths[k];
    }
  });
  return t.record("concat_columns", std::move(y), parts, [widths, n, total](const Tensor& g) {
    Grads out;
    std::size_t off = 0;
    for (std::size_t w : widths) {
      Tensor part({n, w}, g.dtype());
      dispatch(g.dtype(), [&]<class T>(T) {
        auto src = g.view<T>();
        auto dst = part.mutable_view<T>();
        for (std::size_t i = 0; i < n; ++i) {
          std::copy(src.begin() + i * total + off, src.begin() + i * total + off + w, dst.begin() + i * w);
        }
      });
      out.emplace_back(std::move(part));
      off += w;
    }
    return out;
  });
}

Var resize_pad(Var x, std::span<const ResizePad> params) {
  Tape& t = tape_of(x);
  require_rank(x.value(), 4, "resize_pad");
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (params.size() != n) throw ShapeError("resize_pad: one parameter set per sample required");
  // For each output pixel, the flat input index it copies (or npos for padding).
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> source(xv.numel(), npos);
  for (std::size_t i = 0; i < n; ++i) {
    const ResizePad& p = params[i];
    if (p.size == 0 || p.top + p.size > h || p.left + p.size > w) {
      throw ShapeError("resize_pad: resized image does not fit the canvas");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t oy = 0; oy < p.size; ++oy) {
        const std::size_t sy = oy * h / p.size;
        for (std::size_t ox = 0; ox < p.size; ++ox) {
          const std::size_t sx = ox * w / p.size;
          source[((i * c + ch) * h + oy + p.top) * w + ox + p.left] = ((i * c + ch) * h + sy) * w + sx;
        }
      }
    }
  }
  Tensor y = Tensor::zeros_like(xv);
  dispatch(xv.dtype(), [&]<class T>(T) {
    auto in = xv.view<T>();
    auto o = y.mutable_view<T>();
    for (std::size_t k = 0; k < o.size(); ++k) o[k] = source[k] == npos ? T(0) : in[source[k]];
  });
  Shape in_shape = xv.shape();
  return t.record("resize_pad", std::move(y), {x}, [source = std::move(source), in_shape](const Tensor& g) {
    Tensor gx(in_shape, g.dtype());
    dispatch(g.dtype(), [&]<class T>(T) {
      auto up = g.view<T>();
      auto dx = gx.mutable_view<T>();
      for (std::size_t k = 0; k < up.size(); ++k) {
        if (source[k] != npos) dx[source[k]] += up[k];
      }
    });
    return Grads{gx};
  });
}

}  // namespace zp::ops
