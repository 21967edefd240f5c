#include "zeropur/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace zp {

namespace {

struct Planes {
  std::size_t count;
  std::size_t height;
  std::size_t width;
};

Planes planes_of(const Tensor& t, const char* op) {
  if (t.rank() < 2) throw ShapeError(std::string(op) + ": expected an image tensor, got " + shape_str(t.shape()));
  const std::size_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  return {h * w == 0 ? 0 : t.numel() / (h * w), h, w};
}

// tap_source[o * taps + k] = input index feeding output o at tap k along one axis.
std::vector<std::size_t> reflect_table(std::size_t n, std::size_t radius) {
  const std::size_t taps = 2 * radius + 1;
  std::vector<std::size_t> table(n * taps);
  for (std::size_t o = 0; o < n; ++o) {
    for (std::size_t k = 0; k < taps; ++k) {
      table[o * taps + k] = reflect_index(static_cast<long>(o + k) - static_cast<long>(radius), n);
    }
  }
  return table;
}

// One separable pass (forward or adjoint) along rows (axis = 1) or columns (axis = 0).
template <class T>
void gaussian_pass(std::span<const T> in, std::span<T> out, const Planes& p, const std::vector<double>& taps,
                   bool along_width, bool adjoint) {
  const std::size_t radius = taps.size() / 2;
  const std::size_t n = along_width ? p.width : p.height;
  const auto table = reflect_table(n, radius);
  std::fill(out.begin(), out.end(), T(0));
  const std::size_t plane = p.height * p.width;
  for (std::size_t c = 0; c < p.count; ++c) {
    for (std::size_t y = 0; y < p.height; ++y) {
      for (std::size_t x = 0; x < p.width; ++x) {
        const std::size_t o = along_width ? x : y;
        const std::size_t dst = c * plane + y * p.width + x;
        for (std::size_t k = 0; k < taps.size(); ++k) {
          const std::size_t s = table[o * taps.size() + k];
          const std::size_t src = along_width ? c * plane + y * p.width + s : c * plane + s * p.width + x;
          if (adjoint) {
            out[src] += static_cast<T>(taps[k]) * in[dst];
          } else {
            out[dst] += static_cast<T>(taps[k]) * in[src];
          }
        }
      }
    }
  }
}

Tensor gaussian_linear(const Tensor& images, double sigma, bool adjoint) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_blur: sigma must be positive");
  const Planes p = planes_of(images, "gaussian_blur");
  const auto taps = gaussian_kernel(sigma);
  Tensor tmp = Tensor::zeros_like(images), out = Tensor::zeros_like(images);
  dispatch(images.dtype(), [&]<class T>(T) {
    // The two passes commute; the adjoint runs them in reverse order for symmetry.
    gaussian_pass<T>(images.view<T>(), tmp.mutable_view<T>(), p, taps, !adjoint, adjoint);
    gaussian_pass<T>(tmp.view<T>(), out.mutable_view<T>(), p, taps, adjoint, adjoint);
  });
  return out;
}

template <class Fn>
Tensor map_pair(const Tensor& a, const Tensor& b, const char* op, Fn fn) {
  require_same_shape(a, b, op);
  Tensor out = Tensor::zeros_like(a);
  dispatch(a.dtype(), [&]<class T>(T) {
    auto x = a.view<T>();
    auto y = b.view<T>();
    auto o = out.mutable_view<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(fn(x[i], y[i]));
  });
  return out;
}

std::size_t sample_size(const Tensor& t) { return t.rank() == 0 || t.dim(0) == 0 ? 0 : t.numel() / t.dim(0); }

}  // namespace

void BlurOp::validate() const {
  switch (kind) {
    case BlurKind::identity:
      return;
    case BlurKind::gaussian:
      if (!(sigma > 0.0)) throw ConfigError("gaussian blur requires sigma > 0");
      return;
    case BlurKind::median:
      if (window != 3 && window != 5 && window != 7) throw ConfigError("median window must be 3, 5 or 7");
      return;
    case BlurKind::tvm:
      if (!(tv_weight > 0.0)) throw ConfigError("tvm weight must be positive");
      if (tv_iterations < 1) throw ConfigError("tvm iterations must be >= 1");
      return;
  }
}

std::string BlurOp::kind_name() const {
  switch (kind) {
    case BlurKind::identity:
      return "identity";
    case BlurKind::gaussian:
      return "gaussian";
    case BlurKind::median:
      return "median";
    case BlurKind::tvm:
      return "tvm";
  }
  return "?";
}

double BlurOp::level() const {
  switch (kind) {
    case BlurKind::gaussian:
      return sigma;
    case BlurKind::median:
      return window;
    case BlurKind::tvm:
      return tv_weight;
    default:
      return 0.0;
  }
}

std::string BlurOp::describe() const {
  std::ostringstream os;
  os << kind_name();
  switch (kind) {
    case BlurKind::gaussian:
      os << '(' << sigma << ')';
      break;
    case BlurKind::median:
      os << '(' << window << ')';
      break;
    case BlurKind::tvm:
      os << '(' << tv_weight << ',' << tv_iterations << ')';
      break;
    default:
      break;
  }
  return os.str();
}

BlurKind parse_blur_kind(const std::string& name) {
  if (name == "identity" || name == "none") return BlurKind::identity;
  if (name == "gaussian") return BlurKind::gaussian;
  if (name == "median") return BlurKind::median;
  if (name == "tvm") return BlurKind::tvm;
  throw ConfigError("unknown blur operator '" + name + "'");
}

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_kernel: sigma must be positive");
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> taps;
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    taps.push_back(std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma)));
    total += taps.back();
  }
  for (double& t : taps) t /= total;
  return taps;
}

Tensor gaussian_blur(const Tensor& images, double sigma) { return clip01(gaussian_linear(images, sigma, false)); }

Var gaussian_blur(Var images, double sigma) {
  Tensor out = gaussian_linear(images.value(), sigma, false);
  return images.tape()->record("gaussian_blur", std::move(out), {images}, [sigma](const Tensor& g) {
    return std::vector<std::optional<Tensor>>{gaussian_linear(g, sigma, true)};
  });
}

Tensor median_filter(const Tensor& images, int window) {
  if (window <= 0 || window % 2 == 0) throw ConfigError("median_filter: window must be odd and positive");
  const Planes p = planes_of(images, "median_filter");
  const long r = window / 2;
  Tensor out = Tensor::zeros_like(images);
  dispatch(images.dtype(), [&]<class T>(T) {
    auto in = images.view<T>();
    auto o = out.mutable_view<T>();
    std::vector<T> buf(static_cast<std::size_t>(window * window));
    const std::size_t plane = p.height * p.width;
    for (std::size_t c = 0; c < p.count; ++c) {
      for (std::size_t y = 0; y < p.height; ++y) {
        for (std::size_t x = 0; x < p.width; ++x) {
          std::size_t k = 0;
          for (long dy = -r; dy <= r; ++dy) {
            const std::size_t sy = reflect_index(static_cast<long>(y) + dy, p.height);
            for (long dx = -r; dx <= r; ++dx) {
              buf[k++] = in[c * plane + sy * p.width + reflect_index(static_cast<long>(x) + dx, p.width)];
            }
          }
          auto mid = buf.begin() + static_cast<long>(buf.size() / 2);
          std::nth_element(buf.begin(), mid, buf.end());
          o[c * plane + y * p.width + x] = *mid;
        }
      }
    }
  });
  return out;
}

Tensor tvm(const Tensor& images, double weight, int iterations) {
  if (!(weight > 0.0)) throw ConfigError("tvm: weight must be positive");
  if (iterations < 1) throw ConfigError("tvm: iterations must be >= 1");
  const Planes p = planes_of(images, "tvm");
  const std::size_t h = p.height, w = p.width, plane = h * w;
  constexpr double tau = 0.25;
  Tensor out = Tensor::zeros_like(images);
  std::vector<double> f(plane), px(plane), py(plane), div(plane), gx(plane), gy(plane);
  auto divergence = [&]() {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        double d = 0.0;
        d += (x + 1 < w ? px[i] : 0.0) - (x > 0 ? px[i - 1] : 0.0);
        d += (y + 1 < h ? py[i] : 0.0) - (y > 0 ? py[i - w] : 0.0);
        div[i] = d;
      }
    }
  };
  for (std::size_t c = 0; c < p.count; ++c) {
    for (std::size_t i = 0; i < plane; ++i) f[i] = images.at(c * plane + i);
    std::fill(px.begin(), px.end(), 0.0);
    std::fill(py.begin(), py.end(), 0.0);
    for (int it = 0; it < iterations; ++it) {
      divergence();
      // v = div p - f / weight; p <- (p + tau grad v) / (1 + tau |grad v|)
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t i = y * w + x;
          const double v = div[i] - f[i] / weight;
          gx[i] = x + 1 < w ? (div[i + 1] - f[i + 1] / weight) - v : 0.0;
          gy[i] = y + 1 < h ? (div[i + w] - f[i + w] / weight) - v : 0.0;
        }
      }
      for (std::size_t i = 0; i < plane; ++i) {
        const double denom = 1.0 + tau * std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
        px[i] = (px[i] + tau * gx[i]) / denom;
        py[i] = (py[i] + tau * gy[i]) / denom;
      }
    }
    divergence();
    for (std::size_t i = 0; i < plane; ++i) {
      out.set(c * plane + i, std::clamp(f[i] - weight * div[i], 0.0, 1.0));
    }
  }
  return out;
}

Tensor apply_blur(const BlurOp& op, const Tensor& images) {
  op.validate();
  switch (op.kind) {
    case BlurKind::identity:
      return images;
    case BlurKind::gaussian:
      return gaussian_blur(images, op.sigma);
    case BlurKind::median:
      return median_filter(images, op.window);
    case BlurKind::tvm:
      return tvm(images, op.tv_weight, op.tv_iterations);
  }
  return images;
}

double total_variation(const Tensor& images) {
  const Planes p = planes_of(images, "total_variation");
  const std::size_t plane = p.height * p.width;
  double tv = 0.0;
  for (std::size_t c = 0; c < p.count; ++c) {
    for (std::size_t y = 0; y < p.height; ++y) {
      for (std::size_t x = 0; x < p.width; ++x) {
        const std::size_t i = c * plane + y * p.width + x;
        const double v = images.at(i);
        const double dx = x + 1 < p.width ? images.at(i + 1) - v : 0.0;
        const double dy = y + 1 < p.height ? images.at(i + p.width) - v : 0.0;
        tv += std::sqrt(dx * dx + dy * dy);
      }
    }
  }
  return tv;
}

Tensor project_linf(const Tensor& x, const Tensor& center, double eps) {
  if (eps < 0.0) throw ConfigError("project_linf: eps must be non-negative");
  return map_pair(x, center, "project_linf", [eps](auto v, auto c) {
    using T = decltype(v);
    return std::clamp<T>(v, c - static_cast<T>(eps), c + static_cast<T>(eps));
  });
}

Tensor project_l2(const Tensor& x, const Tensor& center, double eps) {
  if (eps < 0.0) throw ConfigError("project_l2: eps must be non-negative");
  require_same_shape(x, center, "project_l2");
  Tensor out = x.clone();
  const std::size_t n = x.rank() == 0 ? 0 : x.dim(0), d = sample_size(x);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = x.at(i * d + j) - center.at(i * d + j);
      ss += v * v;
    }
    const double norm = std::sqrt(ss);
    if (norm <= eps) continue;
    const double f = eps / norm;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = center.at(i * d + j);
      out.set(i * d + j, c + (x.at(i * d + j) - c) * f);
    }
  }
  return out;
}

Tensor clip01(const Tensor& x) {
  Tensor out = Tensor::zeros_like(x);
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.view<T>();
    auto o = out.mutable_view<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp<T>(in[i], T(0), T(1));
  });
  return out;
}

Tensor sign_step(const Tensor& x, const Tensor& direction, double step) {
  return map_pair(x, direction, "sign_step", [step](auto v, auto d) {
    using T = decltype(v);
    const T s = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
    return v + static_cast<T>(step) * s;
  });
}

Tensor normalized_step(const Tensor& x, const Tensor& direction, double step) {
  require_same_shape(x, direction, "normalized_step");
  Tensor out = x.clone();
  const std::size_t n = x.rank() == 0 ? 0 : x.dim(0), d = sample_size(x);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += direction.at(i * d + j) * direction.at(i * d + j);
    if (ss == 0.0) continue;
    const double f = step / std::sqrt(ss);
    for (std::size_t j = 0; j < d; ++j) out.set(i * d + j, x.at(i * d + j) + f * direction.at(i * d + j));
  }
  return out;
}

double linf_distance(const Tensor& x, const Tensor& center) { return max_abs_diff(x, center); }

bool within_linf_ball(const Tensor& x, const Tensor& center, double eps) {
  require_same_shape(x, center, "within_linf_ball");
  return dispatch(x.dtype(), [&]<class T>(T) {
    auto v = x.view<T>();
    auto c = center.view<T>();
    const T e = static_cast<T>(eps);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!(v[i] >= c[i] - e && v[i] <= c[i] + e)) return false;
    }
    return true;
  });
}

bool within_unit_range(const Tensor& x) {
  return dispatch(x.dtype(), [&]<class T>(T) {
    for (T v : x.view<T>()) {
      if (!(v >= T(0) && v <= T(1))) return false;
    }
    return true;
  });
}

}  // namespace zp
