#include "zeropur/kernels.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/Core>

namespace zp {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using Map = Eigen::Map<RowMatrix<T>>;

// cols[(c*kh + i)*kw + j, oy*ow + ox] = x[c, oy*s + i - pad, ox*s + j - pad] (zero outside).
template <class T>
void im2col(const Conv2dGeometry& g, const T* x, T* cols) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - pad;
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + iy * g.width;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const Conv2dGeometry& g, const T* cols, T* x) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* dst = plane + iy * g.width;
          const T* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - pad;
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline long as_long(std::size_t v) { return static_cast<long>(v); }

}  // namespace

namespace kernels {

template <class T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  ConstMap<T> A(a.data(), as_long(m), as_long(k));
  ConstMap<T> B(b.data(), as_long(k), as_long(n));
  Map<T> C(c.data(), as_long(m), as_long(n));
  C.noalias() = A * B;
}

template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  const std::size_t plane_out = g.out_height() * g.out_width();
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * plane_out;
  const long batch = as_long(g.batch);
  ConstMap<T> W(w.data(), as_long(g.out_channels), as_long(g.patch_size()));
#pragma omp parallel
  {
    std::vector<T> cols(g.patch_size() * plane_out);
#pragma omp for schedule(static)
    for (long n = 0; n < batch; ++n) {
      im2col(g, x.data() + n * in_stride, cols.data());
      ConstMap<T> C(cols.data(), as_long(g.patch_size()), as_long(plane_out));
      Map<T> Y(y.data() + n * out_stride, as_long(g.out_channels), as_long(plane_out));
      Y.noalias() = W * C;
    }
  }
}

template <class T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> w, std::span<const T> gy, std::span<T> gx) {
  const std::size_t plane_out = g.out_height() * g.out_width();
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * plane_out;
  const long batch = as_long(g.batch);
  ConstMap<T> W(w.data(), as_long(g.out_channels), as_long(g.patch_size()));
#pragma omp parallel
  {
    std::vector<T> cols(g.patch_size() * plane_out);
#pragma omp for schedule(static)
    for (long n = 0; n < batch; ++n) {
      Map<T> C(cols.data(), as_long(g.patch_size()), as_long(plane_out));
      ConstMap<T> GY(gy.data() + n * out_stride, as_long(g.out_channels), as_long(plane_out));
      C.noalias() = W.transpose() * GY;
      T* dst = gx.data() + n * in_stride;
      std::fill(dst, dst + in_stride, T(0));
      col2im_add(g, cols.data(), dst);
    }
  }
}

template <class T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy, std::span<T> gw) {
  const std::size_t plane_out = g.out_height() * g.out_width();
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * plane_out;
  const std::size_t wsize = g.weight_numel();
  const long batch = as_long(g.batch);
  std::vector<T> partial(g.batch * wsize);
#pragma omp parallel
  {
    std::vector<T> cols(g.patch_size() * plane_out);
#pragma omp for schedule(static)
    for (long n = 0; n < batch; ++n) {
      im2col(g, x.data() + n * in_stride, cols.data());
      ConstMap<T> C(cols.data(), as_long(g.patch_size()), as_long(plane_out));
      ConstMap<T> GY(gy.data() + n * out_stride, as_long(g.out_channels), as_long(plane_out));
      Map<T> GW(partial.data() + n * wsize, as_long(g.out_channels), as_long(g.patch_size()));
      GW.noalias() = GY * C.transpose();
    }
  }
  std::fill(gw.begin(), gw.end(), T(0));
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* src = partial.data() + n * wsize;
    for (std::size_t i = 0; i < wsize; ++i) gw[i] += src[i];
  }
}

template <class T>
void max_pool2d_forward(const Pool2dGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const long planes = as_long(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * g.height * g.width;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * g.stride * g.width + ox * g.stride;
        for (std::size_t i = 0; i < g.window; ++i) {
          for (std::size_t j = 0; j < g.window; ++j) {
            const std::size_t idx = base + (oy * g.stride + i) * g.width + ox * g.stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = static_cast<std::size_t>(p) * oh * ow + oy * ow + ox;
        y[o] = x[best];
        argmax[o] = best;
      }
    }
  }
}

template <class T>
void avg_pool2d_forward(const Pool2dGeometry& g, std::span<const T> x, std::span<T> y) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const T inv = T(1) / static_cast<T>(g.window * g.window);
  const long planes = as_long(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const T* src = x.data() + static_cast<std::size_t>(p) * g.height * g.width;
    T* dst = y.data() + static_cast<std::size_t>(p) * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc = 0;
        for (std::size_t i = 0; i < g.window; ++i) {
          for (std::size_t j = 0; j < g.window; ++j) acc += src[(oy * g.stride + i) * g.width + ox * g.stride + j];
        }
        dst[oy * ow + ox] = acc * inv;
      }
    }
  }
}

template <class T>
void avg_pool2d_backward(const Pool2dGeometry& g, std::span<const T> gy, std::span<T> gx) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const T inv = T(1) / static_cast<T>(g.window * g.window);
  const long planes = as_long(g.batch * g.channels);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    T* dst = gx.data() + static_cast<std::size_t>(p) * g.height * g.width;
    const T* src = gy.data() + static_cast<std::size_t>(p) * oh * ow;
    std::fill(dst, dst + g.height * g.width, T(0));
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T v = src[oy * ow + ox] * inv;
        for (std::size_t i = 0; i < g.window; ++i) {
          for (std::size_t j = 0; j < g.window; ++j) dst[(oy * g.stride + i) * g.width + ox * g.stride + j] += v;
        }
      }
    }
  }
}

#define ZP_INSTANTIATE(T)                                                                                      \
  template void matmul<T>(std::size_t, std::size_t, std::size_t, std::span<const T>, std::span<const T>,       \
                          std::span<T>);                                                                       \
  template void conv2d_forward<T>(const Conv2dGeometry&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void conv2d_backward_input<T>(const Conv2dGeometry&, std::span<const T>, std::span<const T>,        \
                                         std::span<T>);                                                        \
  template void conv2d_backward_weight<T>(const Conv2dGeometry&, std::span<const T>, std::span<const T>,       \
                                          std::span<T>);                                                       \
  template void max_pool2d_forward<T>(const Pool2dGeometry&, std::span<const T>, std::span<T>,                 \
                                      std::span<std::size_t>);                                                 \
  template void avg_pool2d_forward<T>(const Pool2dGeometry&, std::span<const T>, std::span<T>);                \
  template void avg_pool2d_backward<T>(const Pool2dGeometry&, std::span<const T>, std::span<T>);

ZP_INSTANTIATE(float)
ZP_INSTANTIATE(double)
#undef ZP_INSTANTIATE

}  // namespace kernels
}  // namespace zp
