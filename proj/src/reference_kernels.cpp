#include "zeropur/kernels.hpp"

#include <algorithm>

namespace zp::reference {

template <class T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t i = 0; i < g.kernel_h; ++i) {
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) || ix >= static_cast<long>(g.width)) continue;
                acc += w[((co * g.in_channels + ci) * g.kernel_h + i) * g.kernel_w + j] *
                       x[((n * g.in_channels + ci) * g.height + iy) * g.width + ix];
              }
            }
          }
          y[((n * g.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> w, std::span<const T> gy, std::span<T> gx) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  std::fill(gx.begin(), gx.end(), T(0));
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T up = gy[((n * g.out_channels + co) * oh + oy) * ow + ox];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t i = 0; i < g.kernel_h; ++i) {
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) || ix >= static_cast<long>(g.width)) continue;
                gx[((n * g.in_channels + ci) * g.height + iy) * g.width + ix] +=
                    up * w[((co * g.in_channels + ci) * g.kernel_h + i) * g.kernel_w + j];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy, std::span<T> gw) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  std::fill(gw.begin(), gw.end(), T(0));
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T up = gy[((n * g.out_channels + co) * oh + oy) * ow + ox];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t i = 0; i < g.kernel_h; ++i) {
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) || ix >= static_cast<long>(g.width)) continue;
                gw[((co * g.in_channels + ci) * g.kernel_h + i) * g.kernel_w + j] +=
                    up * x[((n * g.in_channels + ci) * g.height + iy) * g.width + ix];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void max_pool2d_forward(const Pool2dGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t p = 0; p < g.batch * g.channels; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        bool first = true;
        std::size_t best = 0;
        for (std::size_t i = 0; i < g.window; ++i) {
          for (std::size_t j = 0; j < g.window; ++j) {
            const std::size_t idx = (p * g.height + oy * g.stride + i) * g.width + ox * g.stride + j;
            if (first || x[idx] > x[best]) best = idx;
            first = false;
          }
        }
        y[(p * oh + oy) * ow + ox] = x[best];
        argmax[(p * oh + oy) * ow + ox] = best;
      }
    }
  }
}

template <class T>
void avg_pool2d_forward(const Pool2dGeometry& g, std::span<const T> x, std::span<T> y) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t p = 0; p < g.batch * g.channels; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc = 0;
        for (std::size_t i = 0; i < g.window; ++i) {
          for (std::size_t j = 0; j < g.window; ++j) acc += x[(p * g.height + oy * g.stride + i) * g.width + ox * g.stride + j];
        }
        y[(p * oh + oy) * ow + ox] = acc / static_cast<T>(g.window * g.window);
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
  template void avg_pool2d_forward<T>(const Pool2dGeometry&, std::span<const T>, std::span<T>);

ZP_INSTANTIATE(float)
ZP_INSTANTIATE(double)
#undef ZP_INSTANTIATE

}  // namespace zp::reference
