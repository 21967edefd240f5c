#pragma once

#include <cstddef>
#include <span>

namespace zp {

/// Geometry of a 2-D convolution over an NCHW batch with OIHW weights.
struct Conv2dGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_height() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
  std::size_t input_numel() const { return batch * in_channels * height * width; }
  std::size_t weight_numel() const { return out_channels * patch_size(); }
  std::size_t output_numel() const { return batch * out_channels * out_height() * out_width(); }
};

/// Geometry of a square-window pooling over an NCHW batch (no padding).
struct Pool2dGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t window = 2;
  std::size_t stride = 2;

  std::size_t out_height() const { return (height - window) / stride + 1; }
  std::size_t out_width() const { return (width - window) / stride + 1; }
};

// Production kernels: im2col + GEMM per image, OpenMP-parallel over the batch.
// Every image is processed independently, so results do not depend on the
// batch composition or on the number of threads.
namespace kernels {

/// C[m,n] = A[m,k] * B[k,n], all row-major.
template <class T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c);

template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);

/// Overwrites gx with dL/dx.
template <class T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> w, std::span<const T> gy, std::span<T> gx);

/// Overwrites gw with dL/dw; per-image contributions are summed in batch order.
template <class T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy, std::span<T> gw);

/// `argmax` receives the flat input index chosen for every output (first maximum wins ties).
template <class T>
void max_pool2d_forward(const Pool2dGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax);

template <class T>
void avg_pool2d_forward(const Pool2dGeometry& g, std::span<const T> x, std::span<T> y);

template <class T>
void avg_pool2d_backward(const Pool2dGeometry& g, std::span<const T> gy, std::span<T> gx);

}  // namespace kernels

// Serial direct-loop implementations used as test oracles and benchmark baselines.
namespace reference {

template <class T>
void matmul(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a, std::span<const T> b, std::span<T> c);

template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y);

template <class T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> w, std::span<const T> gy, std::span<T> gx);

template <class T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> x, std::span<const T> gy, std::span<T> gw);

template <class T>
void max_pool2d_forward(const Pool2dGeometry& g, std::span<const T> x, std::span<T> y, std::span<std::size_t> argmax);

template <class T>
void avg_pool2d_forward(const Pool2dGeometry& g, std::span<const T> x, std::span<T> y);

}  // namespace reference
}  // namespace zp
