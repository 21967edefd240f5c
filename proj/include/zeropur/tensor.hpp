#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "zeropur/error.hpp"

namespace zp {

enum class DType : std::uint8_t { f32, f64 };

/// Precision used by newly created tensors when none is given.
DType default_dtype();
void set_default_dtype(DType dtype);

/// Switches the default precision for the lifetime of the guard.
class DTypeGuard {
 public:
  explicit DTypeGuard(DType dtype) : previous_(default_dtype()) { set_default_dtype(dtype); }
  ~DTypeGuard() { set_default_dtype(previous_); }
  DTypeGuard(const DTypeGuard&) = delete;
  DTypeGuard& operator=(const DTypeGuard&) = delete;

 private:
  DType previous_;
};

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

const char* dtype_name(DType dtype);

/// Calls `fn(T{})` with T = float or double according to `dtype`.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn(float{});
  return fn(double{});
}

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array with value semantics. Copies share storage until one
/// side asks for mutable access (copy-on-write), so tensors handed to the tape
/// behave as immutable values.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}) {}
  explicit Tensor(Shape shape, DType dtype = default_dtype());

  static Tensor zeros(Shape shape, DType dtype = default_dtype()) { return Tensor(std::move(shape), dtype); }
  static Tensor full(Shape shape, double value, DType dtype = default_dtype());
  static Tensor from(Shape shape, std::span<const double> values, DType dtype = default_dtype());
  static Tensor from(Shape shape, std::initializer_list<double> values, DType dtype = default_dtype());
  static Tensor scalar(double value, DType dtype = default_dtype()) { return full({1}, value, dtype); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape(), other.dtype()); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return numel_; }
  DType dtype() const { return dtype_; }

  template <class T>
  std::span<const T> view() const {
    check_dtype(dtype_of<T>());
    if constexpr (std::is_same_v<T, float>) {
      return {f32_->data(), numel_};
    } else {
      return {f64_->data(), numel_};
    }
  }

  template <class T>
  std::span<T> mutable_view() {
    check_dtype(dtype_of<T>());
    if constexpr (std::is_same_v<T, float>) {
      if (f32_.use_count() > 1) f32_ = std::make_shared<std::vector<float>>(*f32_);
      return {f32_->data(), numel_};
    } else {
      if (f64_.use_count() > 1) f64_ = std::make_shared<std::vector<double>>(*f64_);
      return {f64_->data(), numel_};
    }
  }

  double at(std::size_t flat_index) const;
  void set(std::size_t flat_index, double value);
  /// Value of a single-element tensor.
  double item() const;
  std::vector<double> values() const;

  /// Same storage, new shape; the element count must match.
  Tensor reshaped(Shape shape) const;
  Tensor to(DType dtype) const;
  /// Deep copy that owns its storage.
  Tensor clone() const;

  /// Rows [begin, end) along axis 0.
  Tensor slice0(std::size_t begin, std::size_t end) const;
  /// Elementwise bitwise equality of shape, dtype and values.
  bool identical(const Tensor& other) const;
  bool all_finite() const;

 private:
  void check_dtype(DType requested) const;

  Shape shape_;
  std::size_t numel_ = 0;
  DType dtype_ = DType::f32;
  std::shared_ptr<std::vector<float>> f32_;
  std::shared_ptr<std::vector<double>> f64_;
};

/// Concatenate along axis 0; all parts must agree on the trailing dims and dtype.
Tensor concat0(std::span<const Tensor> parts);

/// Throws ShapeError unless `a` and `b` have identical shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

/// Throws NumericError naming `op` if `t` holds a non-finite value.
void require_finite(const Tensor& t, const char* op);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace zp
