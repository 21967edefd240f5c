#include "zeropur/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace zp {

namespace {
std::atomic<DType> g_default_dtype{DType::f32};
}

DType default_dtype() { return g_default_dtype.load(); }
void set_default_dtype(DType dtype) { g_default_dtype.store(dtype); }

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), numel_(shape_numel(shape_)), dtype_(dtype) {
  if (dtype_ == DType::f32) {
    f32_ = std::make_shared<std::vector<float>>(numel_, 0.0f);
  } else {
    f64_ = std::make_shared<std::vector<double>>(numel_, 0.0);
  }
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch(dtype, [&]<class T>(T) {
    auto v = t.mutable_view<T>();
    std::fill(v.begin(), v.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (values.size() != t.numel()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(t.shape()));
  }
  dispatch(dtype, [&]<class T>(T) {
    auto v = t.mutable_view<T>();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

void Tensor::check_dtype(DType requested) const {
  if (requested != dtype_) {
    throw Error(std::string("tensor holds ") + dtype_name(dtype_) + ", accessed as " + dtype_name(requested));
  }
}

double Tensor::at(std::size_t i) const {
  return dtype_ == DType::f32 ? static_cast<double>((*f32_)[i]) : (*f64_)[i];
}

void Tensor::set(std::size_t i, double value) {
  dispatch(dtype_, [&]<class T>(T) { mutable_view<T>()[i] = static_cast<T>(value); });
}

double Tensor::item() const {
  if (numel_ != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return at(0);
}

std::vector<double> Tensor::values() const {
  std::vector<double> out(numel_);
  for (std::size_t i = 0; i < numel_; ++i) out[i] = at(i);
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel_) {
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return *this;
  Tensor t(shape_, dtype);
  dispatch(dtype_, [&]<class S>(S) {
    auto src = view<S>();
    dispatch(dtype, [&]<class D>(D) {
      auto dst = t.mutable_view<D>();
      for (std::size_t i = 0; i < numel_; ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return t;
}

Tensor Tensor::clone() const {
  Tensor t(shape_, dtype_);
  dispatch(dtype_, [&]<class T>(T) {
    auto src = view<T>();
    std::copy(src.begin(), src.end(), t.mutable_view<T>().begin());
  });
  return t;
}

Tensor Tensor::slice0(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw ShapeError("slice0 [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(shape_));
  }
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t row = shape_[0] == 0 ? 0 : numel_ / shape_[0];
  Tensor t(s, dtype_);
  dispatch(dtype_, [&]<class T>(T) {
    auto src = view<T>();
    std::copy(src.begin() + begin * row, src.begin() + end * row, t.mutable_view<T>().begin());
  });
  return t;
}

bool Tensor::identical(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  return dispatch(dtype_, [&]<class T>(T) {
    auto a = view<T>();
    auto b = other.view<T>();
    return std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
  });
}

bool Tensor::all_finite() const {
  return dispatch(dtype_, [&]<class T>(T) {
    for (T v : view<T>()) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  });
}

Tensor concat0(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat0 of zero tensors");
  Shape s = parts[0].shape();
  if (s.empty()) throw ShapeError("concat0 of rank-0 tensor");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1) ||
        p.dtype() != parts[0].dtype()) {
      throw ShapeError("concat0: " + shape_str(p.shape()) + " does not match " + shape_str(s));
    }
    rows += p.shape()[0];
  }
  s[0] = rows;
  Tensor out(s, parts[0].dtype());
  dispatch(out.dtype(), [&]<class T>(T) {
    auto dst = out.mutable_view<T>();
    std::size_t off = 0;
    for (const auto& p : parts) {
      auto src = p.view<T>();
      std::copy(src.begin(), src.end(), dst.begin() + off);
      off += src.size();
    }
  });
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
  }
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace zp
