#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zeropur/tensor.hpp"

namespace zp {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  DType dtype() const { return value().dtype(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Vector-Jacobian product of one recorded op: given dL/d(output), returns
/// dL/d(input_i) for each input (nullopt where the input needs no gradient).
using BackwardFn = std::function<std::vector<std::optional<Tensor>>(const Tensor& grad_output)>;

/// Ordered record of executed operations. Entries are appended in execution
/// order, so every input of entry k is an earlier entry. A tape is owned by a
/// single thread; independent work uses independent tapes.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. `backward` is dropped when no input requires grad.
  /// Throws NumericError naming `op` if `value` is not finite.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Reverse sweep from a single-element root, seeding dL/droot = 1. Leaf
  /// gradients accumulate across calls until zero_grad().
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  bool has_grad(Var v) const;
  /// Gradient of a requires_grad leaf; zeros if the leaf was unreachable.
  Tensor grad(Var v) const;
  void zero_grad();

  const Tensor& value(Var v) const { return entries_.at(v.id()).value; }
  bool requires_grad(Var v) const { return entries_.at(v.id()).requires_grad; }
  std::size_t size() const { return entries_.size(); }
  const char* op_name(std::size_t id) const { return entries_.at(id).op; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return entries_.at(id).inputs; }

 private:
  struct Entry {
    const char* op;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad;
    BackwardFn backward;
  };

  void check_owned(Var v, const char* op) const;

  std::vector<Entry> entries_;
  std::vector<std::optional<Tensor>> leaf_grads_;
};

}  // namespace zp
