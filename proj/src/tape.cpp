#include "zeropur/tape.hpp"

namespace zp {

namespace {

void accumulate(std::optional<Tensor>& slot, const Tensor& g) {
  if (!slot) {
    slot = g;
    return;
  }
  require_same_shape(*slot, g, "gradient accumulation");
  dispatch(g.dtype(), [&]<class T>(T) {
    auto dst = slot->mutable_view<T>();
    auto src = g.view<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

}  // namespace

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw Error("Var::value on a default-constructed Var");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(*this); }

void Tape::check_owned(Var v, const char* op) const {
  if (v.tape() != this || v.id() >= entries_.size()) {
    throw Error(std::string(op) + ": input belongs to a different tape");
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  entries_.push_back(Entry{"leaf", {}, std::move(value), requires_grad, nullptr});
  leaf_grads_.emplace_back();
  return Var(this, entries_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  require_finite(value, op);
  Entry e{op, {}, std::move(value), false, nullptr};
  e.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in, op);
    e.inputs.push_back(in.id());
    e.requires_grad = e.requires_grad || entries_[in.id()].requires_grad;
  }
  if (e.requires_grad) e.backward = std::move(backward);
  entries_.push_back(std::move(e));
  leaf_grads_.emplace_back();
  return Var(this, entries_.size() - 1);
}

void Tape::backward(Var root) {
  check_owned(root, "backward");
  const Tensor& v = entries_[root.id()].value;
  if (v.numel() != 1) throw ShapeError("backward: root must hold one element, got " + shape_str(v.shape()));
  backward(root, Tensor::full(v.shape(), 1.0, v.dtype()));
}

void Tape::backward(Var root, const Tensor& seed) {
  check_owned(root, "backward");
  require_same_shape(entries_[root.id()].value, seed, "backward seed");
  std::vector<std::optional<Tensor>> grads(root.id() + 1);
  grads[root.id()] = seed;
  for (std::size_t k = root.id() + 1; k-- > 0;) {
    Entry& e = entries_[k];
    if (!grads[k] || !e.requires_grad) continue;
    if (e.inputs.empty()) {
      accumulate(leaf_grads_[k], *grads[k]);
      continue;
    }
    if (!e.backward) continue;
    std::vector<std::optional<Tensor>> in_grads = e.backward(*grads[k]);
    if (in_grads.size() != e.inputs.size()) {
      throw Error(std::string("backward of ") + e.op + " returned the wrong number of gradients");
    }
    for (std::size_t i = 0; i < in_grads.size(); ++i) {
      const std::size_t src = e.inputs[i];
      if (!in_grads[i] || !entries_[src].requires_grad) continue;
      if (in_grads[i]->shape() != entries_[src].value.shape()) {
        throw ShapeError(std::string("backward of ") + e.op + ": gradient shape " + shape_str(in_grads[i]->shape()) +
                         " does not match input " + shape_str(entries_[src].value.shape()));
      }
      require_finite(*in_grads[i], e.op);
      accumulate(grads[src], *in_grads[i]);
    }
    grads[k].reset();
  }
}

bool Tape::has_grad(Var v) const {
  check_owned(v, "has_grad");
  return leaf_grads_[v.id()].has_value();
}

Tensor Tape::grad(Var v) const {
  check_owned(v, "grad");
  if (!entries_[v.id()].requires_grad || !entries_[v.id()].inputs.empty()) {
    throw Error("grad: only requires_grad leaves carry gradients");
  }
  const auto& g = leaf_grads_[v.id()];
  return g ? *g : Tensor::zeros_like(entries_[v.id()].value);
}

void Tape::zero_grad() {
  for (auto& g : leaf_grads_) g.reset();
}

}  // namespace zp
