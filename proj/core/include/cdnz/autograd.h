#ifndef CDNZ_AUTOGRAD_H_
#define CDNZ_AUTOGRAD_H_

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "cdnz/tensor.h"

namespace cdnz {

// Named trainable tensor. `grad` stays empty until a backward pass reaches it.
// An optimizer step never touches `value` when `trainable` is false.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  bool has_grad() const { return !grad.empty(); }
  void ZeroGrad() { grad = Tensor<T>(); }
};

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape<T>* tape() const { return tape_; }
  size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  size_t id_ = 0;
};

// Record of executed operations, replayed in reverse by Backward(). Nodes are
// appended in execution order, so reverse insertion order is a valid reverse
// topological order.
template <typename T>
class Tape {
 public:
  // Propagates the output gradient into the inputs' gradient buffers.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> Constant(Tensor<T> value);
  Var<T> Input(Tensor<T> value, bool requires_grad = true);
  // Binds a parameter without copying; Backward() accumulates into param.grad
  // when the parameter is trainable.
  Var<T> Param(Parameter<T>& param);

  // Appends an operation result. `requires_grad` should be true iff any input
  // requires grad; `backward` may be empty when it is false.
  Var<T> Record(Tensor<T> value, bool requires_grad, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and walks the tape once in reverse. Node
  // gradients are reset first; parameter gradients accumulate across calls.
  void Backward(Var<T> loss);

  const Tensor<T>& value(size_t id) const;
  bool requires_grad(size_t id) const { return nodes_[id].requires_grad; }
  // Gradient of the last Backward() w.r.t. a node; empty if unreached.
  const Tensor<T>& grad(Var<T> v) const { return nodes_[v.id()].grad; }
  // Zero-initialized on first use; used by backward functions.
  Tensor<T>& GradBuffer(size_t id);

  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Parameter<T>* param = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool grad_enabled_;
  // Deque: references returned by value() stay valid as the tape grows.
  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cdnz

#endif  // CDNZ_AUTOGRAD_H_
