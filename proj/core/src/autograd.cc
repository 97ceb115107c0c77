#include "cdnz/autograd.h"

namespace cdnz {

template <typename T>
Var<T> Tape<T>::Constant(Tensor<T> value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::Input(Tensor<T> value, bool requires_grad) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::Param(Parameter<T>& param) {
  Node node;
  node.external = &param.value;
  node.param = &param;
  node.requires_grad = param.trainable && grad_enabled_;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::Record(Tensor<T> value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad && grad_enabled_;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
const Tensor<T>& Tape<T>::value(size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

template <typename T>
Tensor<T>& Tape<T>::GradBuffer(size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>::Zeros(value(id).shape());
  return n.grad;
}

template <typename T>
void Tape<T>::Backward(Var<T> loss) {
  if (loss.tape() != this) throw InvalidArgument("Backward: loss was recorded on a different tape");
  if (value(loss.id()).size() != 1) {
    throw ShapeError("Backward requires a scalar loss, got " + ShapeToString(value(loss.id()).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor<T>();
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Tensor<T>::Ones(value(loss.id()).shape());

  for (size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    }
    if (n.param != nullptr && n.param->trainable) {
      Parameter<T>& p = *n.param;
      if (p.grad.empty()) {
        p.grad = n.grad;
      } else {
        T* dst = p.grad.ptr();
        const T* src = n.grad.ptr();
        for (int64_t k = 0; k < p.grad.size(); ++k) dst[k] += src[k];
      }
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cdnz
