#include "cdnz/optim.h"

#include <cmath>

namespace cdnz {

double OptimizerSchedule::LearningRate(int64_t iteration) const {
  if (decay_every <= 0) return lr0;
  return lr0 * std::pow(10.0, -static_cast<double>(iteration / decay_every));
}

namespace {

template <typename T>
void CheckGrads(std::span<Parameter<T>* const> params) {
  for (const Parameter<T>* p : params) {
    if (!p->trainable) continue;
    if (!p->has_grad()) throw InvalidArgument("sgd_step: trainable parameter '" + p->name + "' has no gradient");
    CheckSameShape(p->grad.shape(), p->value.shape(), "sgd_step gradient");
  }
}

}  // namespace

template <typename T>
void SgdStep(std::span<Parameter<T>* const> params, double lr) {
  if (!(lr > 0)) throw InvalidArgument("sgd_step: learning rate must be positive");
  CheckGrads(params);
  const T step = static_cast<T>(lr);
  for (Parameter<T>* p : params) {
    if (p->trainable) {
      T* v = p->value.ptr();
      const T* g = p->grad.ptr();
      for (int64_t i = 0; i < p->value.size(); ++i) v[i] -= step * g[i];
    }
    p->ZeroGrad();
  }
}

template <typename T>
void SgdOptimizer<T>::Step(std::span<Parameter<T>* const> params, double lr) {
  if (momentum_ == 0.0 && weight_decay_ == 0.0) {
    SgdStep(params, lr);
    return;
  }
  if (!(lr > 0)) throw InvalidArgument("sgd_step: learning rate must be positive");
  CheckGrads(params);
  if (velocity_.size() != params.size()) velocity_.assign(params.size(), Tensor<T>());
  const T step = static_cast<T>(lr), mom = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
  for (size_t k = 0; k < params.size(); ++k) {
    Parameter<T>* p = params[k];
    if (p->trainable) {
      if (velocity_[k].empty()) velocity_[k] = Tensor<T>::Zeros(p->value.shape());
      T* v = p->value.ptr();
      T* vel = velocity_[k].ptr();
      const T* g = p->grad.ptr();
      for (int64_t i = 0; i < p->value.size(); ++i) {
        vel[i] = mom * vel[i] + g[i] + wd * v[i];
        v[i] -= step * vel[i];
      }
    }
    p->ZeroGrad();
  }
}

template void SgdStep<float>(std::span<Parameter<float>* const>, double);
template void SgdStep<double>(std::span<Parameter<double>* const>, double);
template class SgdOptimizer<float>;
template class SgdOptimizer<double>;

}  // namespace cdnz
