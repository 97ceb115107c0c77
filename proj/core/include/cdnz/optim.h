#ifndef CDNZ_OPTIM_H_
#define CDNZ_OPTIM_H_

#include <cstdint>
#include <span>
#include <vector>

#include "cdnz/autograd.h"

namespace cdnz {

// Batch geometry, step-decay learning rate and stopping point of a training run.
struct OptimizerSchedule {
  int batch_size = 32;
  int patch_size = 48;
  double lr0 = 1e-4;
  int64_t decay_every = 500000;
  int64_t iterations = 1500000;
  // Reserved; 0 gives plain SGD.
  double momentum = 0.0;
  double weight_decay = 0.0;

  // lr0 * 10^-floor(iteration / decay_every)
  double LearningRate(int64_t iteration) const;
};

// value <- value - lr * grad on trainable parameters, then clears every grad.
// Throws InvalidArgument if a trainable parameter has no gradient.
template <typename T>
void SgdStep(std::span<Parameter<T>* const> params, double lr);

// SGD with optional momentum and L2 weight decay. With both set to zero each
// Step() is bit-identical to SgdStep().
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void Step(std::span<Parameter<T>* const> params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

extern template class SgdOptimizer<float>;
extern template class SgdOptimizer<double>;

}  // namespace cdnz

#endif  // CDNZ_OPTIM_H_
