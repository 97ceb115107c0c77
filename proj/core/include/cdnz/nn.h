#ifndef CDNZ_NN_H_
#define CDNZ_NN_H_

#include <memory>
#include <string>
#include <vector>

#include "cdnz/autograd.h"
#include "cdnz/ops.h"
#include "cdnz/random.h"

namespace cdnz {

// Owns a network's parameters and non-trainable state buffers (batch-norm
// running statistics). Element addresses stay stable for the store's lifetime,
// including across moves.
template <typename T>
class ParamStore {
 public:
  struct Buffer {
    std::string name;
    Tensor<T> value;
  };

  ParamStore() = default;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  // Names must be unique across parameters and buffers.
  Parameter<T>& AddParameter(std::string name, Tensor<T> value);
  Tensor<T>& AddBuffer(std::string name, Tensor<T> value);

  std::vector<Parameter<T>*> parameters() const;
  std::vector<Buffer*> buffers() const;
  Parameter<T>* FindParameter(const std::string& name) const;
  Buffer* FindBuffer(const std::string& name) const;

  void SetTrainable(bool trainable);
  void ZeroGrad();
  int64_t ScalarCount() const;

 private:
  void CheckUnique(const std::string& name) const;

  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<std::unique_ptr<Buffer>> buffers_;
};

template <typename T>
struct ConvLayer {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  int stride = 1;
  int pad = 0;

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return Conv2d(x, tape.Param(*weight), tape.Param(*bias), stride, pad);
  }
};

// 2x upsampling deconvolution (kernel 4, stride 2, crop 1).
template <typename T>
struct DeconvLayer {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return ConvTranspose2d(x, tape.Param(*weight), tape.Param(*bias), 2, 1);
  }
};

template <typename T>
struct BatchNormLayer {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;

  Var<T> operator()(Tape<T>& tape, Var<T> x, Mode mode) const {
    return BatchNorm(x, tape.Param(*gamma), tape.Param(*beta), *running_mean, *running_var, mode);
  }
};

template <typename T>
struct LinearLayer {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  Var<T> operator()(Tape<T>& tape, Var<T> x) const {
    return Linear(x, tape.Param(*weight), tape.Param(*bias));
  }
};

// Weights ~ N(0, 2/fan_in), biases zero. "Same" padding is (kernel-1)/2.
template <typename T>
ConvLayer<T> MakeConv(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels,
                      int kernel, int stride, int pad, Rng& rng);
template <typename T>
DeconvLayer<T> MakeDeconv(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels,
                          Rng& rng);
// gamma = 1, beta = 0, running mean 0, running variance 1.
template <typename T>
BatchNormLayer<T> MakeBatchNorm(ParamStore<T>& store, const std::string& name, int channels);
template <typename T>
LinearLayer<T> MakeLinear(ParamStore<T>& store, const std::string& name, int in_features, int out_features,
                          Rng& rng);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace cdnz

#endif  // CDNZ_NN_H_
