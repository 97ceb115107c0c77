#include "cdnz/nn.h"

#include <cmath>

namespace cdnz {

template <typename T>
void ParamStore<T>::CheckUnique(const std::string& name) const {
  if (FindParameter(name) || FindBuffer(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
}

template <typename T>
Parameter<T>& ParamStore<T>::AddParameter(std::string name, Tensor<T> value) {
  CheckUnique(name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = std::move(name);
  p->value = std::move(value);
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Tensor<T>& ParamStore<T>::AddBuffer(std::string name, Tensor<T> value) {
  CheckUnique(name);
  buffers_.push_back(std::make_unique<Buffer>(Buffer{std::move(name), std::move(value)}));
  return buffers_.back()->value;
}

template <typename T>
std::vector<Parameter<T>*> ParamStore<T>::parameters() const {
  std::vector<Parameter<T>*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<typename ParamStore<T>::Buffer*> ParamStore<T>::buffers() const {
  std::vector<Buffer*> out;
  out.reserve(buffers_.size());
  for (const auto& b : buffers_) out.push_back(b.get());
  return out;
}

template <typename T>
Parameter<T>* ParamStore<T>::FindParameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
typename ParamStore<T>::Buffer* ParamStore<T>::FindBuffer(const std::string& name) const {
  for (const auto& b : buffers_) {
    if (b->name == name) return b.get();
  }
  return nullptr;
}

template <typename T>
void ParamStore<T>::SetTrainable(bool trainable) {
  for (auto& p : params_) p->trainable = trainable;
}

template <typename T>
void ParamStore<T>::ZeroGrad() {
  for (auto& p : params_) p->ZeroGrad();
}

template <typename T>
int64_t ParamStore<T>::ScalarCount() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

namespace {

template <typename T>
Tensor<T> HeNormal(Shape shape, double fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double stddev = std::sqrt(2.0 / fan_in);
  for (T& v : t.data()) v = static_cast<T>(rng.Normal(0.0, stddev));
  return t;
}

}  // namespace

template <typename T>
ConvLayer<T> MakeConv(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels, int kernel,
                      int stride, int pad, Rng& rng) {
  ConvLayer<T> layer;
  layer.weight = &store.AddParameter(name + ".weight",
                                     HeNormal<T>(Shape{out_channels, in_channels, kernel, kernel},
                                                 static_cast<double>(in_channels) * kernel * kernel, rng));
  layer.bias = &store.AddParameter(name + ".bias", Tensor<T>::Zeros(Shape{out_channels}));
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

template <typename T>
DeconvLayer<T> MakeDeconv(ParamStore<T>& store, const std::string& name, int in_channels, int out_channels,
                          Rng& rng) {
  // Each output pixel of a stride-2 4x4 deconvolution sees 2x2 taps per input channel.
  DeconvLayer<T> layer;
  layer.weight = &store.AddParameter(
      name + ".weight", HeNormal<T>(Shape{in_channels, out_channels, 4, 4}, static_cast<double>(in_channels) * 4, rng));
  layer.bias = &store.AddParameter(name + ".bias", Tensor<T>::Zeros(Shape{out_channels}));
  return layer;
}

template <typename T>
BatchNormLayer<T> MakeBatchNorm(ParamStore<T>& store, const std::string& name, int channels) {
  BatchNormLayer<T> layer;
  layer.gamma = &store.AddParameter(name + ".gamma", Tensor<T>::Ones(Shape{channels}));
  layer.beta = &store.AddParameter(name + ".beta", Tensor<T>::Zeros(Shape{channels}));
  layer.running_mean = &store.AddBuffer(name + ".running_mean", Tensor<T>::Zeros(Shape{channels}));
  layer.running_var = &store.AddBuffer(name + ".running_var", Tensor<T>::Ones(Shape{channels}));
  return layer;
}

template <typename T>
LinearLayer<T> MakeLinear(ParamStore<T>& store, const std::string& name, int in_features, int out_features,
                          Rng& rng) {
  LinearLayer<T> layer;
  layer.weight = &store.AddParameter(name + ".weight",
                                     HeNormal<T>(Shape{out_features, in_features}, in_features, rng));
  layer.bias = &store.AddParameter(name + ".bias", Tensor<T>::Zeros(Shape{out_features}));
  return layer;
}

#define CDNZ_INSTANTIATE_NN(T)                                                                                \
  template class ParamStore<T>;                                                                               \
  template ConvLayer<T> MakeConv(ParamStore<T>&, const std::string&, int, int, int, int, int, Rng&);          \
  template DeconvLayer<T> MakeDeconv(ParamStore<T>&, const std::string&, int, int, Rng&);                     \
  template BatchNormLayer<T> MakeBatchNorm(ParamStore<T>&, const std::string&, int);                          \
  template LinearLayer<T> MakeLinear(ParamStore<T>&, const std::string&, int, int, Rng&);

CDNZ_INSTANTIATE_NN(float)
CDNZ_INSTANTIATE_NN(double)

#undef CDNZ_INSTANTIATE_NN

}  // namespace cdnz
