#ifndef CDNZ_OPS_H_
#define CDNZ_OPS_H_

#include <cstdint>
#include <optional>
#include <span>

#include "cdnz/autograd.h"

namespace cdnz {

enum class Mode { kTrain, kEval };

struct BatchNormOptions {
  double epsilon = 1e-5;
  // running <- momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
};

// Differentiable operations. Every op records itself on the tape of its first
// argument; all Var arguments must share that tape.

// input [N,Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout] -> [N,Cout,H',W'].
template <typename T>
Var<T> Conv2d(Var<T> input, Var<T> weight, Var<T> bias, int stride, int zero_pad);

// input [N,Cin,H,W], weight [Cin,Cout,k,k], bias [Cout] ->
// [N,Cout,(H-1)*stride+k-2*crop, ...]. Adjoint of Conv2d(stride, pad=crop).
template <typename T>
Var<T> ConvTranspose2d(Var<T> input, Var<T> weight, Var<T> bias, int stride = 2, int crop = 1);

// Per-channel normalization over (N,H,W). In train mode the running
// statistics are updated in place.
template <typename T>
Var<T> BatchNorm(Var<T> input, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                 Tensor<T>& running_var, Mode mode, const BatchNormOptions& options = {});

template <typename T>
Var<T> Relu(Var<T> input);

// 2x2 stride-2 max; the first maximum in row-major window order takes the gradient.
template <typename T>
Var<T> MaxPool2(Var<T> input);

template <typename T>
Var<T> Add(Var<T> a, Var<T> b);

template <typename T>
Var<T> Mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> Scale(Var<T> a, T factor);

// Sum of all elements as a [1] tensor.
template <typename T>
Var<T> Sum(Var<T> a);

// [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W], a's channels first.
template <typename T>
Var<T> ConcatChannels(Var<T> a, Var<T> b);

// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> GlobalAvgPool(Var<T> input);

// input [N,Cin], weight [Cout,Cin], bias [Cout] -> [N,Cout]
template <typename T>
Var<T> Linear(Var<T> input, Var<T> weight, Var<T> bias);

// Adds a constant offset per channel (no gradient to the offsets).
template <typename T>
Var<T> ShiftChannels(Var<T> input, std::span<const double> offsets);

// Extends the bottom and right borders by mirror reflection (edge excluded).
template <typename T>
Var<T> ReflectPad(Var<T> input, int bottom, int right);

template <typename T>
Var<T> Crop(Var<T> input, int64_t top, int64_t left, int64_t height, int64_t width);

template <typename T>
Var<T> MseLoss(Var<T> pred, Var<T> target);

// logits [N,K] with labels[N], or [N,K,H,W] with labels[N*H*W] in (n,h,w)
// order. Positions equal to ignore_label do not count; if all are ignored
// the loss is 0 with zero gradient.
template <typename T>
Var<T> CrossEntropyLoss(Var<T> logits, std::span<const int> labels,
                        std::optional<int> ignore_label = std::nullopt);

// Output extent of a convolution along one axis.
int64_t ConvOutputExtent(int64_t in, int64_t kernel, int stride, int pad);

}  // namespace cdnz

#endif  // CDNZ_OPS_H_
