#ifndef CDNZ_METRICS_H_
#define CDNZ_METRICS_H_

#include <span>
#include <string>
#include <vector>

#include "cdnz/image.h"
#include "cdnz/tensor.h"

namespace cdnz {

inline constexpr double kPsnrCap = 99.0;

// 10*log10(peak^2 / MSE) over all channels; identical inputs give kPsnrCap.
double Psnr(std::span<const float> a, std::span<const float> b, double peak = 1.0);
double Psnr(const Image& a, const Image& b, double peak = 1.0);
// Clamps and 8-bit quantizes `estimate` first, matching file-based evaluation.
double QuantizedPsnr(const Image& estimate, const Image& reference);

// Fraction of rows whose label is among the k largest logits. Ties rank the
// lower class index first.
template <typename T>
double TopKAccuracy(const Tensor<T>& logits, std::span<const int> labels, int k);

// Per-pixel argmax over the class axis of [N,K,H,W] (or [N,K]) logits, lower
// index winning ties.
template <typename T>
std::vector<int> ArgmaxClasses(const Tensor<T>& logits);

// Mean IoU over classes present in gt or pred; ignore_label pixels excluded.
// Returns 1.0 when no class is present at all.
double MeanIou(std::span<const int> pred, std::span<const int> gt, int num_classes, int ignore_label = 255);

}  // namespace cdnz

#endif  // CDNZ_METRICS_H_
