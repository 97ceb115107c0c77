#include "cdnz/metrics.h"

#include <algorithm>
#include <cmath>

namespace cdnz {

double Psnr(std::span<const float> a, std::span<const float> b, double peak) {
  if (a.size() != b.size()) {
    throw ShapeError("psnr: size mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw ShapeError("psnr: empty input");
  double sq = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double Psnr(const Image& a, const Image& b, double peak) {
  if (!a.SameShape(b)) throw ShapeError("psnr: image shapes differ");
  return Psnr(a.values, b.values, peak);
}

double QuantizedPsnr(const Image& estimate, const Image& reference) {
  return Psnr(Quantize8(estimate), reference, 1.0);
}

template <typename T>
double TopKAccuracy(const Tensor<T>& logits, std::span<const int> labels, int k) {
  if (logits.rank() != 2) throw ShapeError("topk_accuracy: logits must be [N,K], got " + ShapeToString(logits.shape()));
  const int64_t n = logits.dim(0), classes = logits.dim(1);
  if (k < 1 || k > classes) throw InvalidArgument("topk_accuracy: k must lie in [1, K]");
  if (static_cast<int64_t>(labels.size()) != n) throw ShapeError("topk_accuracy: label count does not match rows");
  if (n == 0) return 0.0;
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    const int label = labels[static_cast<size_t>(i)];
    if (label < 0 || label >= classes) throw InvalidArgument("topk_accuracy: label " + std::to_string(label) + " out of range");
    const T* row = logits.ptr() + i * classes;
    // Rank of the true class: classes strictly ahead of it.
    int64_t ahead = 0;
    for (int64_t c = 0; c < classes; ++c) {
      if (row[c] > row[label] || (row[c] == row[label] && c < label)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

template <typename T>
std::vector<int> ArgmaxClasses(const Tensor<T>& logits) {
  if (logits.rank() != 2 && logits.rank() != 4) throw ShapeError("argmax: logits must be [N,K] or [N,K,H,W]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  const int64_t plane = logits.rank() == 4 ? logits.dim(2) * logits.dim(3) : 1;
  std::vector<int> out(static_cast<size_t>(n * plane));
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t j = 0; j < plane; ++j) {
      const T* base = logits.ptr() + s * k * plane + j;
      int best = 0;
      for (int64_t c = 1; c < k; ++c) {
        if (base[c * plane] > base[best * plane]) best = static_cast<int>(c);
      }
      out[static_cast<size_t>(s * plane + j)] = best;
    }
  }
  return out;
}

double MeanIou(std::span<const int> pred, std::span<const int> gt, int num_classes, int ignore_label) {
  if (pred.size() != gt.size()) throw ShapeError("mean_iou: prediction and ground truth sizes differ");
  std::vector<int64_t> inter(static_cast<size_t>(num_classes), 0), uni(static_cast<size_t>(num_classes), 0);
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_label) continue;
    const int g = gt[i], p = pred[i];
    if (g == p) {
      if (g >= 0 && g < num_classes) {
        ++inter[g];
        ++uni[g];
      }
      continue;
    }
    if (g >= 0 && g < num_classes) ++uni[g];
    if (p >= 0 && p < num_classes) ++uni[p];
  }
  double sum = 0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (uni[c] == 0) continue;
    sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++present;
  }
  return present ? sum / present : 1.0;
}

template double TopKAccuracy<float>(const Tensor<float>&, std::span<const int>, int);
template double TopKAccuracy<double>(const Tensor<double>&, std::span<const int>, int);
template std::vector<int> ArgmaxClasses<float>(const Tensor<float>&);
template std::vector<int> ArgmaxClasses<double>(const Tensor<double>&);

}  // namespace cdnz
