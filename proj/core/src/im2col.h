#ifndef CDNZ_SRC_IM2COL_H_
#define CDNZ_SRC_IM2COL_H_

#include <algorithm>
#include <cstdint>

namespace cdnz::detail {

// Geometry of a zero-padded strided convolution over one sample.
struct ConvGeometry {
  int64_t channels, height, width;
  int64_t kernel_h, kernel_w;
  int64_t stride, pad;
  int64_t out_h, out_w;
};

// cols[(c*kh + i)*kw + j][oh*out_w + ow] = image[c][oh*stride - pad + i][ow*stride - pad + j],
// zero outside the image.
template <typename T>
void Im2Col(const T* image, const ConvGeometry& g, T* cols) {
  const int64_t p = g.out_h * g.out_w;
  for (int64_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (int64_t i = 0; i < g.kernel_h; ++i) {
      for (int64_t j = 0; j < g.kernel_w; ++j) {
        T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * p;
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t y = oh * g.stride - g.pad + i;
          T* dst = row + oh * g.out_w;
          if (y < 0 || y >= g.height) {
            for (int64_t ow = 0; ow < g.out_w; ++ow) dst[ow] = T(0);
            continue;
          }
          const T* src = plane + y * g.width;
          if (g.stride == 1) {
            // Valid outputs are ow in [lo, hi).
            const int64_t x0 = j - g.pad;
            const int64_t lo = std::clamp<int64_t>(-x0, 0, g.out_w);
            const int64_t hi = std::clamp<int64_t>(g.width - x0, lo, g.out_w);
            std::fill(dst, dst + lo, T(0));
            std::copy(src + x0 + lo, src + x0 + hi, dst + lo);
            std::fill(dst + hi, dst + g.out_w, T(0));
          } else {
            for (int64_t ow = 0; ow < g.out_w; ++ow) {
              const int64_t x = ow * g.stride - g.pad + j;
              dst[ow] = (x >= 0 && x < g.width) ? src[x] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of Im2Col: scatter-adds cols back into image.
template <typename T>
void Col2Im(const T* cols, const ConvGeometry& g, T* image) {
  const int64_t p = g.out_h * g.out_w;
  for (int64_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (int64_t i = 0; i < g.kernel_h; ++i) {
      for (int64_t j = 0; j < g.kernel_w; ++j) {
        const T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * p;
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t y = oh * g.stride - g.pad + i;
          if (y < 0 || y >= g.height) continue;
          T* dst = plane + y * g.width;
          const T* src = row + oh * g.out_w;
          if (g.stride == 1) {
            const int64_t x0 = j - g.pad;
            const int64_t lo = std::clamp<int64_t>(-x0, 0, g.out_w);
            const int64_t hi = std::clamp<int64_t>(g.width - x0, lo, g.out_w);
            for (int64_t ow = lo; ow < hi; ++ow) dst[x0 + ow] += src[ow];
            continue;
          }
          for (int64_t ow = 0; ow < g.out_w; ++ow) {
            const int64_t x = ow * g.stride - g.pad + j;
            if (x >= 0 && x < g.width) dst[x] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace cdnz::detail

#endif  // CDNZ_SRC_IM2COL_H_
