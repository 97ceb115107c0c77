#ifndef CDNZ_IMAGE_H_
#define CDNZ_IMAGE_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cdnz/tensor.h"

namespace cdnz {

// Planar (C,H,W) image with values nominally in [0,1]. Values are not clamped
// in memory; clamping happens when writing files.
struct Image {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 3;
  std::vector<float> values;

  Image() = default;
  Image(int64_t h, int64_t w, int64_t c = 3, float fill = 0.0f)
      : height(h), width(w), channels(c), values(static_cast<size_t>(h * w * c), fill) {}

  float& at(int64_t c, int64_t y, int64_t x) { return values[static_cast<size_t>((c * height + y) * width + x)]; }
  float at(int64_t c, int64_t y, int64_t x) const {
    return values[static_cast<size_t>((c * height + y) * width + x)];
  }
  bool SameShape(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }
  bool operator==(const Image&) const = default;
};

// Per-pixel class indices (row-major H x W).
struct LabelMap {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int64_t h, int64_t w, int fill = 0) : height(h), width(w), labels(static_cast<size_t>(h * w), fill) {}
  int& at(int64_t y, int64_t x) { return labels[static_cast<size_t>(y * width + x)]; }
  int at(int64_t y, int64_t x) const { return labels[static_cast<size_t>(y * width + x)]; }
  bool operator==(const LabelMap&) const = default;
};

// Clamps to [0,1] and rounds to the nearest of 256 levels.
Image Quantize8(const Image& img);

// [N,C,H,W] batch from equally sized images.
template <typename T>
Tensor<T> StackImages(std::span<const Image* const> images);
template <typename T>
Tensor<T> ImageToTensor(const Image& img);
// Extracts sample `index` of a [N,C,H,W] tensor.
template <typename T>
Image TensorToImage(const Tensor<T>& batch, int64_t index = 0);

// Binary PPM (P6) and 8-bit RGB/gray PNG. The format is chosen by extension
// (.ppm/.pnm or .png). Malformed files raise FormatError with the byte offset.
Image ReadImage(const std::filesystem::path& path);
void WriteImage(const Image& img, const std::filesystem::path& path);

// In-memory PPM codec used by the file functions.
Image DecodePpm(std::span<const uint8_t> bytes);
std::vector<uint8_t> EncodePpm(const Image& img);

// Label maps are stored as binary PGM (P5), one byte per pixel.
LabelMap ReadLabelMap(const std::filesystem::path& path);
void WriteLabelMap(const LabelMap& map, const std::filesystem::path& path);
LabelMap DecodePgm(std::span<const uint8_t> bytes);
std::vector<uint8_t> EncodePgm(const LabelMap& map);

}  // namespace cdnz

#endif  // CDNZ_IMAGE_H_
