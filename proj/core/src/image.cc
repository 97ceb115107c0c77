#include "cdnz/image.h"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace cdnz {

Image Quantize8(const Image& img) {
  Image out = img;
  for (float& v : out.values) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
  return out;
}

template <typename T>
Tensor<T> StackImages(std::span<const Image* const> images) {
  if (images.empty()) throw InvalidArgument("cannot stack an empty image list");
  const Image& first = *images[0];
  const int64_t n = static_cast<int64_t>(images.size());
  Tensor<T> out(Shape{n, first.channels, first.height, first.width});
  const int64_t per = first.channels * first.height * first.width;
  for (int64_t i = 0; i < n; ++i) {
    const Image& img = *images[static_cast<size_t>(i)];
    if (!img.SameShape(first)) throw ShapeError("cannot stack images of different sizes");
    std::copy(img.values.begin(), img.values.end(), out.ptr() + i * per);
  }
  return out;
}

template <typename T>
Tensor<T> ImageToTensor(const Image& img) {
  const Image* one[] = {&img};
  return StackImages<T>(one);
}

template <typename T>
Image TensorToImage(const Tensor<T>& batch, int64_t index) {
  if (batch.rank() != 4) throw ShapeError("expected [N,C,H,W] tensor, got " + ShapeToString(batch.shape()));
  if (index < 0 || index >= batch.dim(0)) throw ShapeError("image index out of range");
  Image img(batch.dim(2), batch.dim(3), batch.dim(1));
  const int64_t per = img.channels * img.height * img.width;
  const T* src = batch.ptr() + index * per;
  for (int64_t i = 0; i < per; ++i) img.values[static_cast<size_t>(i)] = static_cast<float>(src[i]);
  return img;
}

template Tensor<float> StackImages<float>(std::span<const Image* const>);
template Tensor<double> StackImages<double>(std::span<const Image* const>);
template Tensor<float> ImageToTensor<float>(const Image&);
template Tensor<double> ImageToTensor<double>(const Image&);
template Image TensorToImage<float>(const Tensor<float>&, int64_t);
template Image TensorToImage<double>(const Tensor<double>&, int64_t);

namespace {

// Netpbm header tokenizer: whitespace separated, '#' comments to end of line.
class PnmHeader {
 public:
  explicit PnmHeader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  std::string Magic() {
    if (bytes_.size() < 2) throw FormatError("file too short for a netpbm magic number", 0);
    pos_ = 2;
    return std::string(bytes_.begin(), bytes_.begin() + 2);
  }

  int64_t Number(const char* what) {
    SkipSpaceAndComments();
    const size_t start = pos_;
    int64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (int64_t{1} << 30)) throw FormatError(std::string("netpbm ") + what + " too large", static_cast<int64_t>(start));
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("expected netpbm ") + what, static_cast<int64_t>(pos_));
    return v;
  }

  // The single whitespace byte that ends the header.
  size_t PayloadStart() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError("expected whitespace after netpbm maxval", static_cast<int64_t>(pos_));
    }
    return pos_ + 1;
  }

 private:
  void SkipSpaceAndComments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

struct PnmRaster {
  int64_t width, height, maxval;
  size_t payload;
};

PnmRaster ParsePnm(std::span<const uint8_t> bytes, const char* magic, int64_t channels) {
  PnmHeader header(bytes);
  const std::string m = header.Magic();
  if (m != magic) throw FormatError("expected netpbm magic '" + std::string(magic) + "', got '" + m + "'", 0);
  PnmRaster r{};
  r.width = header.Number("width");
  r.height = header.Number("height");
  r.maxval = header.Number("maxval");
  if (r.width <= 0 || r.height <= 0) throw FormatError("netpbm image has zero extent", 2);
  if (r.maxval <= 0 || r.maxval > 255) {
    throw FormatError("only 8-bit netpbm files are supported, maxval " + std::to_string(r.maxval), 2);
  }
  r.payload = header.PayloadStart();
  const size_t need = static_cast<size_t>(r.width * r.height * channels);
  if (bytes.size() < r.payload + need) {
    throw FormatError("truncated netpbm payload: expected " + std::to_string(need) + " bytes, found " +
                          std::to_string(bytes.size() > r.payload ? bytes.size() - r.payload : 0),
                      static_cast<int64_t>(bytes.size()));
  }
  return r;
}

std::vector<uint8_t> ReadAll(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound("cannot open '" + path.string() + "'");
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void WriteAll(const std::vector<uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileNotFound("cannot create '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

uint8_t ToByte(float v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

std::string Extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

Image DecodePng(std::span<const uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw FormatError(std::string("invalid PNG: ") + png.message, 0);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> raster(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError("invalid PNG: " + msg, 0);
  }
  Image img(png.height, png.width, 3);
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = raster[static_cast<size_t>((y * img.width + x) * 3 + c)] / 255.0f;
    }
  }
  return img;
}

void WritePng(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 3) throw InvalidArgument("PNG writer expects 3 channels");
  std::vector<uint8_t> raster(static_cast<size_t>(img.height * img.width * 3));
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      for (int64_t c = 0; c < 3; ++c) raster[static_cast<size_t>((y * img.width + x) * 3 + c)] = ToByte(img.at(c, y, x));
    }
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, raster.data(), 0, nullptr)) {
    throw Error("failed writing PNG '" + path.string() + "': " + png.message);
  }
}

}  // namespace

Image DecodePpm(std::span<const uint8_t> bytes) {
  const PnmRaster r = ParsePnm(bytes, "P6", 3);
  Image img(r.height, r.width, 3);
  const float maxval = static_cast<float>(r.maxval);
  const uint8_t* src = bytes.data() + r.payload;
  for (int64_t y = 0; y < r.height; ++y) {
    for (int64_t x = 0; x < r.width; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        const uint8_t v = src[(y * r.width + x) * 3 + c];
        if (v > r.maxval) {
          throw FormatError("sample exceeds maxval", static_cast<int64_t>(r.payload) + (y * r.width + x) * 3 + c);
        }
        img.at(c, y, x) = static_cast<float>(v) / maxval;
      }
    }
  }
  return img;
}

std::vector<uint8_t> EncodePpm(const Image& img) {
  if (img.channels != 3) throw InvalidArgument("PPM writer expects 3 channels");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + static_cast<size_t>(img.width * img.height * 3));
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      for (int64_t c = 0; c < 3; ++c) bytes.push_back(ToByte(img.at(c, y, x)));
    }
  }
  return bytes;
}

Image ReadImage(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = ReadAll(path);
  const std::string ext = Extension(path);
  try {
    if (ext == ".png") return DecodePng(bytes);
    return DecodePpm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

void WriteImage(const Image& img, const std::filesystem::path& path) {
  if (Extension(path) == ".png") {
    WritePng(img, path);
  } else {
    WriteAll(EncodePpm(img), path);
  }
}

LabelMap DecodePgm(std::span<const uint8_t> bytes) {
  const PnmRaster r = ParsePnm(bytes, "P5", 1);
  LabelMap map(r.height, r.width);
  for (int64_t i = 0; i < r.height * r.width; ++i) map.labels[static_cast<size_t>(i)] = bytes[r.payload + i];
  return map;
}

std::vector<uint8_t> EncodePgm(const LabelMap& map) {
  const std::string header = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  std::vector<uint8_t> bytes(header.begin(), header.end());
  for (int v : map.labels) {
    if (v < 0 || v > 255) throw InvalidArgument("label " + std::to_string(v) + " does not fit a PGM byte");
    bytes.push_back(static_cast<uint8_t>(v));
  }
  return bytes;
}

LabelMap ReadLabelMap(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = ReadAll(path);
  try {
    return DecodePgm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

void WriteLabelMap(const LabelMap& map, const std::filesystem::path& path) { WriteAll(EncodePgm(map), path); }

}  // namespace cdnz
