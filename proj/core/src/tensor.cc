#include "cdnz/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cdnz {

int64_t NumElements(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void CheckSameShape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + ShapeToString(a) + " vs " +
                     ShapeToString(b));
  }
}

namespace {

void ValidateShape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + ShapeToString(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  ValidateShape(shape_);
  data_.assign(static_cast<size_t>(NumElements(shape_)), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  ValidateShape(shape_);
  if (NumElements(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + ShapeToString(shape_));
  }
}

template <typename T>
int64_t Tensor<T>::dim(int i) const {
  if (i < 0) i += rank();
  if (i < 0 || i >= rank()) throw ShapeError("dimension index out of range for " + ShapeToString(shape_));
  return shape_[static_cast<size_t>(i)];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + ShapeToString(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::Fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::AllFinite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
Tensor<T> Tensor<T>::Reshaped(Shape shape) const {
  if (NumElements(shape) != size()) {
    throw ShapeError("cannot reshape " + ShapeToString(shape_) + " to " + ShapeToString(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cdnz
