#ifndef CDNZ_TENSOR_H_
#define CDNZ_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "cdnz/errors.h"

namespace cdnz {

using Shape = std::vector<int64_t>;

// Cache-line aligned storage. Vectorized reductions peel a scalar prologue
// up to the first aligned element, so the summation order (and the rounding)
// would otherwise depend on where malloc happened to put the buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

int64_t NumElements(const Shape& shape);
std::string ShapeToString(const Shape& shape);

// Dense row-major array. Images use N x C x H x W.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor Zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor Ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor Scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 4-D accessors; no bounds checks beyond debug asserts.
  T& at(int64_t n, int64_t c, int64_t h, int64_t w);
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const;

  T item() const;
  void Fill(T v);
  bool AllFinite() const;

  template <typename U>
  Tensor<U> Cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  // Returns the same values with a new shape of equal element count.
  Tensor Reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

template <typename T>
inline T& Tensor<T>::at(int64_t n, int64_t c, int64_t h, int64_t w) {
  return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

template <typename T>
inline const T& Tensor<T>::at(int64_t n, int64_t c, int64_t h, int64_t w) const {
  return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

// Throws ShapeError with `what` as context unless shapes are identical.
void CheckSameShape(const Shape& a, const Shape& b, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cdnz

#endif  // CDNZ_TENSOR_H_
