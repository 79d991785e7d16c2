#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrvc {

/// Thrown when tensor shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(std::span<const int> shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

/// Fixed over-alignment for numeric buffers. Vectorized kernels peel
/// unaligned leading elements, so summation order (and the last bits of the
/// result) would otherwise depend on where the allocator placed the buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array. Feature maps are (C, H, W); convolution weights are
/// (Cout, Cin, K, K); scalars are (1).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(int c, int h, int w, T fill = T(0)) : Tensor(std::vector<int>{c, h, w}, fill) {}

  static Tensor scalar(T v) { return Tensor(std::vector<int>{1}, v); }
  static Tensor like(const Tensor& o, T fill = T(0)) { return Tensor(o.shape_, fill); }

  static size_t count(std::span<const int> shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
      n *= static_cast<size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // (C, H, W) accessors.
  int channels() const { return shape_.at(0); }
  int height() const { return shape_.at(1); }
  int width() const { return shape_.at(2); }
  size_t plane() const { return static_cast<size_t>(height()) * width(); }

  T& at(int c, int y, int x) { return data_[(static_cast<size_t>(c) * height() + y) * width() + x]; }
  T at(int c, int y, int x) const { return data_[(static_cast<size_t>(c) * height() + y) * width() + x]; }

  T& operator[](size_t i) { return data_[i]; }
  T operator[](size_t i) const { return data_[i]; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  AlignedVector<T>& vec() { return data_; }
  const AlignedVector<T>& vec() const { return data_; }

  T* channel_ptr(int c) { return data_.data() + static_cast<size_t>(c) * plane(); }
  const T* channel_ptr(int c) const { return data_.data() + static_cast<size_t>(c) * plane(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(std::vector<int> shape) {
    if (count(shape) != data_.size())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    shape_ = std::move(shape);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  void check_same(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string(what) + ": shape " + shape_str(shape_) + " vs " + shape_str(o.shape_));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<int> shape_;
  AlignedVector<T> data_;
};

}  // namespace lrvc
