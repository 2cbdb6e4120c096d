#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace fgs {

// Fixed 64-byte alignment. Eigen's vectorized kernels choose their
// unaligned head from the buffer address, so without it floating-point
// results would depend on where the heap happened to place a tensor.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

// NCHW extent. Unused leading dimensions are 1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense row-major NCHW tensor of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(Shape shape, Buffer data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }
  double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }

  // Pointer to the start of channel plane (n, c).
  double* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const double* plane(int n, int c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor reshaped(Shape shape) const;

  // Copy of samples [first, first + count).
  Tensor batch_slice(int first, int count) const;

  double sum() const;
  double max_abs() const;
  bool all_finite() const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_{0, 0, 0, 0};
  Buffer data_;
};

// Concatenate along the batch dimension.
Tensor stack_batch(std::span<const Tensor> parts);

}  // namespace fgs
