#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dehaze/error.hpp"

namespace dehaze {

/// NCHW extents. Every tensor in the network code is rank 4; scalars are 1x1x1x1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw InvalidArgument("negative tensor extent " + shape.str());
    }
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.numel()) {
      throw InvalidArgument("tensor data size does not match shape " + shape.str());
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(int n, int c, int h, int w) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(int n, int c, int h, int w) noexcept { return data_[index(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const noexcept { return data_[index(n, c, h, w)]; }

  /// Pointer to the H*W plane of (n, c).
  T* plane(int n, int c) noexcept { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const noexcept { return data_.data() + index(n, c, 0, 0); }

  /// Pointer to sample n (C*H*W contiguous values).
  T* sample(int n) noexcept { return data_.data() + index(n, 0, 0, 0); }
  const T* sample(int n) const noexcept { return data_.data() + index(n, 0, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  T item() const {
    if (data_.size() != 1) throw InvalidArgument("item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  /// Exact element-wise equality, shapes included.
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

}  // namespace dehaze
