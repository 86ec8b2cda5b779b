#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ppcn/error.hpp"

namespace ppcn {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense N x C x H x W array, row-major with W fastest.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
      throw StructuralError("negative tensor dimension " + shape.str());
  }
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  /// Contiguous H*W plane of sample n, channel c.
  std::span<T> plane(int n, int c) {
    return {data_.data() + offset(n, c, 0, 0), shape_.plane()};
  }
  std::span<const T> plane(int n, int c) const {
    return {data_.data() + offset(n, c, 0, 0), shape_.plane()};
  }
  /// All C planes of sample n.
  std::span<T> sample(int n) {
    return {data_.data() + offset(n, 0, 0, 0), shape_.plane() * shape_.c};
  }
  std::span<const T> sample(int n) const {
    return {data_.data() + offset(n, 0, 0, 0), shape_.plane() * shape_.c};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Traps NaN/Inf in debug builds; no-op with NDEBUG.
template <typename T>
inline void debug_check_finite(const Tensor<T>& t, const char* where) {
#ifndef NDEBUG
  if (!t.all_finite()) throw NumericalError(std::string("non-finite value after ") + where);
#else
  (void)t;
  (void)where;
#endif
}

inline void require_shape(const Shape& got, const Shape& want, const char* what) {
  if (!(got == want))
    throw StructuralError(std::string(what) + ": expected " + want.str() + ", got " + got.str());
}

}  // namespace ppcn
