// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "loretta/error.hpp"

namespace loretta {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

/// Dense row-major n-way array. A rank-2 tensor doubles as a matrix with
/// shape {rows, cols}.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_numel(shape_), ErrorCode::ShapeMismatch,
            "payload of " + std::to_string(data_.size()) + " entries does not fill shape " +
                shape_to_string(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
    return Tensor(Shape{rows, cols}, fill);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * shape_[1] + c];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Tensor reshaped(Shape shape) const {
    require(shape_numel(shape) == data_.size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

namespace dense {

/// C[m,n] += A[m,k] * B[k,n] over raw row-major buffers.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(), ErrorCode::DimensionMismatch,
          "matmul " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  Tensor<T> c = Tensor<T>::matrix(a.rows(), b.cols());
  gemm_acc(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() == 2, ErrorCode::DimensionMismatch, "transpose expects a matrix");
  Tensor<T> t = Tensor<T>::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <typename T>
std::vector<T> matvec(const Tensor<T>& a, std::span<const T> x) {
  require(a.rank() == 2 && a.cols() == x.size(), ErrorCode::DimensionMismatch,
          "matvec " + shape_to_string(a.shape()) + " x " + std::to_string(x.size()));
  std::vector<T> y(a.rows(), T{0});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T acc{0};
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

template <typename T>
double frobenius_norm(const Tensor<T>& a) {
  double s = 0.0;
  for (const T& v : a.values()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

template <typename T>
double frobenius_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch, "frobenius_distance shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch, "max_abs_diff length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace dense
}  // namespace loretta
