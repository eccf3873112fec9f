#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "jcae/common.hpp"

namespace jcae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Dense row-major array with an optional gradient buffer of the same shape.
///
/// Activations use N,C,H,W order and kernels O,I,kH,kW.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element of a rank-4 tensor.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool has_grad() const noexcept { return grad_enabled_; }
  void enable_grad() {
    if (!grad_enabled_ || grad_.size() != data_.size()) grad_.assign(data_.size(), T{0});
    grad_enabled_ = true;
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T{0}); }
  void drop_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
    grad_enabled_ = false;
  }
  std::span<T> grad() noexcept { return grad_; }
  std::span<const T> grad() const noexcept { return grad_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Same data viewed under a new shape with the same element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  /// Exact equality of shape and values (gradients ignored).
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
  bool grad_enabled_ = false;
};

inline void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(shape));
  }
}

}  // namespace jcae
