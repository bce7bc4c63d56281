#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crash/error.hpp"

namespace crash::diff {

/// Extents of a dense tensor, rank 0..4. Rank 0 is a scalar holding one value.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) {
    if (dims.size() > kMaxRank) throw DimensionError("Shape: rank exceeds 4");
    for (std::size_t d : dims) push_back(d);
  }

  void push_back(std::size_t extent) {
    if (rank_ == kMaxRank) throw DimensionError("Shape: rank exceeds 4");
    if (extent == 0) throw DimensionError("Shape: extents must be positive");
    dims_[rank_++] = extent;
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t back() const { return dims_[rank_ - 1]; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  /// Product of extents in [begin, end).
  std::size_t span_numel(std::size_t begin, std::size_t end) const {
    std::size_t n = 1;
    for (std::size_t i = begin; i < end; ++i) n *= dims_[i];
    return n;
  }

  /// Copy with axis `axis` removed.
  Shape without(std::size_t axis) const {
    Shape s;
    for (std::size_t i = 0; i < rank_; ++i)
      if (i != axis) s.push_back(dims_[i]);
    return s;
  }

  /// Copy with the last extent replaced.
  Shape with_back(std::size_t extent) const {
    Shape s = *this;
    if (extent == 0) throw DimensionError("Shape: extents must be positive");
    s.dims_[rank_ - 1] = extent;
    return s;
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "x" : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Dense row-major tensor of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.numel(), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const {
    if (data_.size() != 1) throw DimensionError("Tensor::item on non-scalar " + shape_.str());
    return data_[0];
  }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape.numel() != data_.size())
      throw DimensionError("Tensor::reshaped: " + shape_.str() + " -> " + shape.str());
    return Tensor(shape, data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()))
    throw DimensionError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!(a.shape() == b.shape()))
    throw DimensionError(std::string(where) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

}  // namespace crash::diff
