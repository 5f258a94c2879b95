#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sra/errors.hpp"

namespace sra {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major tensor. Batches of images are laid out NCHW.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (Index d : shape_) {
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }
    values_ = Array::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Scalar fill) : Tensor(std::move(shape)) { values_.setConstant(fill); }

  Tensor(Shape shape, std::initializer_list<Scalar> init) : Tensor(std::move(shape)) {
    if (static_cast<Index>(init.size()) != size()) {
      throw ShapeError("initializer size does not match " + shape_string(shape_));
    }
    std::copy(init.begin(), init.end(), values_.data());
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }
  Array& values() { return values_; }
  const Array& values() const { return values_; }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(values_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(values_.data(), rows, cols);
  }

  /// Leading extent as rows, the rest flattened as columns.
  MatrixMap rows_view() { return matrix(shape_.empty() ? 1 : shape_[0], shape_.empty() ? 1 : size() / shape_[0]); }
  ConstMatrixMap rows_view() const {
    return matrix(shape_.empty() ? 1 : shape_[0], shape_.empty() ? 1 : size() / shape_[0]);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.values_ = values_;
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.values() = values_.template cast<Other>();
    return out;
  }

  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.values_ == b.values_).all();
  }

 private:
  void check_view(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " does not cover " + shape_string(shape_));
    }
  }

  Shape shape_;
  Array values_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace sra
