#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "malfuse/error.hpp"

namespace malfuse::nn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

/// "2x3x4"
std::string shape_string(const Shape& shape);

/// Per-sample shape in the HxWxC notation of the architecture tables:
/// (C,H,W) prints as "HxWxC", a flat (F) as "F".
std::string hwc_string(const Shape& per_sample);

/// Dense row-major n-dimensional array. Batched tensors put the sample index
/// first; image tensors are (N, C, H, W).
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_size(shape_))) {}
  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw Error(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) + " does not fill shape " +
                                                shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(std::size_t i) const { return shape_.at(i); }
  Index size() const { return data_.size(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  MatrixMap matrix(Index rows, Index cols) { return MatrixMap(data_.data(), rows, cols); }
  ConstMatrixMap matrix(Index rows, Index cols) const { return ConstMatrixMap(data_.data(), rows, cols); }

  /// (N, rest...) viewed as N x prod(rest).
  MatrixMap batch_matrix() { return matrix(shape_.at(0), size() / shape_.at(0)); }
  ConstMatrixMap batch_matrix() const { return matrix(shape_.at(0), size() / shape_.at(0)); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  void set_zero() { data_.setZero(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  /// Samples [begin, end) of a batched tensor.
  Tensor slice(Index begin, Index end) const {
    Shape s = shape_;
    s[0] = end - begin;
    const Index per = size() / shape_[0];
    return Tensor(std::move(s), data_.segment(begin * per, (end - begin) * per));
  }

  /// Samples at `rows` (batched tensor), in that order.
  template <typename Indices>
  Tensor gather(const Indices& rows) const {
    Shape s = shape_;
    s[0] = static_cast<Index>(rows.size());
    const Index per = size() / shape_[0];
    Tensor out(std::move(s));
    Index k = 0;
    for (auto r : rows) out.data_.segment(k++ * per, per) = data_.segment(static_cast<Index>(r) * per, per);
    return out;
  }

 private:
  Shape shape_;
  Vector data_;
};

}  // namespace malfuse::nn
