#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace softattr {

using Shape = std::vector<Eigen::Index>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Eigen::Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                         std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/**
 * Dense row-major tensor. Rank-3 image tensors are laid out H x W x C, so
 * element (i, j, k) lives at flat index (i * W + j) * C + k.
 */
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_ = Vector::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Vector data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw Error("tensor data length " + std::to_string(data_.size()) +
                  " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor vector(std::initializer_list<Scalar> values) {
    Vector v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (Scalar x : values) v[i++] = x;
    const Eigen::Index n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor from_vector(const Vector& v) { return Tensor({v.size()}, v); }

  const Shape& shape() const { return shape_; }
  Eigen::Index rank() const { return static_cast<Eigen::Index>(shape_.size()); }
  Eigen::Index dim(std::size_t axis) const { return shape_.at(axis); }
  Eigen::Index size() const { return data_.size(); }

  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  Scalar operator[](Eigen::Index i) const { return data_[i]; }
  Scalar& operator[](Eigen::Index i) { return data_[i]; }

  Scalar at(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar& at(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// View a rank-3 H x W x C tensor as an (H*W) x C row-major matrix.
  Eigen::Map<const RowMatrix> pixels() const {
    return {data_.data(), shape_.at(0) * shape_.at(1), shape_.at(2)};
  }
  Eigen::Map<RowMatrix> pixels() {
    return {data_.data(), shape_.at(0) * shape_.at(1), shape_.at(2)};
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    for (Eigen::Index e : shape_) {
      if (e <= 0) throw Error("tensor extents must be positive: " + shape_string(shape_));
    }
  }

  Shape shape_;
  Vector data_;
};

using TensorD = Tensor<double>;

/// Max absolute elementwise difference; shapes must agree.
template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw Error("shape mismatch " + shape_string(a.shape()) + " vs " +
                shape_string(b.shape()));
  }
  if (a.size() == 0) return Scalar(0);
  return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

}  // namespace softattr
