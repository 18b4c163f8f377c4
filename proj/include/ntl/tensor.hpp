#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace ntl {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// Dense row-major double tensor. The last axis varies fastest (C order), so a
// (N, C, H, W) image batch stores pixel (n, c, h, w) at
// ((n * C + c) * H + h) * W + w.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::initializer_list<std::int64_t> shape);

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor from_vector(std::vector<std::int64_t> shape, std::vector<double> values);

  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double& at2(std::int64_t r, std::int64_t c) {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }
  double at2(std::int64_t r, std::int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }

  // Views the tensor as a (rows, cols) row-major matrix; rows * cols must
  // equal size().
  MatMap mat(std::int64_t rows, std::int64_t cols);
  ConstMatMap mat(std::int64_t rows, std::int64_t cols) const;
  // 2-D tensors: view with their own shape.
  MatMap mat();
  ConstMatMap mat() const;
  VecMap flat() { return VecMap(data_.data(), size()); }
  ConstVecMap flat() const { return ConstVecMap(data_.data(), size()); }

  Tensor reshaped(std::vector<std::int64_t> new_shape) const;
  void fill(double value);
  void zero() { fill(0.0); }

  // Elementwise accumulate: *this += scale * other (shapes must match).
  void add_(const Tensor& other);
  void add_(const Tensor& other, double scale);
  void scale_(double s);

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

std::int64_t shape_product(const std::vector<std::int64_t>& shape);

}  // namespace ntl
