#include "ntl/tensor.hpp"

#include <algorithm>

#include "ntl/errors.hpp"

namespace ntl {

std::int64_t shape_product(const std::vector<std::int64_t>& shape) {
  std::int64_t p = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("tensor dimensions must be non-negative");
    p *= d;
  }
  return p;
}

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::initializer_list<std::int64_t> shape)
    : Tensor(std::vector<std::int64_t>(shape)) {}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::from_vector(std::vector<std::int64_t> shape, std::vector<double> values) {
  if (shape_product(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("from_vector: value count does not match shape");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

MatMap Tensor::mat(std::int64_t rows, std::int64_t cols) {
  if (rows * cols != size()) throw DimensionError("mat: rows*cols != size");
  return MatMap(data_.data(), rows, cols);
}

ConstMatMap Tensor::mat(std::int64_t rows, std::int64_t cols) const {
  if (rows * cols != size()) throw DimensionError("mat: rows*cols != size");
  return ConstMatMap(data_.data(), rows, cols);
}

MatMap Tensor::mat() {
  if (ndim() != 2) throw DimensionError("mat(): tensor is not 2-D");
  return mat(shape_[0], shape_[1]);
}

ConstMatMap Tensor::mat() const {
  if (ndim() != 2) throw DimensionError("mat(): tensor is not 2-D");
  return mat(shape_[0], shape_[1]);
}

Tensor Tensor::reshaped(std::vector<std::int64_t> new_shape) const {
  if (shape_product(new_shape) != size()) {
    throw DimensionError("reshaped: element count mismatch");
  }
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

void Tensor::fill(double value) {
  std::fill(data_.begin(), data_.end(), value);
}

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other)) throw DimensionError("add_: shape mismatch");
  flat() += other.flat();
}

void Tensor::add_(const Tensor& other, double scale) {
  if (!same_shape(other)) throw DimensionError("add_: shape mismatch");
  flat() += scale * other.flat();
}

void Tensor::scale_(double s) {
  flat() *= s;
}

}  // namespace ntl
