#include "zsil/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace zsil {

std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  values_ = ArrayX::Zero(shape_size(shape_));
}

Tensor::Tensor(std::vector<int> shape, ArrayX values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size())
    throw std::invalid_argument("tensor value count " + std::to_string(values_.size()) +
                                " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.values_ = ArrayX::Constant(1, v);
  return t;
}

Tensor Tensor::from_vector(const VectorX& v) {
  return Tensor({static_cast<int>(v.size())}, v.array());
}

Tensor Tensor::from_matrix(const MatrixX& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  MatrixMap(t.data(), m.rows(), m.cols()) = m;
  return t;
}

double Tensor::item() const {
  if (values_.size() != 1)
    throw std::invalid_argument("item() requires a scalar tensor, shape is " + shape_str(shape_));
  return values_[0];
}

MatrixMap Tensor::as_matrix() {
  if (rank() != 2) throw std::invalid_argument("as_matrix requires rank 2, shape is " + shape_str(shape_));
  return MatrixMap(data(), shape_[0], shape_[1]);
}

ConstMatrixMap Tensor::as_matrix() const {
  if (rank() != 2) throw std::invalid_argument("as_matrix requires rank 2, shape is " + shape_str(shape_));
  return ConstMatrixMap(data(), shape_[0], shape_[1]);
}

MatrixMap Tensor::as_rows() {
  if (rank() == 1) return MatrixMap(data(), 1, shape_[0]);
  if (rank() == 2) return MatrixMap(data(), shape_[0], shape_[1]);
  throw std::invalid_argument("expected a rank-1 or rank-2 tensor, shape is " + shape_str(shape_));
}

ConstMatrixMap Tensor::as_rows() const {
  if (rank() == 1) return ConstMatrixMap(data(), 1, shape_[0]);
  if (rank() == 2) return ConstMatrixMap(data(), shape_[0], shape_[1]);
  throw std::invalid_argument("expected a rank-1 or rank-2 tensor, shape is " + shape_str(shape_));
}

void Tensor::require_finite(const char* context) const {
  if (!all_finite())
    throw std::invalid_argument(std::string(context) + ": tensor contains NaN or Inf");
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (shape_size(new_shape) != values_.size())
    throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                                " changes element count");
  return Tensor(std::move(new_shape), values_);
}

}  // namespace zsil
