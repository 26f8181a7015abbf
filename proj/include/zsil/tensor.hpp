#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace zsil {

using ArrayX = Eigen::ArrayXd;
using VectorX = Eigen::VectorXd;
// Row-major matrices throughout: they alias directly onto Tensor storage.
using MatrixX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<MatrixX>;
using ConstMatrixMap = Eigen::Map<const MatrixX>;

std::int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Dense real array with a shape, stored flat in row-major order.
/// A rank-0 tensor (empty shape) holds exactly one value and is the scalar
/// produced by loss operations.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, ArrayX values);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor from_vector(const VectorX& v);
  static Tensor from_matrix(const MatrixX& m);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  Eigen::Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  ArrayX& values() { return values_; }
  const ArrayX& values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double operator[](Eigen::Index i) const { return values_[i]; }
  double& operator[](Eigen::Index i) { return values_[i]; }

  /// Value of a rank-0/size-1 tensor.
  double item() const;

  /// View a rank-2 tensor as a row-major matrix.
  MatrixMap as_matrix();
  ConstMatrixMap as_matrix() const;

  /// View as rows: rank-1 becomes 1 x n, rank-2 stays n x m.
  /// Loss and softmax ops accept both shapes through this view.
  MatrixMap as_rows();
  ConstMatrixMap as_rows() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const { return values_.isFinite().all(); }
  void require_finite(const char* context) const;

  /// Same data, new shape (element count must match).
  Tensor reshaped(std::vector<int> new_shape) const;

 private:
  std::vector<int> shape_;
  ArrayX values_;
};

}  // namespace zsil
