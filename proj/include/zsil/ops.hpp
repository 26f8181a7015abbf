#pragma once

#include "zsil/tensor.hpp"

namespace zsil {

/// Floor applied inside the log of cross_entropy.
inline constexpr double kLogClamp = 1e-12;

/// Row-wise temperature softmax, numerically stabilized by max subtraction.
/// Accepts rank-1 or rank-2 (batched) input; output has the same shape.
Tensor softmax_with_temperature(const Tensor& logits, double tau);

/// -sum(target * log(max(pred, 1e-12))), averaged over batch rows.
/// Both arguments must have the same shape and rows summing to 1 (1e-6).
double cross_entropy(const Tensor& pred_probs, const Tensor& target_probs);

/// sum((a - b)^2) over the class axis, averaged over batch rows.
double squared_l2(const Tensor& a, const Tensor& b);

// Kernels shared with the graph ops.
MatrixX softmax_rows(ConstMatrixMap z, double tau);
double cross_entropy_rows(ConstMatrixMap pred, ConstMatrixMap target);
double squared_l2_rows(ConstMatrixMap a, ConstMatrixMap b);

}  // namespace zsil
