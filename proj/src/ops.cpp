#include "zsil/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace zsil {

MatrixX softmax_rows(ConstMatrixMap z, double tau) {
  MatrixX out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    out.row(r) = ((z.row(r).array() - m) / tau).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

double cross_entropy_rows(ConstMatrixMap pred, ConstMatrixMap target) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    acc -= (target.row(r).array() * pred.row(r).array().max(kLogClamp).log()).sum();
  return acc / static_cast<double>(pred.rows());
}

double squared_l2_rows(ConstMatrixMap a, ConstMatrixMap b) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) acc += (a.row(r) - b.row(r)).squaredNorm();
  return acc / static_cast<double>(a.rows());
}

Tensor softmax_with_temperature(const Tensor& logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("softmax_with_temperature: tau must be positive");
  logits.require_finite("softmax_with_temperature");
  Tensor out(logits.shape());
  out.as_rows() = softmax_rows(logits.as_rows(), tau);
  return out;
}

static void check_prob_rows(ConstMatrixMap p, const char* what) {
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    if (std::abs(p.row(r).sum() - 1.0) > 1e-6)
      throw std::invalid_argument(std::string("cross_entropy: ") + what + " row " +
                                  std::to_string(r) + " does not sum to 1");
}

double cross_entropy(const Tensor& pred_probs, const Tensor& target_probs) {
  if (!pred_probs.same_shape(target_probs))
    throw std::invalid_argument("cross_entropy: shape mismatch " + shape_str(pred_probs.shape()) +
                                " vs " + shape_str(target_probs.shape()));
  pred_probs.require_finite("cross_entropy");
  target_probs.require_finite("cross_entropy");
  check_prob_rows(pred_probs.as_rows(), "pred");
  check_prob_rows(target_probs.as_rows(), "target");
  return cross_entropy_rows(pred_probs.as_rows(), target_probs.as_rows());
}

double squared_l2(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("squared_l2: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  a.require_finite("squared_l2");
  b.require_finite("squared_l2");
  return squared_l2_rows(a.as_rows(), b.as_rows());
}

}  // namespace zsil
