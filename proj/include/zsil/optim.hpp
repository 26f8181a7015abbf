#pragma once

#include "zsil/tensor.hpp"

#include <cmath>

namespace zsil {

inline void sgd_step(Tensor& param, const Tensor& grad, double lr) {
  param.values() -= lr * grad.values();
}

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ArrayX m;
  ArrayX v;
  long t = 0;

  explicit AdamState(Eigen::Index n) : m(ArrayX::Zero(n)), v(ArrayX::Zero(n)) {}
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
                      const AdamConfig& cfg) {
  ++state.t;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad.values();
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.values().square();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  param.values() -= cfg.lr * (state.m / c1) / ((state.v / c2).sqrt() + cfg.eps);
}

}  // namespace zsil
