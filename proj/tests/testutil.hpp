#pragma once

#include "zsil/graph.hpp"
#include "zsil/rng.hpp"
#include "zsil/tensor.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace zsil::test {

using LeafValues = std::map<std::string, Tensor>;

/// Rebuilds a scalar loss from leaf values; the closure owns the graph
/// structure so central differences can re-evaluate at perturbed points.
using LossFn = std::function<double(const LeafValues&)>;

struct FdCheck {
  long probes = 0;
  long failures = 0;
  double worst_abs = 0.0;
  double worst_rel = 0.0;
};

/// Central finite differences against analytic gradients at randomly probed
/// coordinates; tolerance max(1e-4 abs, 1e-3 rel).
inline FdCheck check_gradients(const LossFn& loss, const LeafValues& at,
                               const GradientMap& analytic, long probes_per_leaf, Rng& rng,
                               double step = 1e-4) {
  FdCheck result;
  for (const auto& [name, grad] : analytic) {
    const Tensor& base = at.at(name);
    for (long p = 0; p < probes_per_leaf; ++p) {
      const auto i = static_cast<Eigen::Index>(rng.uniform_int(
          static_cast<std::uint64_t>(base.size())));
      LeafValues plus = at, minus = at;
      plus.at(name)[i] += step;
      minus.at(name)[i] -= step;
      const double fd = (loss(plus) - loss(minus)) / (2.0 * step);
      const double g = grad[i];
      const double abs_err = std::abs(fd - g);
      const double rel_err = abs_err / std::max(std::abs(fd), std::abs(g));
      ++result.probes;
      result.worst_abs = std::max(result.worst_abs, abs_err);
      if (abs_err > 1e-4 && rel_err > 1e-3) {
        ++result.failures;
        result.worst_rel = std::max(result.worst_rel, rel_err);
      }
    }
  }
  return result;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace zsil::test
