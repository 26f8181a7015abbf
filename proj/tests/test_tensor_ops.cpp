#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "testutil.hpp"
#include "zsil/ops.hpp"
#include "zsil/rng.hpp"
#include "zsil/tensor.hpp"

#include <cmath>
#include <stdexcept>

using namespace zsil;

TEST_CASE("tensor shape and value count stay consistent") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor({2, 3}, ArrayX::Zero(5)), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(t.reshaped({4}), std::invalid_argument);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK(Tensor::scalar(1.0).rank() == 0);
}

TEST_CASE("tensor finiteness guard") {
  Tensor t({2});
  t[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK(!t.all_finite());
  CHECK_THROWS_AS(t.require_finite("test"), std::invalid_argument);
}

TEST_CASE("softmax with temperature matches closed forms") {
  // symmetric logits
  Tensor p = softmax_with_temperature(Tensor({2}, ArrayX::Zero(2)), 20.0);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

  // e/(e+1) at gap/tau = 1
  Tensor z2({2});
  z2[0] = 2.0;
  const double expect = std::exp(1.0) / (std::exp(1.0) + 1.0);
  Tensor q = softmax_with_temperature(z2, 2.0);
  CHECK(q[0] == doctest::Approx(expect).epsilon(1e-5));
  CHECK(q[1] == doctest::Approx(1.0 - expect).epsilon(1e-5));

  // the scaling identity puts [20,0] at tau=20 on the same point
  Tensor z20({2});
  z20[0] = 20.0;
  Tensor r = softmax_with_temperature(z20, 20.0);
  CHECK(r[0] == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("softmax rejects nonpositive temperature") {
  CHECK_THROWS_AS(softmax_with_temperature(Tensor({2}), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_with_temperature(Tensor({2}), -1.0), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one under extreme logit magnitudes") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = test::random_tensor({4, 6}, rng, -1e4, 1e4);
    Tensor p = softmax_with_temperature(z, trial % 2 ? 1.0 : 20.0);
    auto rows = p.as_rows();
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      CHECK(rows.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(rows.row(r).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("softmax temperature equals softmax of scaled logits") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const double tau = rng.uniform(0.5, 30.0);
    Tensor z = test::random_tensor({3, 5}, rng, -50.0, 50.0);
    Tensor scaled(z.shape(), z.values() / tau);
    Tensor a = softmax_with_temperature(z, tau);
    Tensor b = softmax_with_temperature(scaled, 1.0);
    CHECK((a.values() - b.values()).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("cross entropy matches hand evaluations") {
  Tensor perfect({2});
  perfect[0] = 1.0;
  Tensor onehot = perfect;
  CHECK(cross_entropy(perfect, onehot) == doctest::Approx(0.0).epsilon(1e-9));

  Tensor uniform({2});
  uniform[0] = uniform[1] = 0.5;
  CHECK(cross_entropy(uniform, onehot) == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  Tensor pred({2});
  pred[0] = 0.8;
  pred[1] = 0.2;
  Tensor target({2});
  target[0] = target[1] = 0.5;
  CHECK(cross_entropy(pred, target) ==
        doctest::Approx(-0.5 * (std::log(0.8) + std::log(0.2))).epsilon(1e-5));
  CHECK(cross_entropy(pred, target) == doctest::Approx(0.916291).epsilon(1e-5));
}

TEST_CASE("cross entropy validates shapes and row sums") {
  Tensor a({2});
  a[0] = 1.0;
  CHECK_THROWS_AS(cross_entropy(a, Tensor({3})), std::invalid_argument);
  Tensor bad({2});
  bad[0] = 0.9;  // row sums to 0.9
  CHECK_THROWS_AS(cross_entropy(bad, a), std::invalid_argument);
}

TEST_CASE("cross entropy averages over batch rows") {
  Tensor pred({2, 2});
  pred.as_matrix() << 0.5, 0.5, 0.25, 0.75;
  Tensor target({2, 2});
  target.as_matrix() << 1.0, 0.0, 0.0, 1.0;
  const double expect = 0.5 * (-std::log(0.5) - std::log(0.75));
  CHECK(cross_entropy(pred, target) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("squared l2 forced values") {
  Tensor a({2});
  a[0] = 1.0;
  a[1] = 2.0;
  Tensor zero({2});
  CHECK(squared_l2(a, a) == 0.0);
  CHECK(squared_l2(a, zero) == doctest::Approx(5.0).epsilon(1e-12));
  Tensor b({2});
  b[0] = 3.0;
  b[1] = 4.0;
  CHECK(squared_l2(b, zero) == doctest::Approx(25.0).epsilon(1e-12));
  CHECK_THROWS_AS(squared_l2(a, Tensor({3})), std::invalid_argument);
}

TEST_CASE("squared l2 sums classes and averages rows") {
  Tensor a({2, 2});
  a.as_matrix() << 1.0, 2.0, 3.0, 4.0;
  Tensor b({2, 2});
  CHECK(squared_l2(a, b) == doctest::Approx((5.0 + 25.0) / 2.0).epsilon(1e-12));
}
