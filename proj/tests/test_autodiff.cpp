#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "testutil.hpp"
#include "zsil/graph.hpp"
#include "zsil/ops.hpp"
#include "zsil/rng.hpp"

#include <cstring>
#include <stdexcept>

using namespace zsil;
using test::LeafValues;

TEST_CASE("squared l2 against zero gives 2w") {
  Graph g;
  Tensor w({2});
  w[0] = 1.0;
  w[1] = 2.0;
  const NodeId wid = g.parameter("w", w);
  const NodeId loss = g.squared_l2(wid, g.constant(Tensor({2})));
  GradientMap grads = g.backward(loss, {"w"});
  CHECK(grads.at("w")[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(grads.at("w")[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("disconnected leaf gets a zero gradient") {
  Graph g;
  const NodeId w = g.parameter("w", Tensor({2}, ArrayX::Ones(2)));
  g.parameter("unused", Tensor({3}, ArrayX::Ones(3)));
  const NodeId loss = g.squared_l2(w, g.constant(Tensor({2})));
  GradientMap grads = g.backward(loss, {"w", "unused"});
  CHECK(grads.at("unused").values().abs().maxCoeff() == 0.0);
  CHECK(grads.at("unused").shape() == std::vector<int>{3});
}

TEST_CASE("backward rejects unknown leaves and non-scalar losses") {
  Graph g;
  const NodeId w = g.parameter("w", Tensor({2}, ArrayX::Ones(2)));
  const NodeId r = g.relu(w);
  CHECK_THROWS_AS(g.backward(r, {"w"}), std::invalid_argument);  // rank-1 loss
  const NodeId loss = g.squared_l2(w, g.constant(Tensor({2})));
  CHECK_THROWS_AS(g.backward(loss, {"nope"}), std::out_of_range);
}

TEST_CASE("duplicate leaf names are rejected") {
  Graph g;
  g.parameter("w", Tensor({1}, ArrayX::Ones(1)));
  CHECK_THROWS_AS(g.input("w", Tensor({1})), std::invalid_argument);
}

TEST_CASE("backward is deterministic bit for bit") {
  Rng rng(3);
  Graph g;
  const NodeId x = g.input("x", test::random_tensor({4, 3}, rng));
  const NodeId w = g.parameter("w", test::random_tensor({3, 2}, rng));
  const NodeId b = g.parameter("b", test::random_tensor({2}, rng));
  const NodeId probs = g.softmax_temperature(g.dense(x, w, b), 2.0);
  Tensor target({4, 2});
  for (int r = 0; r < 4; ++r) target[r * 2 + (r % 2)] = 1.0;
  const NodeId loss = g.cross_entropy(probs, g.constant(target));

  GradientMap g1 = g.backward(loss, {"x", "w", "b"});
  GradientMap g2 = g.backward(loss, {"x", "w", "b"});
  for (const auto& [name, t] : g1) {
    CHECK(std::memcmp(t.data(), g2.at(name).data(),
                      static_cast<std::size_t>(t.size()) * sizeof(double)) == 0);
  }
}

namespace {

// Rebuild-and-evaluate closures for finite differencing.

double dense_softmax_ce_loss(const LeafValues& v) {
  Graph g;
  const NodeId x = g.input("x", v.at("x"));
  const NodeId w = g.parameter("w", v.at("w"));
  const NodeId b = g.parameter("b", v.at("b"));
  const NodeId probs = g.softmax_temperature(g.dense(x, w, b), 1.0);
  return g.value(g.cross_entropy(probs, g.constant(v.at("target")))).item();
}

double conv_pipeline_loss(const LeafValues& v) {
  Graph g;
  const NodeId x = g.input("x", v.at("x"));
  const NodeId w = g.parameter("w", v.at("w"));
  const NodeId b = g.parameter("b", v.at("b"));
  const NodeId conv = g.conv2d(x, w, b);
  const NodeId pooled = g.avg_pool(g.relu(conv), 2);
  const NodeId flat = g.flatten(pooled);
  return g.value(g.squared_l2(flat, g.constant(v.at("ref")))).item();
}

double select_softmax_loss(const LeafValues& v) {
  Graph g;
  const NodeId x = g.input("x", v.at("x"));
  const NodeId picked = g.select_columns(x, {3, 0, 2});
  const NodeId probs = g.softmax_temperature(picked, 20.0);
  return g.value(g.cross_entropy(probs, g.constant(v.at("target")))).item();
}

double combined_scalar_loss(const LeafValues& v) {
  Graph g;
  const NodeId a = g.input("a", v.at("a"));
  const NodeId b = g.input("b", v.at("b"));
  const NodeId ce = g.cross_entropy(g.softmax_temperature(a, 1.0), g.constant(v.at("target")));
  const NodeId kd = g.squared_l2(b, g.constant(v.at("ref")));
  return g.value(g.add(ce, g.scale(kd, 0.3))).item();
}

}  // namespace

TEST_CASE("finite differences: dense + softmax + cross entropy") {
  Rng rng(11);
  Rng probe_rng(12);
  for (int trial = 0; trial < 4; ++trial) {
    LeafValues v;
    v["x"] = test::random_tensor({3, 4}, rng);
    v["w"] = test::random_tensor({4, 3}, rng);
    v["b"] = test::random_tensor({3}, rng);
    Tensor target({3, 3});
    for (int r = 0; r < 3; ++r) target[r * 3 + (r % 3)] = 1.0;
    v["target"] = target;

    Graph g;
    const NodeId x = g.input("x", v.at("x"));
    const NodeId w = g.parameter("w", v.at("w"));
    const NodeId b = g.parameter("b", v.at("b"));
    const NodeId probs = g.softmax_temperature(g.dense(x, w, b), 1.0);
    const NodeId loss = g.cross_entropy(probs, g.constant(v.at("target")));
    GradientMap grads = g.backward(loss, {"x", "w", "b"});

    auto fd = test::check_gradients(dense_softmax_ce_loss, v, grads, 12, probe_rng);
    CHECK(fd.failures == 0);
    CHECK(fd.probes >= 36);
  }
}

TEST_CASE("finite differences: conv + relu + avgpool + flatten + l2") {
  Rng rng(21);
  Rng probe_rng(22);
  LeafValues v;
  v["x"] = test::random_tensor({2, 2, 4, 4}, rng);
  v["w"] = test::random_tensor({3, 2, 3, 3}, rng);
  v["b"] = test::random_tensor({3}, rng);
  v["ref"] = test::random_tensor({2, 12}, rng);

  Graph g;
  const NodeId x = g.input("x", v.at("x"));
  const NodeId w = g.parameter("w", v.at("w"));
  const NodeId b = g.parameter("b", v.at("b"));
  const NodeId conv = g.conv2d(x, w, b);
  const NodeId pooled = g.avg_pool(g.relu(conv), 2);
  const NodeId flat = g.flatten(pooled);
  const NodeId loss = g.squared_l2(flat, g.constant(v.at("ref")));
  GradientMap grads = g.backward(loss, {"x", "w", "b"});

  auto fd = test::check_gradients(conv_pipeline_loss, v, grads, 40, probe_rng);
  CHECK(fd.failures == 0);
  CHECK(fd.probes >= 120);
}

TEST_CASE("finite differences: column selection under high temperature") {
  Rng rng(31);
  Rng probe_rng(32);
  LeafValues v;
  v["x"] = test::random_tensor({2, 5}, rng, -5.0, 5.0);
  Tensor target({2, 3});
  target[0] = 1.0;
  target[5] = 1.0;
  v["target"] = target;

  Graph g;
  const NodeId x = g.input("x", v.at("x"));
  const NodeId picked = g.select_columns(x, {3, 0, 2});
  const NodeId probs = g.softmax_temperature(picked, 20.0);
  const NodeId loss = g.cross_entropy(probs, g.constant(v.at("target")));
  GradientMap grads = g.backward(loss, {"x"});

  auto fd = test::check_gradients(select_softmax_loss, v, grads, 30, probe_rng);
  CHECK(fd.failures == 0);
}

TEST_CASE("finite differences: weighted sum of losses") {
  Rng rng(41);
  Rng probe_rng(42);
  LeafValues v;
  v["a"] = test::random_tensor({2, 3}, rng);
  v["b"] = test::random_tensor({2, 4}, rng);
  Tensor target({2, 3});
  target[1] = 1.0;
  target[3] = 1.0;
  v["target"] = target;
  v["ref"] = test::random_tensor({2, 4}, rng);

  Graph g;
  const NodeId a = g.input("a", v.at("a"));
  const NodeId b = g.input("b", v.at("b"));
  const NodeId ce = g.cross_entropy(g.softmax_temperature(a, 1.0), g.constant(v.at("target")));
  const NodeId kd = g.squared_l2(b, g.constant(v.at("ref")));
  const NodeId loss = g.add(ce, g.scale(kd, 0.3));
  GradientMap grads = g.backward(loss, {"a", "b"});

  auto fd = test::check_gradients(combined_scalar_loss, v, grads, 20, probe_rng);
  CHECK(fd.failures == 0);
}

TEST_CASE("graph ops validate shapes") {
  Graph g;
  const NodeId x = g.input("x", Tensor({2, 3}));
  const NodeId w = g.parameter("w", Tensor({4, 2}));
  CHECK_THROWS_AS(g.dense(x, w, g.constant(Tensor({2}))), std::invalid_argument);
  CHECK_THROWS_AS(g.select_columns(x, {5}), std::invalid_argument);
  CHECK_THROWS_AS(g.avg_pool(x, 2), std::invalid_argument);  // rank 2
  const NodeId img = g.input("img", Tensor({1, 1, 3, 3}));
  CHECK_THROWS_AS(g.avg_pool(img, 2), std::invalid_argument);  // not divisible
  CHECK_THROWS_AS(g.conv2d(img, g.constant(Tensor({1, 1, 2, 2})), g.constant(Tensor({1}))),
                  std::invalid_argument);  // even kernel
}
