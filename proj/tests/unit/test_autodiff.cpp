#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"
#include "strdan/autodiff.hpp"
#include "support.hpp"

using namespace strdan;
using strdan::ad::Graph;
using strdan::ad::Node;

namespace {

// Analytic gradient of `leaf` against test-side central differences.
double check_against_oracle(const ad::GraphBuilder& build, const std::string& leaf,
                            const Tensor& point, const ad::Bindings& fixed = {}) {
  const auto fn = ad::graph_function(build, leaf, fixed);
  const auto analytic = fn(point);
  auto scalar = [&](const std::vector<double>& x) {
    return fn(Tensor(point.rows(), point.cols(), x)).value;
  };
  const auto numeric = oracle::numeric_gradient(scalar, point.values(), 1e-5);
  return oracle::max_relative_error(analytic.gradient.values(), numeric);
}

}  // namespace

TEST_CASE("relu forward clips negatives") {
  Graph g;
  Node x = g.input("x");
  Node y = g.relu(x);
  g.forward({{"x", Tensor::row({-1, 2})}});
  CHECK(g.value(y) == Tensor::row({0, 2}));
}

TEST_CASE("identity matmul returns its input") {
  Graph g;
  Node x = g.input("x");
  Node eye = g.variable("eye", Tensor::identity(2));
  Node y = g.matmul(x, eye);
  g.forward({{"x", Tensor::row({3, 4})}});
  CHECK(g.value(y) == Tensor::row({3, 4}));
}

TEST_CASE("two-layer mlp matches hand multiplication") {
  Graph g;
  Node x = g.input("x");
  Node w1 = g.variable("w1", Tensor::from_rows({{1, -1}, {2, 0.5}}));
  Node b1 = g.variable("b1", Tensor::row({0.5, -3}));
  Node w2 = g.variable("w2", Tensor::from_rows({{1}, {-2}}));
  Node b2 = g.variable("b2", Tensor::row({0.25}));
  Node h = g.relu(g.add_bias(g.matmul(x, w1), b1));
  Node y = g.add_bias(g.matmul(h, w2), b2);
  g.forward({{"x", Tensor::row({1, 2})}});
  // h = relu([1 + 4 + 0.5, -1 + 1 - 3]) = [5.5, 0]; y = 5.5 + 0.25
  CHECK(g.value(h) == Tensor::row({5.5, 0}));
  CHECK(g.scalar(y) == doctest::Approx(5.75).epsilon(1e-15));
}

TEST_CASE("gradient of a sum is all ones") {
  Graph g;
  Node x = g.input("x");
  Node s = g.sum(x);
  g.forward({{"x", Tensor::from_rows({{1, 2, 3}, {4, 5, 6}})}});
  const auto grads = g.backward(s);
  CHECK(grads.at("x") == Tensor(2, 3, 1.0));
}

TEST_CASE("gradient of half the squared norm is the point") {
  Graph g;
  Node x = g.input("x");
  Node loss = g.scale(g.sum(g.mul(x, x)), 0.5);
  g.forward({{"x", Tensor::row({3, -2})}});
  CHECK(g.scalar(loss) == 6.5);
  CHECK(g.backward(loss).at("x") == Tensor::row({3, -2}));
}

TEST_CASE("mlp with cross-entropy passes the finite-difference oracle") {
  Rng rng(11);
  const Tensor x = test::random_tensor(rng, 5, 4);
  const Tensor w2 = test::random_tensor(rng, 6, 3);
  auto build = [&](Graph& g) {
    Node in = g.input("x");
    Node w1 = g.input("w1");
    Node h = g.relu(g.matmul(in, w1));
    Node logits = g.matmul(h, g.variable("w2", w2));
    return g.softmax_cross_entropy(logits, {0, 2, 1, 1, 0});
  };
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w1 = test::random_tensor(rng, 4, 6);
    CHECK(check_against_oracle(build, "w1", w1, {{"x", x}}) < 1e-4);
  }
}

TEST_CASE("gradient reversal") {
  SUBCASE("forward is the identity") {
    Graph g;
    Node x = g.input("x");
    Node y = g.grad_reversal(x, 0.5);
    g.forward({{"x", Tensor::row({1, 2, 3})}});
    CHECK(g.value(y) == Tensor::row({1, 2, 3}));
  }
  SUBCASE("backward multiplies by minus lambda") {
    Graph g;
    Node x = g.input("x");
    Node loss = g.sum(g.grad_reversal(x, 1.0));
    g.forward({{"x", Tensor::row({0.3, -7})}});
    CHECK(g.backward(loss).at("x") == Tensor::row({-1, -1}));
  }
  SUBCASE("lambda zero detaches") {
    Graph g;
    Node x = g.input("x");
    Node loss = g.sum(g.mul(g.grad_reversal(x, 0.0), g.grad_reversal(x, 0.0)));
    g.forward({{"x", Tensor::row({0.3, -7})}});
    const auto grad = g.backward(loss).at("x");
    for (double v : grad.values()) CHECK(v == 0.0);
  }
  SUBCASE("negative lambda is rejected") {
    Graph g;
    Node x = g.input("x");
    CHECK_THROWS_AS(g.grad_reversal(x, -1.0), ValueError);
  }
}

TEST_CASE("finite_difference_check") {
  SUBCASE("quadratic is exact up to rounding") {
    auto fn = [](const Tensor& x) {
      ad::ValueAndGradient out;
      out.value = x[0] * x[0];
      out.gradient = Tensor(1, 1, 2.0 * x[0]);
      return out;
    };
    CHECK(ad::finite_difference_check(fn, Tensor(1, 1, 2.0), 1e-5) < 1e-8);
  }
  SUBCASE("reports a wrong gradient") {
    auto fn = [](const Tensor& x) {
      ad::ValueAndGradient out;
      out.value = x[0] * x[0];
      out.gradient = Tensor(1, 1, 3.0 * x[0]);
      return out;
    };
    CHECK(ad::finite_difference_check(fn, Tensor(1, 1, 2.0), 1e-5) > 0.1);
  }
  SUBCASE("cross-entropy on random logits") {
    Rng rng(3);
    auto build = [](Graph& g) { return g.softmax_cross_entropy(g.input("z"), {1, 0, 3}); };
    const Tensor z = test::random_tensor(rng, 3, 4, 2.0);
    CHECK(ad::finite_difference_check(ad::graph_function(build, "z"), z, 1e-5) < 1e-4);
  }
  SUBCASE("triplet loss away from ties") {
    Rng rng(4);
    auto build = [](Graph& g) {
      return g.triplet_batch_hard(g.input("e"), {0, 0, 1, 1, 2, 2}, {1.0});
    };
    const Tensor e = test::random_tensor(rng, 6, 3);
    CHECK(ad::finite_difference_check(ad::graph_function(build, "e"), e, 1e-5) < 1e-4);
  }
  SUBCASE("rejects a non-positive step") {
    auto fn = [](const Tensor& x) { return ad::ValueAndGradient{x[0], Tensor(1, 1, 1.0)}; };
    CHECK_THROWS_AS(ad::finite_difference_check(fn, Tensor(1, 1, 0.0), 0.0), ValueError);
  }
}

TEST_CASE("errors name the failing node") {
  SUBCASE("shape mismatch") {
    Graph g;
    Node a = g.input("a");
    Node b = g.input("b");
    g.matmul(a, b);
    try {
      g.forward({{"a", Tensor(2, 3)}, {"b", Tensor(2, 3)}});
      FAIL("expected a NodeError");
    } catch (const ad::NodeError& e) {
      CHECK(e.node().find("matmul") != std::string::npos);
    }
  }
  SUBCASE("non-finite input") {
    Graph g;
    g.relu(g.input("x"));
    CHECK_THROWS_AS(g.forward({{"x", Tensor::row({1, NAN})}}), ValueError);
  }
  SUBCASE("unbound input") {
    Graph g;
    g.relu(g.input("x"));
    CHECK_THROWS_AS(g.forward(), ad::NodeError);
  }
  SUBCASE("backward before forward") {
    Graph g;
    Node s = g.sum(g.input("x"));
    CHECK_THROWS_AS(g.backward(s), Error);
  }
  SUBCASE("backward from a non-scalar") {
    Graph g;
    Node x = g.relu(g.input("x"));
    g.forward({{"x", Tensor::row({1, 2})}});
    CHECK_THROWS_AS(g.backward(x), ad::NodeError);
  }
  SUBCASE("label outside the class range") {
    Graph g;
    g.softmax_cross_entropy(g.input("z"), {0, 3});
    CHECK_THROWS_AS(g.forward({{"z", Tensor(2, 3)}}), ValueError);
  }
}

TEST_CASE("leaves off the loss path get zero gradients") {
  Graph g;
  Node x = g.input("x");
  Node unused = g.variable("unused", Tensor::row({5, 5}));
  g.relu(unused);
  Node loss = g.sum(x);
  g.forward({{"x", Tensor::row({1, 2})}});
  const auto grads = g.backward(loss);
  CHECK(grads.at("unused") == Tensor(1, 2, 0.0));
}

TEST_CASE("a node shared by two paths accumulates both") {
  Graph g;
  Node x = g.input("x");
  Node loss = g.add(g.sum(x), g.scale(g.sum(x), 2.0));
  g.forward({{"x", Tensor::row({1, 2})}});
  CHECK(g.backward(loss).at("x") == Tensor::row({3, 3}));
}

TEST_CASE("forward is deterministic") {
  Rng rng(9);
  const Tensor x = test::random_tensor(rng, 4, 3);
  auto run = [&]() {
    Graph g;
    Node e = g.l2_normalize_rows(g.relu(g.input("x")));
    g.forward({{"x", x}});
    return g.value(e);
  };
  CHECK(run() == run());
}
