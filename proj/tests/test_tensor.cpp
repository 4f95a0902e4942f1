#include <doctest.h>

#include <cmath>

#include "mmnas/optim.hpp"
#include "mmnas/param_store.hpp"
#include "mmnas/tensor.hpp"
#include "testutil.hpp"

using namespace mmnas;
using testutil::rel_err;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("relu definition") {
  Tensor x = Tensor::from_values({2}, {-1.0, 2.0});
  Tensor y = relu(x);
  CHECK(y.values()[0] == 0.0);
  CHECK(y.values()[1] == 2.0);
}

TEST_CASE("add arithmetic") {
  Tensor a = Tensor::from_values({2}, {1.0, 2.0});
  Tensor b = Tensor::from_values({2}, {3.0, 4.0});
  Tensor c = add(a, b);
  CHECK(c.values()[0] == 4.0);
  CHECK(c.values()[1] == 6.0);
}

TEST_CASE("add shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 4});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
  try {
    add(a, b);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("[2,4]") != std::string::npos);
  }
}

TEST_CASE("derivative of sum(x*x)") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor loss = sum_all(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward on sum gives unit gradients") {
  Tensor x = Tensor::from_values({3}, {5.0, -1.0, 2.0}, true);
  Tape tape;
  Tensor loss = sum_all(x);
  tape.backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("fan-out accumulates gradients") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor y = add(x, x);
  tape.backward(sum_all(y));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor y = add(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("tape consumable exactly once") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor loss = sum_all(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
}

TEST_CASE("gradients untouched for unrelated tensors") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor unrelated = Tensor::from_values({2}, {7.0, 8.0}, true);
  Tape tape;
  tape.backward(sum_all(mul(x, x)));
  CHECK(x.has_grad());
  CHECK(!unrelated.has_grad());
}

TEST_CASE("gradient accumulation is exact across terms") {
  Rng rng(11);
  Tensor x = testutil::random_tensor({5}, rng, -2.0, 2.0, true);
  // grad of f + g equals grad f plus grad g
  auto grad_of = [&](bool with_f, bool with_g) {
    x.zero_grad();
    Tape tape;
    std::vector<Tensor> parts;
    if (with_f) parts.push_back(sum_all(mul(x, x)));
    if (with_g) parts.push_back(sum_all(relu(x)));
    Tensor loss = parts.size() == 1 ? parts[0] : add(parts[0], parts[1]);
    tape.backward(loss);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  auto gf = grad_of(true, false);
  auto gg = grad_of(false, true);
  auto gfg = grad_of(true, true);
  for (std::size_t i = 0; i < gf.size(); ++i) CHECK(gfg[i] == gf[i] + gg[i]);
}

TEST_CASE("forward determinism is bitwise") {
  auto run = [] {
    Rng rng(42);
    Tensor x = testutil::random_tensor({4, 4}, rng);
    Tensor y = relu(scale(mul(x, x), 0.37));
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  CHECK(run() == run());
}

TEST_CASE("elementwise gradients match finite differences over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Tensor x = testutil::random_tensor({6}, rng, 0.1, 2.0, true);  // clear of the relu kink
    Tensor y = testutil::random_tensor({6}, rng, -2.0, -0.1, true);
    auto loss_fn = [&] { return sum_all(mul(relu(x), scale(add(mul(x, y), y), 0.7))); };
    CHECK(testutil::max_grad_rel_err(loss_fn, x) < 1e-5);
    CHECK(testutil::max_grad_rel_err(loss_fn, y) < 1e-5);
  }
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("optim");

TEST_CASE("sgd single step arithmetic") {
  ParamStore store;
  Tensor& p = store.create("p", {1});
  p.values()[0] = 1.0;
  {
    Tape tape;
    tape.backward(scale(p, 0.2));  // d/dp = 0.2
  }
  SgdOptimizer sgd(0.0001);
  sgd.step_all(store);
  CHECK(p.values()[0] == doctest::Approx(0.99998).epsilon(1e-12));
  CHECK(!p.has_grad());  // cleared after step
}

TEST_CASE("adam first step approximates lr * sign(g)") {
  ParamStore store;
  Tensor& p = store.create("p", {1});
  {
    Tape tape;
    tape.backward(scale(p, 0.5));  // g = 0.5
  }
  AdamOptimizer adam(0.001);
  adam.step_all(store);
  // hand-evaluated recurrence, step 1: mhat = 0.5, vhat = 0.25,
  // delta = lr * 0.5 / (0.5 + 1e-8)
  const double expected = -0.001 * 0.5 / (0.5 + 1e-8);
  CHECK(p.values()[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.values()[0] == doctest::Approx(-0.001).epsilon(1e-5));
}

TEST_CASE("zero gradient is a fixed point for both optimizers") {
  for (int kind = 0; kind < 2; ++kind) {
    ParamStore store;
    Tensor& p = store.create("p", {2});
    p.values()[0] = 3.0;
    p.values()[1] = -1.5;
    {
      Tape tape;
      tape.backward(scale(sum_all(p), 0.0));  // gradient exactly zero
    }
    if (kind == 0) {
      SgdOptimizer(0.1).step_all(store);
    } else {
      AdamOptimizer(0.1).step_all(store);
    }
    CHECK(p.values()[0] == 3.0);
    CHECK(p.values()[1] == -1.5);
  }
}

TEST_CASE("missing gradient names the parameter") {
  ParamStore store;
  store.create("stem/kernel", {2});
  SgdOptimizer sgd(0.1);
  CHECK_THROWS_WITH_AS(sgd.step_all(store), doctest::Contains("stem/kernel"), std::runtime_error);
}

TEST_SUITE_END();
