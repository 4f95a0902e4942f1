#include <doctest.h>

#include <cmath>

#include "mmnas/nn.hpp"
#include "testutil.hpp"

using namespace mmnas;
using testutil::max_abs_diff;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

TEST_SUITE_BEGIN("nn");

TEST_CASE("linear identity map") {
  Tensor x = Tensor::from_values({1, 2}, {1.0, 2.0});
  Tensor w = Tensor::from_values({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor b = Tensor::zeros({2});
  Tensor y = linear(x, w, b);
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 2.0);
}

TEST_CASE("linear arithmetic") {
  Tensor x = Tensor::from_values({1, 2}, {1.0, 1.0});
  Tensor w = Tensor::from_values({1, 2}, {2.0, 3.0});
  Tensor b = Tensor::from_values({1}, {1.0});
  CHECK(linear(x, w, b).values()[0] == 6.0);
}

TEST_CASE("linear dimension mismatch") {
  Tensor x = Tensor::zeros({1, 3});
  Tensor w = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({2});
  CHECK_THROWS_AS(linear(x, w, b), std::invalid_argument);
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(3);
  Tensor x = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor w = random_tensor({2, 4}, rng, -1, 1, true);
  Tensor b = random_tensor({2}, rng, -1, 1, true);
  auto loss_fn = [&] { return sum_all(mul(linear(x, w, b), linear(x, w, b))); };
  CHECK(max_grad_rel_err(loss_fn, x) < 1e-5);
  CHECK(max_grad_rel_err(loss_fn, w) < 1e-5);
  CHECK(max_grad_rel_err(loss_fn, b) < 1e-5);
}

TEST_CASE("normalize3d centers a constant volume") {
  Tensor x = Tensor::full({1, 2, 2, 2, 2}, 3.7);
  Tensor gamma = Tensor::full({2}, 1.0);
  Tensor beta = Tensor::zeros({2});
  Tensor y = normalize3d(x, gamma, beta);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("normalize3d affine override") {
  Rng rng(5);
  Tensor x = random_tensor({1, 2, 2, 2, 2}, rng);
  Tensor gamma = Tensor::zeros({2});
  Tensor beta = Tensor::full({2}, 5.0);
  Tensor y = normalize3d(x, gamma, beta);
  for (double v : y.values()) CHECK(v == doctest::Approx(5.0));
}

TEST_CASE("normalize3d gradients match finite differences") {
  Rng rng(7);
  Tensor x = random_tensor({2, 2, 2, 2, 3}, rng, -1, 1, true);
  Tensor gamma = random_tensor({2}, rng, 0.5, 1.5, true);
  Tensor beta = random_tensor({2}, rng, -0.5, 0.5, true);
  Tensor probe = random_tensor({2, 2, 2, 2, 3}, rng);  // breaks symmetry in the loss
  auto loss_fn = [&] { return sum_all(mul(normalize3d(x, gamma, beta), probe)); };
  CHECK(max_grad_rel_err(loss_fn, x) < 1e-5);
  CHECK(max_grad_rel_err(loss_fn, gamma) < 1e-5);
  CHECK(max_grad_rel_err(loss_fn, beta) < 1e-5);
}

TEST_CASE("softmax_cross_entropy uniform case") {
  Tensor logits = Tensor::zeros({1, 2});
  std::vector<int> labels{0};
  CHECK(softmax_cross_entropy(logits, labels).value() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("softmax_cross_entropy gradient is softmax minus one-hot") {
  Tensor logits = Tensor::zeros({1, 2}, true);
  std::vector<int> labels{0};
  Tape tape;
  tape.backward(softmax_cross_entropy(logits, labels));
  CHECK(logits.grad()[0] == doctest::Approx(-0.5));
  CHECK(logits.grad()[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax_cross_entropy is log-sum-exp stabilized") {
  Tensor logits = Tensor::from_values({1, 2}, {10.0, -10.0});
  std::vector<int> labels{0};
  const double loss = softmax_cross_entropy(logits, labels).value();
  const double reference = std::log1p(std::exp(-20.0));  // high-precision scalar route
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(reference).epsilon(1e-12));
  CHECK(loss == doctest::Approx(2.06e-9).epsilon(1e-2));
}

TEST_CASE("softmax_cross_entropy stays finite for large logits") {
  for (double mag : {1.0, 10.0, 100.0, 1000.0}) {
    Tensor logits = Tensor::from_values({2, 2}, {mag, -mag, -mag, mag});
    std::vector<int> labels{0, 0};
    CHECK(std::isfinite(softmax_cross_entropy(logits, labels).value()));
  }
}

TEST_CASE("softmax_cross_entropy rejects out-of-range labels") {
  Tensor logits = Tensor::zeros({1, 2});
  std::vector<int> labels{2};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, labels), std::invalid_argument);
}

TEST_CASE("conv3d matches the direct reference on mixed geometries") {
  Rng rng(17);
  struct Case {
    Shape x, w;
    Conv3dSpec spec;
  };
  const Case cases[] = {
      {{1, 1, 4, 4, 4}, {1, 1, 3, 3, 3}, {1, 1, 1, 1}},
      {{2, 3, 5, 4, 6}, {4, 3, 3, 3, 3}, {1, 1, 1, 1}},
      {{1, 2, 6, 6, 6}, {2, 2, 5, 5, 5}, {1, 2, 1, 1}},
      {{1, 2, 8, 8, 8}, {2, 2, 3, 3, 3}, {1, 2, 2, 1}},   // dilated
      {{1, 4, 6, 6, 6}, {4, 1, 3, 3, 3}, {1, 1, 1, 4}},   // depthwise
      {{2, 3, 8, 8, 8}, {5, 3, 1, 1, 1}, {2, 0, 1, 1}},   // strided pointwise
      {{1, 2, 9, 9, 9}, {3, 2, 3, 3, 3}, {3, 1, 1, 1}},   // stride 3
  };
  for (const Case& c : cases) {
    Tensor x = random_tensor(c.x, rng);
    Tensor w = random_tensor(c.w, rng);
    Tensor got = conv3d(x, w, c.spec);
    Tensor want = testutil::conv3d_reference(x, w, c.spec);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("conv3d gradients match finite differences") {
  Rng rng(19);
  Tensor x = random_tensor({1, 2, 4, 4, 4}, rng, -1, 1, true);
  Tensor w = random_tensor({2, 2, 3, 3, 3}, rng, -1, 1, true);
  Tensor probe = random_tensor({1, 2, 4, 4, 4}, rng);
  auto loss_fn = [&] { return sum_all(mul(conv3d(x, w, {1, 1, 1, 1}), probe)); };
  CHECK(max_grad_rel_err(loss_fn, x) < 1e-5);
  CHECK(max_grad_rel_err(loss_fn, w) < 1e-5);
  // strided + dilated path
  Tensor w2 = random_tensor({2, 2, 3, 3, 3}, rng, -1, 1, true);
  Tensor x2 = random_tensor({1, 2, 8, 8, 8}, rng, -1, 1, true);
  auto loss2 = [&] { return sum_all(conv3d(x2, w2, {2, 2, 2, 1})); };
  CHECK(max_grad_rel_err(loss2, x2, 7) < 1e-5);
  CHECK(max_grad_rel_err(loss2, w2) < 1e-5);
}

TEST_CASE("global_avg_pool and concat_channels") {
  Rng rng(23);
  Tensor a = random_tensor({2, 2, 2, 2, 2}, rng, -1, 1, true);
  Tensor b = random_tensor({2, 3, 2, 2, 2}, rng, -1, 1, true);
  std::vector<Tensor> xs{a, b};
  Tensor cat = concat_channels(xs);
  REQUIRE(cat.shape() == Shape{2, 5, 2, 2, 2});
  // channel slices preserved
  CHECK(cat.at({0, 0, 0, 0, 0}) == a.at({0, 0, 0, 0, 0}));
  CHECK(cat.at({0, 2, 1, 1, 1}) == b.at({0, 0, 1, 1, 1}));
  CHECK(cat.at({1, 4, 0, 1, 0}) == b.at({1, 2, 0, 1, 0}));
  Tensor pooled = global_avg_pool(cat);
  REQUIRE(pooled.shape() == Shape{2, 5});
  Tensor probe = random_tensor({2, 5}, rng);
  auto loss_fn = [&] {
    std::vector<Tensor> items{a, b};
    return sum_all(mul(global_avg_pool(concat_channels(items)), probe));
  };
  CHECK(max_grad_rel_err(loss_fn, a) < 1e-5);
  CHECK(max_grad_rel_err(loss_fn, b) < 1e-5);
}

TEST_CASE("softmax_vector and weighted_sum gradients") {
  Rng rng(29);
  Tensor logits = random_tensor({4}, rng, -2, 2, true);
  std::vector<Tensor> items;
  for (int i = 0; i < 4; ++i) items.push_back(random_tensor({2, 3}, rng, -1, 1, true));
  Tensor probe = random_tensor({2, 3}, rng);
  auto loss_fn = [&] {
    Tensor w = softmax_vector(logits);
    return sum_all(mul(weighted_sum(w, items), probe));
  };
  CHECK(max_grad_rel_err(loss_fn, logits) < 1e-5);
  CHECK(max_grad_rel_err(loss_fn, items[0]) < 1e-5);
  CHECK(max_grad_rel_err(loss_fn, items[3]) < 1e-5);
}

TEST_SUITE_END();
