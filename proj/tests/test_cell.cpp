#include <doctest.h>

#include <cmath>

#include "mmnas/cell.hpp"
#include "testutil.hpp"

using namespace mmnas;
using testutil::max_abs_diff;
using testutil::max_grad_rel_err;
using testutil::random_tensor;

namespace {

ParamStore make_cell_store(int num_nodes, std::size_t channels, std::uint64_t seed = 1) {
  ParamStore store;
  Rng rng(seed);
  register_mixed_cell_params(store, rng, "cell/normal", num_nodes, channels);
  return store;
}

void saturate_edge(AlphaTable& alpha, CellType type, const CellEdge& edge, OpKind kind,
                   double logit = 40.0) {
  auto v = alpha.logits(type, edge).values();
  for (double& x : v) x = 0.0;
  v[static_cast<std::size_t>(kind)] = logit;
}

}  // namespace

TEST_SUITE_BEGIN("search_space");

TEST_CASE("edge enumeration follows the DAG layout") {
  const auto edges = cell_edges(4);
  CHECK(edges.size() == 14);  // sum over nodes j of (j + 2)
  CHECK(edges.front() == CellEdge{0, 2});
  CHECK(edges.back() == CellEdge{4, 5});
  CHECK(edge_key({1, 3}) == "edge_1_3");
}

TEST_CASE("uniform logits give weight 0.1 per op") {
  AlphaTable alpha(2);
  const auto w = alpha.mixed_weights(CellType::normal, {0, 2});
  REQUIRE(w.size() == 10);
  double sum = 0.0;
  for (double x : w) {
    CHECK(x == doctest::Approx(0.1).epsilon(1e-12));
    sum += x;
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("softmax shift invariance") {
  AlphaTable alpha(2);
  Rng rng(7);
  auto v = alpha.logits(CellType::normal, {1, 2}).values();
  for (double& x : v) x = rng.uniform(-3, 3);
  const auto before = alpha.mixed_weights(CellType::normal, {1, 2});
  for (double& x : v) x += 17.5;
  const auto after = alpha.mixed_weights(CellType::normal, {1, 2});
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i] == doctest::Approx(after[i]).epsilon(1e-12));
  }
}

TEST_CASE("single raised logit evaluates to e/(e+9)") {
  AlphaTable alpha(2);
  alpha.logits(CellType::normal, {0, 2}).values()[0] = 1.0;
  const auto w = alpha.mixed_weights(CellType::normal, {0, 2});
  const double expected = std::exp(1.0) / (std::exp(1.0) + 9.0);  // direct evaluation
  CHECK(w[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.2319694).epsilon(1e-5));
}

TEST_CASE("weights sum to one for random logits") {
  AlphaTable alpha(3);
  Rng rng(11);
  for (CellType type : {CellType::normal, CellType::reduction}) {
    for (const CellEdge& e : cell_edges(3)) {
      auto v = alpha.logits(type, e).values();
      for (double& x : v) x = rng.uniform(-10, 10);
      const auto w = alpha.mixed_weights(type, e);
      double sum = 0.0;
      for (double x : w) {
        CHECK(x >= 0.0);
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("skip-saturated mixed op reproduces the input") {
  ParamStore store = make_cell_store(2, 2);
  AlphaTable alpha(2);
  saturate_edge(alpha, CellType::normal, {0, 2}, OpKind::skip);
  Rng rng(13);
  Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
  Tensor y = mixed_op_forward(x, alpha.logits(CellType::normal, {0, 2}), store,
                              "cell/normal/edge_0_2");
  CHECK(max_abs_diff(x, y) <= 1e-12);
}

TEST_CASE("skip/zero two-op split yields half the input") {
  ParamStore store = make_cell_store(2, 2);
  AlphaTable alpha(2);
  auto v = alpha.logits(CellType::normal, {0, 2}).values();
  for (double& x : v) x = 0.0;
  v[static_cast<std::size_t>(OpKind::skip)] = 40.0;
  v[static_cast<std::size_t>(OpKind::zero)] = 40.0;
  Rng rng(17);
  Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
  Tensor y = mixed_op_forward(x, alpha.logits(CellType::normal, {0, 2}), store,
                              "cell/normal/edge_0_2");
  Tensor half = scale(x, 0.5);
  CHECK(max_abs_diff(half, y) <= 1e-12);
}

TEST_CASE("mixed op output matches the explicit weighted sum") {
  ParamStore store = make_cell_store(2, 2);
  AlphaTable alpha(2);
  Rng rng(19);
  auto v = alpha.logits(CellType::normal, {1, 2}).values();
  for (double& x : v) x = rng.uniform(-2, 2);
  Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
  Tensor got = mixed_op_forward(x, alpha.logits(CellType::normal, {1, 2}), store,
                                "cell/normal/edge_1_2");
  const auto w = alpha.mixed_weights(CellType::normal, {1, 2});
  Tensor want = Tensor::zeros(x.shape());
  for (int o = 0; o < kNumOpKinds; ++o) {
    const OpKind kind = all_op_kinds()[static_cast<std::size_t>(o)];
    Tensor term = apply_op(kind, x, store,
                           "cell/normal/edge_1_2/" + std::string(op_kind_name(kind)));
    for (std::size_t i = 0; i < want.numel(); ++i) {
      want.values()[i] += w[static_cast<std::size_t>(o)] * term.values()[i];
    }
  }
  CHECK(max_abs_diff(got, want) <= 1e-10);
}

TEST_CASE("mixed op gradient w.r.t. alpha matches finite differences") {
  ParamStore store = make_cell_store(2, 2, 23);
  AlphaTable alpha(2);
  Rng rng(23);
  Tensor& logits = alpha.logits(CellType::normal, {0, 2});
  auto lv = logits.values();
  for (double& x : lv) x = rng.uniform(-1, 1);
  Tensor x = random_tensor({1, 2, 4, 4, 4}, rng, 0.2, 1.0);
  Tensor probe = random_tensor({1, 2, 4, 4, 4}, rng);
  auto loss_fn = [&] {
    return sum_all(mul(
        mixed_op_forward(x, logits, store, "cell/normal/edge_0_2"), probe));
  };
  CHECK(max_grad_rel_err(loss_fn, logits, 1, 1e-6) < 1e-4);
}

TEST_CASE("node with skip-saturated input edges sums its inputs") {
  ParamStore store = make_cell_store(1, 2);
  AlphaTable alpha(1);
  saturate_edge(alpha, CellType::normal, {0, 2}, OpKind::skip);
  saturate_edge(alpha, CellType::normal, {1, 2}, OpKind::skip);
  Rng rng(29);
  Tensor in0 = random_tensor({1, 2, 4, 4, 4}, rng);
  Tensor in1 = random_tensor({1, 2, 4, 4, 4}, rng);
  std::vector<Tensor> preds{in0, in1};
  Tensor got = node_forward(2, preds, CellType::normal, alpha, store, "cell/normal");
  Tensor want = add(in0, in1);
  CHECK(max_abs_diff(got, want) <= 1e-10);
}

TEST_CASE("all edges zero-saturated give a zero node") {
  ParamStore store = make_cell_store(1, 2);
  AlphaTable alpha(1);
  saturate_edge(alpha, CellType::normal, {0, 2}, OpKind::zero);
  saturate_edge(alpha, CellType::normal, {1, 2}, OpKind::zero);
  Rng rng(31);
  std::vector<Tensor> preds{random_tensor({1, 2, 4, 4, 4}, rng),
                            random_tensor({1, 2, 4, 4, 4}, rng)};
  Tensor got = node_forward(2, preds, CellType::normal, alpha, store, "cell/normal");
  for (double v : got.values()) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("three-predecessor node equals brute-force edge summation") {
  ParamStore store = make_cell_store(2, 2, 37);
  AlphaTable alpha(2);
  Rng rng(37);
  for (const CellEdge& e : cell_edges(2)) {
    auto v = alpha.logits(CellType::normal, e).values();
    for (double& x : v) x = rng.uniform(-2, 2);
  }
  std::vector<Tensor> preds{random_tensor({1, 2, 4, 4, 4}, rng),
                            random_tensor({1, 2, 4, 4, 4}, rng),
                            random_tensor({1, 2, 4, 4, 4}, rng)};
  Tensor got = node_forward(3, preds, CellType::normal, alpha, store, "cell/normal");
  Tensor want = Tensor::zeros(got.shape());
  for (int src = 0; src < 3; ++src) {
    Tensor term = mixed_op_forward(preds[static_cast<std::size_t>(src)],
                                   alpha.logits(CellType::normal, {src, 3}), store,
                                   "cell/normal/" + edge_key({src, 3}));
    for (std::size_t i = 0; i < want.numel(); ++i) want.values()[i] += term.values()[i];
  }
  CHECK(max_abs_diff(got, want) <= 1e-12);
}

TEST_CASE("missing predecessor is an error") {
  ParamStore store = make_cell_store(2, 2);
  AlphaTable alpha(2);
  Rng rng(41);
  std::vector<Tensor> preds{random_tensor({1, 2, 4, 4, 4}, rng)};
  CHECK_THROWS_WITH_AS(node_forward(3, preds, CellType::normal, alpha, store, "cell/normal"),
                       doctest::Contains("predecessor"), std::invalid_argument);
}

TEST_CASE("cell output concatenates node channels") {
  const int m = 4;
  ParamStore store;
  Rng rng(43);
  register_mixed_cell_params(store, rng, "cell/normal", m, 2);
  AlphaTable alpha(m);
  Tensor in0 = random_tensor({1, 2, 4, 4, 4}, rng);
  Tensor in1 = random_tensor({1, 2, 4, 4, 4}, rng);
  Tensor out = cell_forward(CellType::normal, m, in0, in1, alpha, store, "cell/normal");
  CHECK(out.shape() == Shape{1, 8, 4, 4, 4});
}

TEST_CASE("cell emits nodes times node channels at unchanged resolution") {
  const int m = 2;
  ParamStore store;
  Rng rng(47);
  register_mixed_cell_params(store, rng, "cell/normal", m, 4);
  AlphaTable alpha(m);
  Tensor in0 = random_tensor({1, 4, 4, 4, 4}, rng);
  Tensor in1 = random_tensor({1, 4, 4, 4, 4}, rng);
  Tensor out = cell_forward(CellType::normal, m, in0, in1, alpha, store, "cell/normal");
  CHECK(out.shape() == Shape{1, 8, 4, 4, 4});
  CHECK_THROWS_AS(cell_forward(CellType::normal, m, in0,
                               random_tensor({1, 4, 4, 4, 5}, rng), alpha, store, "cell/normal"),
                  std::invalid_argument);
}

TEST_CASE("cell gradient through a scalar head matches finite differences on alpha") {
  const int m = 2;
  ParamStore store;
  Rng rng(53);
  register_mixed_cell_params(store, rng, "cell/normal", m, 1);
  AlphaTable alpha(m);
  for (const CellEdge& e : cell_edges(m)) {
    auto v = alpha.logits(CellType::normal, e).values();
    for (double& x : v) x = rng.uniform(-1, 1);
  }
  Tensor in0 = random_tensor({1, 1, 4, 4, 4}, rng, 0.1, 1.0);
  Tensor in1 = random_tensor({1, 1, 4, 4, 4}, rng, 0.1, 1.0);
  Tensor probe = random_tensor({1, 2, 4, 4, 4}, rng);
  auto loss_fn = [&] {
    return sum_all(
        mul(cell_forward(CellType::normal, m, in0, in1, alpha, store, "cell/normal"), probe));
  };
  for (const CellEdge& e : cell_edges(m)) {
    CHECK(max_grad_rel_err(loss_fn, alpha.logits(CellType::normal, e), 1, 1e-6) < 1e-4);
  }
}

TEST_CASE("argmax-level shift invariance extends to weights") {
  AlphaTable alpha(2);
  Rng rng(59);
  for (const CellEdge& e : cell_edges(2)) {
    auto v = alpha.logits(CellType::normal, e).values();
    for (double& x : v) x = rng.uniform(-4, 4);
  }
  AlphaTable shifted = alpha.clone();
  for (const CellEdge& e : cell_edges(2)) {
    auto v = shifted.logits(CellType::normal, e).values();
    for (double& x : v) x += 123.0;
  }
  for (const CellEdge& e : cell_edges(2)) {
    const auto a = alpha.mixed_weights(CellType::normal, e);
    const auto b = shifted.mixed_weights(CellType::normal, e);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  }
}

TEST_CASE("cell output is linear in one edge's mixed weights") {
  // freeze op parameters; rescaling one edge's weight vector scales that
  // edge's contribution exactly
  ParamStore store = make_cell_store(1, 2, 61);
  AlphaTable alpha(1);
  Rng rng(61);
  Tensor x0 = random_tensor({1, 2, 4, 4, 4}, rng);
  Tensor x1 = random_tensor({1, 2, 4, 4, 4}, rng);
  auto forward = [&] {
    std::vector<Tensor> preds{x0, x1};
    return node_forward(2, preds, CellType::normal, alpha, store, "cell/normal");
  };
  Tensor base = forward();
  // contribution of edge (0,2) via the weighted sum identity
  const auto w = alpha.mixed_weights(CellType::normal, {0, 2});
  Tensor edge_contrib = Tensor::zeros(base.shape());
  for (int o = 0; o < kNumOpKinds; ++o) {
    const OpKind kind = all_op_kinds()[static_cast<std::size_t>(o)];
    Tensor term =
        apply_op(kind, x0, store, "cell/normal/edge_0_2/" + std::string(op_kind_name(kind)));
    for (std::size_t i = 0; i < edge_contrib.numel(); ++i) {
      edge_contrib.values()[i] += w[static_cast<std::size_t>(o)] * term.values()[i];
    }
  }
  // recompute with the other edge zero-saturated: only edge (0,2) remains
  saturate_edge(alpha, CellType::normal, {1, 2}, OpKind::zero, 600.0);
  Tensor only_edge0 = forward();
  CHECK(max_abs_diff(only_edge0, edge_contrib) <= 1e-10);
}

TEST_CASE("alpha table is shared across cells of the same type") {
  ParamStore store;
  Rng rng(67);
  register_mixed_cell_params(store, rng, "cell/a", 1, 2);
  ParamStore twin = store.clone();  // identical op parameters, separate storage
  AlphaTable alpha(1);
  Rng data(68);
  Tensor in0 = random_tensor({1, 2, 4, 4, 4}, data);
  Tensor in1 = random_tensor({1, 2, 4, 4, 4}, data);
  auto run = [&](const ParamStore& params) {
    return cell_forward(CellType::normal, 1, in0, in1, alpha, params, "cell/a");
  };
  Tensor before_a = run(store);
  Tensor before_b = run(twin);
  CHECK(max_abs_diff(before_a, before_b) == 0.0);
  // mutate the shared alpha: both cells move identically
  alpha.logits(CellType::normal, {0, 2}).values()[0] = 3.0;
  Tensor after_a = run(store);
  Tensor after_b = run(twin);
  CHECK(max_abs_diff(after_a, after_b) == 0.0);
  CHECK(max_abs_diff(before_a, after_a) > 0.0);
}

TEST_CASE("alpha snapshot round-trips through the container") {
  AlphaTable alpha(3);
  Rng rng(71);
  for (CellType type : {CellType::normal, CellType::reduction}) {
    for (const CellEdge& e : cell_edges(3)) {
      auto v = alpha.logits(type, e).values();
      for (double& x : v) x = rng.uniform(-5, 5);
    }
  }
  const auto path = std::filesystem::temp_directory_path() / "mmnas_tests" / "alpha.mmp";
  std::filesystem::create_directories(path.parent_path());
  alpha.save(path);
  AlphaTable loaded = AlphaTable::load(path);
  CHECK(loaded.num_nodes() == 3);
  CHECK(loaded.content_hash() == alpha.content_hash());
}

TEST_SUITE_END();
