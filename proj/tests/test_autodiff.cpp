#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "metsk/autodiff.hpp"
#include "metsk/optim.hpp"

using namespace metsk;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Random weights so the loss is not symmetric in the output entries.
Var weighted_sum(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(y.shape(), rng);
  return sum(mul(y, y.tape().constant(w)));
}

void check_op(const std::string& name, std::vector<Shape> shapes,
              std::function<Var(std::span<const Var>)> op, int points, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(std::hash<std::string>{}(name));
  for (int i = 0; i < points; ++i) {
    std::vector<Tensor> params;
    for (const auto& s : shapes) params.push_back(random_tensor(s, rng, lo, hi));
    const auto seed = rng();
    LossFunction fn = [&](Tape&, std::span<const Var> v) { return weighted_sum(op(v), seed); };
    auto report = finite_diff_check(fn, params, 1e-6);
    INFO(name << " point " << i);
    CHECK(report.max_relative_error < 1e-4);
    CHECK(report.checked > 0);
  }
}

}  // namespace

TEST_CASE("x*x at 3 has gradient 6") {
  LossFunction fn = [](Tape&, std::span<const Var> v) { return sum(v[0] * v[0]); };
  const std::vector<Tensor> p{Tensor::scalar(3.0)};
  auto g = grad(fn, p);
  CHECK(g[0].item() == 6.0);
}

TEST_CASE("constant loss gives zero gradients") {
  LossFunction fn = [](Tape& t, std::span<const Var>) { return t.constant(Tensor::scalar(5.0)); };
  const std::vector<Tensor> p{Tensor::vector({1, 2}), Tensor::matrix(2, 2, {1, 2, 3, 4})};
  auto g = grad(fn, p);
  REQUIRE(g.size() == 2);
  CHECK(g[0].bitwise_equal(Tensor({2}, 0.0)));
  CHECK(g[1].bitwise_equal(Tensor({2, 2}, 0.0)));
}

TEST_CASE("non-scalar loss and non-differentiable ops are rejected") {
  LossFunction vec = [](Tape&, std::span<const Var> v) { return v[0] * v[0]; };
  const std::vector<Tensor> p{Tensor::vector({1, 2})};
  CHECK_THROWS_AS(grad(vec, p), ValidationError);

  LossFunction am = [](Tape&, std::span<const Var> v) { return sum(argmax_rows(v[0])); };
  const std::vector<Tensor> m{Tensor::matrix(2, 2, {1, 2, 4, 3})};
  try {
    grad(am, m);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("argmax_rows") != std::string::npos);
  }
}

TEST_CASE("relu derivative at zero is zero") {
  LossFunction fn = [](Tape&, std::span<const Var> v) { return sum(relu(v[0])); };
  const std::vector<Tensor> p{Tensor::vector({-1.0, 0.0, 2.0})};
  auto g = grad(fn, p);
  CHECK(g[0][0] == 0.0);
  CHECK(g[0][1] == 0.0);
  CHECK(g[0][2] == 1.0);
}

TEST_CASE("gradients are bitwise reproducible") {
  std::mt19937_64 rng(1);
  const std::vector<Tensor> p{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  LossFunction fn = [](Tape&, std::span<const Var> v) { return sum(exp(matmul(v[0], v[1]))); };
  auto g1 = grad(fn, p), g2 = grad(fn, p);
  CHECK(g1[0].bitwise_equal(g2[0]));
  CHECK(g1[1].bitwise_equal(g2[1]));
}

TEST_CASE("softmax rows are distributions") {
  Tape t;
  std::mt19937_64 rng(4);
  auto x = t.leaf(random_tensor({5, 3}, rng, -30, 30));
  auto s = softmax_rows(x).value();
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(s[i * 3 + j] >= 0.0);
      row += s[i * 3 + j];
    }
    CHECK(std::abs(row - 1.0) < 1e-12);
  }
}

TEST_CASE("every primitive matches central differences") {
  constexpr int kPoints = 100;
  check_op("add", {{3, 2}, {3, 2}}, [](auto v) { return add(v[0], v[1]); }, kPoints);
  check_op("sub", {{3, 2}, {3, 2}}, [](auto v) { return sub(v[0], v[1]); }, kPoints);
  check_op("mul", {{3, 2}, {3, 2}}, [](auto v) { return mul(v[0], v[1]); }, kPoints);
  check_op("scale", {{4}}, [](auto v) { return scale(v[0], -2.5); }, kPoints);
  check_op("add_scalar", {{4}}, [](auto v) { return add_scalar(v[0], 0.7); }, kPoints);
  check_op("exp", {{4}}, [](auto v) { return exp(v[0]); }, kPoints);
  check_op("log", {{4}}, [](auto v) { return log(v[0]); }, kPoints, 0.5, 2.0);
  check_op("matmul", {{2, 3, 4}, {4, 5}}, [](auto v) { return matmul(v[0], v[1]); }, kPoints);
  check_op("matmul_nt", {{3, 4}, {2, 4}}, [](auto v) { return matmul_nt(v[0], v[1]); }, kPoints);
  check_op("add_bias", {{2, 3, 4}, {4}}, [](auto v) { return add_bias(v[0], v[1]); }, kPoints);
  check_op("conv_time", {{2, 3, 7, 2}, {3, 2, 5}}, [](auto v) { return conv_time(v[0], v[1]); }, kPoints);
  check_op("sum", {{3, 2}}, [](auto v) { return scale(sum(v[0]), 1.0); }, kPoints);
  check_op("mean", {{3, 2}}, [](auto v) { return mean(v[0]); }, kPoints);
  check_op("mean_axes", {{2, 3, 4, 2}}, [](auto v) { return mean_axes(v[0], 1, 3); }, kPoints);
  check_op("sum_rows", {{3, 4}}, [](auto v) { return sum_rows(v[0]); }, kPoints);
  check_op("softmax_rows", {{3, 4}}, [](auto v) { return softmax_rows(v[0]); }, kPoints, -3, 3);
  check_op("log_softmax_rows", {{3, 4}}, [](auto v) { return log_softmax_rows(v[0]); }, kPoints, -3, 3);
  const Tensor mask = Tensor::matrix(3, 3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
  check_op("logsumexp_rows", {{3, 3}}, [&](auto v) { return logsumexp_rows(v[0], mask); }, kPoints, -3, 3);
  check_op("normalize_rows", {{3, 4}}, [](auto v) { return normalize_rows(v[0]); }, kPoints);
  check_op("norm", {{3, 4}}, [](auto v) { return norm(v[0]); }, kPoints);
  check_op("concat", {{2, 3}, {1, 3}}, [](auto v) { return concat(v); }, kPoints);
  check_op("slice_rows", {{4, 3}}, [](auto v) { return slice_rows(v[0], 1, 3); }, kPoints);
  check_op("diagonal", {{3, 3}}, [](auto v) { return diagonal(v[0]); }, kPoints);
  const std::vector<int> idx{2, 0, 1};
  check_op("gather_rows", {{3, 3}}, [&](auto v) { return gather_rows(v[0], idx); }, kPoints);

  std::mt19937_64 rng(8);
  const Tensor graphs = random_tensor({2, 4, 4}, rng);
  check_op("node_mix", {{2, 4, 3, 2}}, [&](auto v) { return node_mix(graphs, v[0]); }, kPoints);
}

TEST_CASE("relu matches central differences away from kinks") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> mag(1e-3, 1.0);
  std::bernoulli_distribution sign;
  for (int i = 0; i < 100; ++i) {
    Tensor x({6});
    for (auto& v : x.values()) v = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    const std::vector<Tensor> p{x};
    LossFunction fn = [&](Tape&, std::span<const Var> v) { return weighted_sum(relu(v[0]), i); };
    auto r = finite_diff_check(fn, p, 1e-7);
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.skipped_at_kinks == 0);
  }
}

TEST_CASE("finite difference check flags relu probed at zero") {
  LossFunction fn = [](Tape&, std::span<const Var> v) { return sum(relu(v[0])); };
  const std::vector<Tensor> p{Tensor::vector({0.0, 1.0})};
  auto r = finite_diff_check(fn, p, 1e-6);
  CHECK(r.base_point_at_kink);
  CHECK(r.skipped_at_kinks == 1);
  CHECK(r.checked == 1);
  CHECK(r.max_relative_error < 1e-8);
}

TEST_CASE("finite difference check is exact on quadratics") {
  std::mt19937_64 rng(2);
  const std::vector<Tensor> p{random_tensor({5}, rng)};
  LossFunction fn = [](Tape&, std::span<const Var> v) { return sum(v[0] * v[0]); };
  CHECK(finite_diff_check(fn, p, 1e-5).max_relative_error < 1e-8);
  CHECK_THROWS_AS(finite_diff_check(fn, p, 1e-2), ValidationError);
}

TEST_CASE("non-finite values abort recording") {
  Tape t;
  auto x = t.leaf(Tensor::vector({1000.0}));
  CHECK_THROWS_AS(exp(x), std::domain_error);
  auto z = t.leaf(Tensor::vector({0.0}));
  CHECK_THROWS_AS(log(z), std::domain_error);
}
