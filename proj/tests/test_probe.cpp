#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "metsk/probe.hpp"
#include "oracles.hpp"

using namespace metsk;

namespace {

using oracle::covariance_of;
using oracle::jacobi_eigen;

Tensor random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Tensor x({n, d});
  for (auto& v : x.values()) v = g(rng);
  return x;
}

ZeroShotFeatures toy_features(std::size_t n, std::size_t p, std::size_t c, std::uint64_t seed) {
  ZeroShotFeatures f;
  f.values = random_matrix(n, p * c, seed).reshaped({n, p, c});
  for (std::size_t i = 0; i < n; ++i) f.subject_ids.push_back("s" + std::to_string(i));
  return f;
}

Dataset small_cohort(std::uint64_t seed) {
  SynthSpec spec;
  spec.parcels = 10;
  spec.timepoints = 40;
  spec.n_source = 2;
  spec.n_target_per_class = 3;
  return generate_synthetic(spec, seed).target;
}

}  // namespace

TEST_CASE("auc examples") {
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}) == 1.0);
  CHECK(auc(std::vector<double>{0.9, 0.3, 0.5, 0.1}, std::vector<int>{1, 1, 0, 0}) == 0.75);
  CHECK(auc(std::vector<double>{0.4, 0.4, 0.4}, std::vector<int>{1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValidationError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ValidationError);
}

TEST_CASE("auc is invariant under increasing transforms") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(30);
    std::vector<int> y(30);
    for (auto& v : s) v = std::round(g(rng) * 4) / 4;  // coarse values give ties
    for (auto& v : y) v = coin(rng);
    y[0] = 0;
    y[1] = 1;
    std::vector<double> t(s.size());
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(3 * v) + 7; });
    CHECK(auc(s, y) == auc(t, y));
  }
}

TEST_CASE("accuracy") {
  CHECK(accuracy(std::vector<int>{1, 0, 1, 1}, std::vector<int>{1, 0, 0, 1}) == 0.75);
  CHECK_THROWS_AS(accuracy(std::vector<int>{1}, std::vector<int>{1, 0}), ValidationError);
}

TEST_CASE("stratified folds") {
  std::vector<int> y;
  for (int i = 0; i < 23; ++i) y.push_back(i < 9 ? 1 : 0);
  Rng rng(5);
  const auto f = stratified_folds(y, 5, rng);
  const double ratio = 9.0 / 23.0;
  for (std::size_t k = 0; k < 5; ++k) {
    std::size_t size = 0, pos = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (f[i] == k) {
        ++size;
        pos += y[i];
      }
    CHECK(size >= 4);
    CHECK(size <= 5);
    CHECK(std::abs(static_cast<double>(pos) - ratio * size) <= 1.0);
  }
  Rng again(5);
  CHECK(stratified_folds(y, 5, again) == f);
  Rng r3(5);
  CHECK_THROWS_AS(stratified_folds(std::vector<int>{1, 1, 0, 0, 0, 0}, 3, r3), ValidationError);
}

TEST_CASE("pca examples") {
  SUBCASE("points on the first axis") {
    const Tensor x = Tensor::matrix(4, 3, {1, 0, 0, -2, 0, 0, 3, 0, 0, 0.5, 0, 0});
    const auto p = pca_fit(x, 1);
    CHECK(std::abs(p.components[0] - 1.0) < 1e-12);
    CHECK(std::abs(p.components[1]) < 1e-12);
    CHECK(std::abs(p.components[2]) < 1e-12);
    CHECK(p.explained_ratio[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("full basis reconstructs") {
    const Tensor x = random_matrix(9, 4, 2);
    const auto p = pca_fit(x, 4);
    const Tensor z = pca_transform(p, x);
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double back = p.mean[j];
        for (std::size_t k = 0; k < 4; ++k) back += z[i * 4 + k] * p.components[k * 4 + j];
        CHECK(std::abs(back - x[i * 4 + j]) < 1e-9);
      }
    double total = 0;
    for (double r : p.explained_ratio) total += r;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(pca_fit(random_matrix(3, 5, 1), 4), ValidationError);
  CHECK_THROWS_AS(pca_fit(random_matrix(6, 2, 1), 3), ValidationError);
  CHECK_THROWS_AS(pca_fit(random_matrix(6, 2, 1), 0), ValidationError);
}

TEST_CASE("pca matches a Jacobi eigensolver") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_matrix(20, 5, 100 + seed);
    std::vector<double> values, vecs;
    jacobi_eigen(covariance_of(x), 5, values, vecs);
    std::vector<std::size_t> order(5);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] > values[b]; });
    const Tensor z = pca_reduce(x, 3);
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<double> v(5);
      for (std::size_t j = 0; j < 5; ++j) v[j] = vecs[j * 5 + order[k]];
      const auto big = std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
      if (*big < 0)
        for (auto& e : v) e = -e;
      for (std::size_t i = 0; i < 20; ++i) {
        double proj = 0;
        for (std::size_t j = 0; j < 5; ++j) {
          double mu = 0;
          for (std::size_t r = 0; r < 20; ++r) mu += x[r * 5 + j] / 20;
          proj += (x[i * 5 + j] - mu) * v[j];
        }
        CHECK(std::abs(proj - z[i * 3 + k]) < 1e-8);
      }
    }
  }
}

TEST_CASE("pca outputs are uncorrelated") {
  Tensor x = random_matrix(30, 6, 9);
  for (std::size_t i = 0; i < 30; ++i) x[i * 6 + 1] += 2 * x[i * 6];  // correlated inputs
  const Tensor z = pca_reduce(x, 5);
  const auto cov = covariance_of(z);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b)
      if (a != b) CHECK(std::abs(cov[a * 5 + b]) < 1e-8);
}

TEST_CASE("linear svm") {
  const Tensor x = Tensor::matrix(4, 1, {-2, -1, 1, 2});
  const std::vector<int> y{0, 0, 1, 1};
  const auto m = train_linear_svm(x, y);
  CHECK(m.w[0] > 0);
  std::vector<int> pred;
  for (double s : m.decision(x)) pred.push_back(s > 0);
  CHECK(accuracy(pred, y) == 1.0);

  SUBCASE("duplicated samples with C halved give the same decision function") {
    const Tensor x2 = Tensor::matrix(8, 1, {-2, -1, 1, 2, -2, -1, 1, 2});
    const std::vector<int> y2{0, 0, 1, 1, 0, 0, 1, 1};
    const auto m2 = train_linear_svm(x2, y2, 0.5);
    const Tensor probe = Tensor::matrix(5, 1, {-3, -0.5, 0, 0.25, 4});
    const auto a = m.decision(probe), b = m2.decision(probe);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
  }

  SUBCASE("scaling features with C rescaled keeps predictions") {
    const Tensor xr = random_matrix(40, 6, 4);
    std::vector<int> yr(40);
    for (std::size_t i = 0; i < 40; ++i) yr[i] = xr[i * 6] + 0.5 * xr[i * 6 + 1] + 0.3 * ((i * 7) % 5 - 2.0) > 0;
    for (double s : {0.1, 3.0, 25.0}) {
      Tensor xs = xr;
      for (auto& v : xs.values()) v *= s;
      const auto base = train_linear_svm(xr, yr, 1.0).decision(xr);
      const auto scaled = train_linear_svm(xs, yr, 1.0 / (s * s)).decision(xs);
      for (std::size_t i = 0; i < 40; ++i) CHECK((base[i] > 0) == (scaled[i] > 0));
    }
  }

  CHECK_THROWS_AS(train_linear_svm(Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2}), std::vector<int>{0, 1, 1}),
                  ValidationError);
  CHECK_THROWS_AS(train_linear_svm(x, std::vector<int>{1, 1, 1, 1}), ValidationError);
  CHECK_THROWS_AS(train_linear_svm(x, y, 0.0), ValidationError);
}

TEST_CASE("mlp") {
  const Tensor x = Tensor::matrix(4, 1, {-2, -1, 1, 2});
  const std::vector<int> y{0, 0, 1, 1};
  const auto m = train_mlp(x, y, {32, 16, 16}, 200, 0.001, 3);
  std::vector<int> pred;
  for (double p : m.probability(x)) pred.push_back(p > 0.5);
  CHECK(accuracy(pred, y) == 1.0);
  CHECK(m.params.size() == 8);

  const auto again = train_mlp(x, y, {32, 16, 16}, 200, 0.001, 3);
  CHECK(again.logits(x).bitwise_equal(m.logits(x)));

  const auto lr = train_mlp(x, y, {}, 50, 0.01, 1);
  REQUIRE(lr.params.size() == 2);
  CHECK(lr.params[0].value.shape() == Shape{1, 2});
  const Tensor z = lr.logits(x);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(z[i * 2 + k] == doctest::Approx(x[i] * lr.params[0].value[k] + lr.params[1].value[k]).epsilon(1e-14));

  CHECK_THROWS_AS(train_mlp(x, std::vector<int>{0, 0, 0, 0}), ValidationError);
}

TEST_CASE("svm feature importance") {
  CHECK(svm_feature_importance(Tensor::vector({0.5, -0.2, 0.1}), 3) == std::vector<double>{0.5, 0, 0.1});
  CHECK(svm_feature_importance(Tensor::vector({-1, -2}), 2) == std::vector<double>{0, 0});
  const auto two = svm_feature_importance(Tensor::vector({0.2, 0.3, -1, 0}), 2);
  CHECK(two[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(two[1] == 0.0);
  CHECK_THROWS_AS(svm_feature_importance(Tensor::vector({1, 2, 3}), 2), ValidationError);
  CHECK(importance_csv({0.5, 0}) == "roi_index,importance\n0,0.5\n1,0\n");

  // Signal only in ROI 1: its importance dominates.
  auto f = toy_features(40, 3, 2, 8);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) {
    labels[i] = i % 2;
    f.values[i * 6 + 2] += labels[i] ? 2.0 : -2.0;
  }
  const auto imp = roi_importance(f, labels);
  CHECK(imp[1] > imp[0]);
  CHECK(imp[1] > imp[2]);
}

TEST_CASE("zero-shot extraction") {
  const Dataset data = small_cohort(4);
  ModelConfig cfg;
  cfg.channels = {1, 4, 4, 16};
  cfg.temporal_kernel = 3;
  cfg.embedding = 4;
  const Model model = init_model(cfg, 2);
  const auto before = serialize_model(model);

  const auto f = extract_zero_shot(model, data, 16, 3, 11);
  CHECK(f.values.shape() == Shape{6, 10, 16});
  CHECK(serialize_model(model) == before);
  CHECK(extract_zero_shot(model, data, 16, 3, 11).values.bitwise_equal(f.values));
  CHECK(!extract_zero_shot(model, data, 16, 3, 12).values.bitwise_equal(f.values));

  Model zero = model;
  for (auto& e : zero.phi) std::fill(e.value.values().begin(), e.value.values().end(), 0.0);
  const auto z = extract_zero_shot(zero, data, 16, 3, 11);
  for (std::size_t s = 1; s < 6; ++s)
    for (std::size_t i = 0; i < 160; ++i) CHECK(z.values[s * 160 + i] == z.values[i]);

  const auto text = features_csv(f);
  CHECK(text.rfind("subject_id,roi0_c0,roi0_c1,", 0) == 0);
  const auto back = parse_features_csv(text, "f.csv");
  CHECK(back.values.bitwise_equal(f.values));
  CHECK(back.subject_ids == f.subject_ids);
  CHECK_THROWS_AS(parse_features_csv("subject_id,roi0_c0,roi1_c1\n", "f.csv"), ValidationError);
  CHECK_THROWS_AS(parse_features_csv("subject_id,roi0_c0\na,1,2\n", "f.csv"), ValidationError);
}

TEST_CASE("cross-validation report") {
  const Tensor x = random_matrix(30, 8, 21);
  std::vector<int> y(30);
  for (std::size_t i = 0; i < 30; ++i) y[i] = i % 3 == 0;
  ProbeSpec spec;
  spec.pca_components = 4;
  const auto a = evaluate_cv(x, y, spec, 5, 3, 7);
  CHECK(a.per_fold.size() == 15);
  CHECK(a.json() == evaluate_cv(x, y, spec, 5, 3, 7).json());
  CHECK(a.json().find("\"auc_mean\"") != std::string::npos);
  spec.classifier = "mlp";
  spec.mlp_iters = 30;
  CHECK(evaluate_cv(x, y, spec, 5, 1, 7).per_fold.size() == 5);
  spec.classifier = "forest";
  CHECK_THROWS_AS(evaluate_cv(x, y, spec, 5, 1, 7), ValidationError);
  CHECK_THROWS_AS(evaluate_cv(x, y, ProbeSpec{}, 11, 1, 7), ValidationError);
}

TEST_CASE("shuffled labels give chance-level AUC") {
  SynthSpec spec;
  spec.parcels = 8;
  spec.timepoints = 64;
  spec.n_source = 2;
  spec.n_target_per_class = 20;
  spec.effect_size = 2.0;
  const auto data = generate_synthetic(spec, 31).target;
  ModelConfig cfg;
  cfg.channels = {1, 4, 4, 4};
  cfg.temporal_kernel = 3;
  const auto f = extract_zero_shot(init_model(cfg, 5), data, 32, 4, 1);
  // One shuffle of 40 subjects leaves a CV AUC spread of about 0.1 around
  // 0.5, so the null is averaged over several shuffles.
  std::vector<double> aucs;
  for (std::uint64_t shuffle = 0; shuffle < 8; ++shuffle) {
    auto labels = data.labels();
    Rng rng(77 + shuffle);
    std::shuffle(labels.begin(), labels.end(), rng);
    aucs.push_back(evaluate_cv(f.flat(), labels, ProbeSpec{}, 5, 20, shuffle).auc_mean);
  }
  CHECK(mean_of(aucs) >= 0.4);
  CHECK(mean_of(aucs) <= 0.6);
}
