#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "harmless/svm.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace harmless;
using namespace test_oracles;
using Catch::Approx;

TEST_CASE("symmetric separable pair") {
  const auto x = CsrMatrix::from_dense({{1, 0}, {-1, 0}}, 2);
  const std::vector<int> y = {1, -1};
  const auto m = svm::train(x, y);
  CHECK(m.decision(std::vector<double>{2, 0}) > 0);
  CHECK(m.decision(std::vector<double>{-2, 0}) < 0);
  CHECK(m.decision(std::vector<double>{0, 0}) == Approx(0.0).margin(1e-6));
}

TEST_CASE("decision values") {
  svm::Model m;
  m.weights = {1, 2};
  m.bias = -1;
  CHECK(m.decision(std::vector<double>{1, 1}) == 2.0);
  CHECK(svm::decision_values(m, CsrMatrix::from_dense({{1, 1}, {0, 0}}, 2)) == std::vector<double>{2.0, -1.0});
  svm::Model zero;
  zero.weights = {0, 0, 0};
  CHECK(svm::decision_values(zero, CsrMatrix::from_dense({{1, 2, 3}, {4, 5, 6}}, 3)) ==
        std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(svm::decision_values(m, CsrMatrix::from_dense({{1, 1, 1}}, 3)), ArgumentError);
  CHECK_THROWS_AS(m.decision(std::vector<double>{1}), ArgumentError);
}

TEST_CASE("training errors") {
  const auto x = CsrMatrix::from_dense({{1, 0}, {0, 1}}, 2);
  CHECK_THROWS_AS(svm::train(x, std::vector<int>{1, 1}), TrainingError);
  CHECK_THROWS_AS(svm::train(x, std::vector<int>{-1, -1}), TrainingError);
  CHECK_THROWS_AS(svm::train(x, std::vector<int>{1, 0}), ArgumentError);
  const auto bad = CsrMatrix::from_dense({{std::numeric_limits<double>::quiet_NaN(), 0}, {0, 1}}, 2);
  CHECK_THROWS_AS(svm::train(bad, std::vector<int>{1, -1}), TrainingError);
  svm::Params p;
  p.C = 0;
  CHECK_THROWS_AS(svm::train(x, std::vector<int>{1, -1}, p), ArgumentError);
}

TEST_CASE("balanced class weights") {
  const std::vector<int> y = {1, -1, -1, -1, -1, -1, -1};
  const auto [kp, kn] = svm::class_weights(y, true);
  CHECK(kp * 1 == Approx(kn * 6).epsilon(1e-9));
  CHECK(svm::class_weights(y, false) == std::pair<double, double>{1.0, 1.0});
}

TEST_CASE("objective matches a subgradient oracle") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const bool separable = trial % 2 == 0;
    const auto p = make_problem(rng, 40, 5, separable);
    svm::Params params;
    params.seed = static_cast<std::uint64_t>(trial);
    const auto m = svm::train(p.x, p.y, params);
    const double ours = primal(as_wb(m), p, m.C, m.weight_pos, m.weight_neg);
    const double oracle = subgradient_oracle(p, m.C, m.weight_pos, m.weight_neg, 200000);
    INFO("trial " << trial << " ours " << ours << " oracle " << oracle);
    CHECK(ours <= oracle * (1 + 1e-3));
    CHECK(oracle <= ours * (1 + 1e-3));
    if (separable) {
      const auto d = svm::decision_values(m, p.x);
      for (std::size_t i = 0; i < d.size(); ++i) CHECK(p.y[i] * d[i] > 0);
    }
  }
}

TEST_CASE("first-order optimality along random directions") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = make_problem(rng, 60, 6, false);
    const auto m = svm::train(p.x, p.y);
    const auto wb = as_wb(m);
    const double f0 = primal(wb, p, m.C, m.weight_pos, m.weight_neg);
    // The step must exceed the solver's margin accuracy, or it can straddle a
    // hinge kink the solution sits next to.
    const double h = 1e-3;
    for (int k = 0; k < 20; ++k) {
      std::vector<double> dir(wb.size());
      double norm = 0.0;
      for (auto& v : dir) {
        v = g(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      auto moved = wb;
      for (std::size_t j = 0; j < wb.size(); ++j) moved[j] += h * dir[j] / norm;
      CHECK((primal(moved, p, m.C, m.weight_pos, m.weight_neg) - f0) / h >= -1e-4);
    }
  }
}

TEST_CASE("scaling class weights against C leaves the solution unchanged") {
  std::mt19937_64 rng(9);
  const auto p = make_problem(rng, 50, 4, false);
  const auto base = svm::train(p.x, p.y);
  for (double factor : {0.25, 4.0}) {
    svm::Params params;
    params.weight_scale = factor;
    params.C = 1.0 / factor;
    const auto scaled = svm::train(p.x, p.y, params);
    const auto a = svm::decision_values(base, p.x);
    const auto b = svm::decision_values(scaled, p.x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == Approx(a[i]).margin(1e-4));
  }
}

TEST_CASE("determinism and serialization") {
  std::mt19937_64 rng(3);
  const auto p = make_problem(rng, 30, 5, false);
  svm::Params params;
  params.seed = 42;
  const auto a = svm::train(p.x, p.y, params);
  const auto b = svm::train(p.x, p.y, params);
  CHECK(a.weights == b.weights);
  CHECK(a.bias == b.bias);
  CHECK(svm::deserialize(svm::serialize(a)) == a);
  test_support::TempDir dir;
  svm::save(a, (dir / "m.txt").string());
  CHECK(svm::load((dir / "m.txt").string()) == a);
  CHECK_THROWS_AS(svm::deserialize("nonsense"), IngestError);
}
