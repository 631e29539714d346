#include <doctest.h>

#include <cmath>

#include "structrans/checks.hpp"
#include "structrans/fertility.hpp"
#include "structrans/oracles.hpp"
#include "structrans/parameters.hpp"

using namespace structrans;
using namespace structrans::fertility;
using doctest::Approx;

namespace {

Array random_probs(Rng& rng, std::size_t n, std::size_t d) {
  Array p(Shape{n, d + 1});
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0;
    for (std::size_t r = 0; r <= d; ++r) z += p.at(i, r) = rng.uniform(0.05, 1.0);
    for (std::size_t r = 0; r <= d; ++r) p.at(i, r) /= z;
  }
  return p;
}

Array one_hot_rows(const std::vector<std::size_t>& f, std::size_t d) {
  Array p(Shape{f.size(), d + 1});
  for (std::size_t i = 0; i < f.size(); ++i) p.at(i, f[i]) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("length tables for deterministic unit fertility") {
  const FertilityTable t(one_hot_rows({1, 1}, 1));
  const auto lt = length_tables(t);
  CHECK(lt.forward.at(3, 2) == 1.0);
  CHECK(lt.forward.at(3, 0) == 0.0);
  CHECK(lt.forward.at(3, 1) == 0.0);
  CHECK(lt.forward.at(0, 0) == 1.0);
  CHECK(lt.backward.at(3, 0) == 1.0);
}

TEST_CASE("single token of fertility two") {
  const auto dist = length_distribution(FertilityTable(one_hot_rows({2}, 2)));
  CHECK(dist[2] == 1.0);
  CHECK(dist[0] + dist[1] == 0.0);
}

TEST_CASE("uniform binary fertilities convolve") {
  const FertilityTable t(Array::matrix(2, 2, {0.5, 0.5, 0.5, 0.5}));
  const auto dist = length_distribution(t);
  const auto e1 = oracles::enum_fertility_marginals(t.probs(), 1);
  CHECK(dist[0] == Approx(0.25));
  CHECK(dist[1] == Approx(0.5));
  CHECK(dist[2] == Approx(0.25));
  CHECK(dist[1] == Approx(e1.length_probability));
}

TEST_CASE("length tables are consistent") {
  Rng rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 1 + rng.below(6), d = 1 + rng.below(4);
    const FertilityTable t(random_probs(rng, n, d));
    const auto lt = length_tables(t);
    double total = 0;
    for (std::size_t h = 0; h <= n * d; ++h) {
      total += lt.forward.at(n + 1, h);
      CHECK(std::abs(lt.forward.at(n + 1, h) - lt.backward.at(0, h)) <= 1e-9);
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
}

TEST_CASE("deterministic fertilities give a hard identity alignment") {
  const auto mf = marginal_fertility(FertilityTable(one_hot_rows({1, 1}, 1)), 2);
  CHECK(mf.tensor.at(0, 0, 0) == 1.0);
  CHECK(mf.tensor.at(1, 1, 0) == 1.0);
  CHECK(mf.tensor.at(0, 1, 0) == 0.0);
  CHECK(mf.tensor.at(1, 0, 0) == 0.0);
  const auto ef = expected_fertilities(mf);
  CHECK(ef[0] == Approx(1.0));
  CHECK(ef[1] == Approx(1.0));
}

TEST_CASE("uniform fertilities conditioned on one output token") {
  const FertilityTable t(Array::matrix(2, 2, {0.5, 0.5, 0.5, 0.5}));
  const auto mf = marginal_fertility(t, 1);
  const auto oracle = oracles::enum_fertility_marginals(t.probs(), 1);
  CHECK(mf.tensor.at(0, 0, 0) == Approx(0.5));
  CHECK(mf.tensor.at(1, 0, 0) == Approx(0.5));
  CHECK(oracle.marginals.at(0, 0, 0) == Approx(0.5));
  const auto ef = expected_fertilities(mf);
  CHECK(ef[0] == Approx(0.5));
  CHECK(ef[1] == Approx(0.5));
}

TEST_CASE("the fourth input with fertility two fills positions six and seven") {
  // f = (1, 2, 2, 2): inputs 1..3 cover positions 1..5, input 4 covers 6 and 7.
  const auto mf = marginal_fertility(FertilityTable(one_hot_rows({1, 2, 2, 2}, 2)), 7);
  CHECK(mf.tensor.at(3, 5, 0) == 1.0);
  CHECK(mf.tensor.at(3, 6, 1) == 1.0);
  double rest = 0;
  for (std::size_t j = 0; j < 7; ++j)
    for (std::size_t u = 0; u < 2; ++u) rest += mf.tensor.at(3, j, u);
  CHECK(rest == Approx(2.0));
}

TEST_CASE("marginal tensor invariants") {
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + rng.below(7), d = 1 + rng.below(4);
    const FertilityTable t(random_probs(rng, n, d));
    const std::size_t l = 1 + rng.below(n * d);
    const auto mf = marginal_fertility(t, l);
    for (std::size_t j = 0; j < l; ++j) {
      double col = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t u = 0; u < d; ++u) {
          const double v = mf.tensor.at(i, j, u);
          CHECK(v >= 0.0);
          CHECK(v <= 1.0 + 1e-12);
          if (j < u) CHECK(v == 0.0);
          col += v;
        }
      CHECK(std::abs(col - 1.0) <= 1e-6);
    }
    const Array expected = expected_fertilities(mf);
    double total = 0;
    for (double e : expected.storage()) total += e;
    CHECK(total == Approx(double(l)));
  }
}

TEST_CASE("infeasible lengths report the support") {
  const FertilityTable t(one_hot_rows({1, 2}, 2));
  try {
    marginal_fertility(t, 2);
    FAIL("expected InfeasibleLength");
  } catch (const InfeasibleLength& e) {
    CHECK(e.length() == 2);
    CHECK(e.support() == std::vector<std::size_t>{3});
  }
  CHECK(length_support(t.probs()) == std::vector<std::size_t>{3});
}

TEST_CASE("invalid tables are rejected") {
  CHECK_THROWS(FertilityTable(Array::matrix(1, 2, {0.5, 0.6})));
  CHECK_THROWS(FertilityTable(Array::matrix(1, 2, {1.5, -0.5})));
  CHECK_THROWS(FertilityTable(Array::matrix(1, 1, {1.0})));
}

TEST_CASE("marginal operation count is O(n l d^2)") {
  Rng rng(12);
  for (std::size_t n : {3, 8, 15}) {
    for (std::size_t d : {1, 2, 4}) {
      const FertilityTable t(random_probs(rng, n, d));
      const std::size_t l = (n * d + 1) / 2;
      DpStats stats;
      marginal_fertility(t, l, &stats);
      CHECK(stats.marginal_terms <= n * l * d * d);
    }
  }
}

TEST_CASE("underflowing normaliser still yields normalised marginals") {
  // 60 tokens that almost surely have fertility 0, conditioned on a long output.
  const std::size_t n = 60, d = 4;
  Array p(Shape{n, d + 1});
  for (std::size_t i = 0; i < n; ++i) {
    p.at(i, 0) = 1.0 - 4e-8;
    for (std::size_t r = 1; r <= d; ++r) p.at(i, r) = 1e-8;
  }
  const FertilityTable t(p);
  const auto mf = marginal_fertility(t, 120);
  for (std::size_t j = 0; j < 120; ++j) {
    double col = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t u = 0; u < d; ++u) col += mf.tensor.at(i, j, u);
    CHECK(std::abs(col - 1.0) <= 1e-6);
  }
  const double lp = log_length_probability(ad::constant(p), 120)->value[0];
  // Log-domain convolution of the per-token fertility distributions.
  std::vector<double> acc(n * d + 1, -INFINITY);
  acc[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> next(acc.size(), -INFINITY);
    for (std::size_t s = 0; s < acc.size(); ++s)
      for (std::size_t r = 0; r <= d && s + r < acc.size(); ++r) {
        const double term = acc[s] + std::log(p.at(i, r));
        const double hi = std::max(next[s + r], term);
        if (hi > -INFINITY) next[s + r] = hi + std::log(std::exp(next[s + r] - hi) + std::exp(term - hi));
      }
    acc = next;
  }
  CHECK(lp == Approx(acc[120]).epsilon(1e-10));
  CHECK(lp < -500.0);
}

TEST_CASE("marginals match enumeration") {
  const auto r = checks::fertility_oracle_suite();
  INFO(checks::format_report(r));
  CHECK(r.passed);
  CHECK(r.worst <= 1e-9);
}

TEST_CASE("marginal gradients match finite differences") {
  const auto r = checks::fertility_gradient_check();
  INFO(checks::format_report(r));
  CHECK(r.passed);
}

TEST_CASE("differentiable length distribution agrees with the table form") {
  Rng rng(2);
  const Array p = random_probs(rng, 5, 3);
  const auto a = length_distribution(ad::constant(p))->value;
  const auto b = length_distribution(FertilityTable(p));
  for (std::size_t k = 0; k < b.size(); ++k) CHECK(a[k] == Approx(b[k]).epsilon(1e-14));
  CHECK(log_length_probability(ad::constant(p), 7)->value[0] == Approx(std::log(b[7])).epsilon(1e-12));
}
