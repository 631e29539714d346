#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "structrans/checks.hpp"
#include "structrans/oracles.hpp"
#include "structrans/parameters.hpp"
#include "structrans/reordering.hpp"

using namespace structrans;
using namespace structrans::reordering;
using doctest::Approx;

namespace {

SpanScores random_scores(Rng& rng, std::size_t l, double range) {
  SpanScores s = SpanScores::zeros(l);
  for (auto& v : s.score.storage()) v = rng.uniform(-range, range);
  return s;
}

}  // namespace

TEST_CASE("inside chart of uniform scores counts labelled trees") {
  CHECK(inside(SpanScores::zeros(2)).log_z.at(0, 2) == Approx(std::log(2.0)));
  CHECK(inside(SpanScores::zeros(3)).log_z.at(0, 3) == Approx(std::log(8.0)));
  const auto one = inside(SpanScores::zeros(1));
  CHECK(one.log_z.at(0, 1) == 0.0);
  const auto four = inside(SpanScores::zeros(4));
  for (std::size_t i = 0; i < 4; ++i) CHECK(four.log_z.at(i, i + 1) == 0.0);
  CHECK(four.log_z.at(0, 4) == Approx(std::log(40.0)));
}

TEST_CASE("shifting every score shifts log Z per internal node") {
  Rng rng(1);
  for (std::size_t l = 2; l <= 7; ++l) {
    SpanScores s = random_scores(rng, l, 2.0);
    const double before = inside(s).log_z.at(0, l);
    for (auto& v : s.score.storage()) v += 0.75;
    CHECK(inside(s).log_z.at(0, l) == Approx(before + 0.75 * double(l - 1)).epsilon(1e-12));
  }
}

TEST_CASE("split posteriors") {
  SUBCASE("two leaves") {
    const SpanScores s = SpanScores::zeros(2);
    const auto q = split_posteriors(s, inside(s));
    const SpanIndex idx(2);
    CHECK(q.at(idx, 0, 2, 1, kStraight) == Approx(0.5));
    CHECK(q.at(idx, 0, 2, 1, kInverted) == Approx(0.5));
  }
  SUBCASE("three leaves") {
    const SpanScores s = SpanScores::zeros(3);
    const auto q = split_posteriors(s, inside(s));
    const SpanIndex idx(3);
    for (std::size_t k : {1, 2})
      for (auto o : {kStraight, kInverted}) CHECK(q.at(idx, 0, 3, k, o) == Approx(0.25));
  }
  SUBCASE("random charts normalise") {
    Rng rng(2);
    const std::size_t l = 9;
    const SpanScores s = random_scores(rng, l, 4.0);
    const auto q = split_posteriors(s, inside(s));
    const SpanIndex idx(l);
    for (std::size_t sp = 0; sp < idx.count(); ++sp) {
      const std::size_t i = idx.start(sp), j = idx.end(sp);
      double total = 0;
      for (std::size_t k = i + 1; k < j; ++k) total += q.at(idx, i, j, k, kStraight) + q.at(idx, i, j, k, kInverted);
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("uniform scores over two leaves") {
  const auto m = expected_permutation(SpanScores::zeros(2)).matrix;
  for (double v : m.storage()) CHECK(v == Approx(0.5));
}

TEST_CASE("hard tree gives abcd to dcab") {
  // (inverted (straight a b) (inverted c d))
  SpanScores s = SpanScores::zeros(4);
  const SpanIndex idx(4);
  for (auto& v : s.score.storage()) v = -1e4;
  auto set = [&](std::size_t i, std::size_t j, Orientation o) { s.score.at(idx.index(i, j), o) = 1e4; };
  set(0, 4, kInverted);
  set(0, 2, kStraight);
  set(2, 4, kInverted);
  const auto m = expected_permutation(s).matrix;
  // Source a, b, c, d land at target positions 3, 4, 2, 1.
  const std::size_t target[4] = {2, 3, 1, 0};
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b) CHECK(m.at(a, b) == Approx(b == target[a] ? 1.0 : 0.0));
}

TEST_CASE("tree enumeration counts") {
  const std::size_t expected[] = {0, 1, 2, 8, 40, 224, 1344};
  for (std::size_t l = 2; l <= 6; ++l) {
    CHECK(oracles::enumerate_trees(l).size() == expected[l]);
    // Catalan(l-1) shapes times 2^(l-1) labellings.
    std::size_t catalan = 1;
    for (std::size_t k = 0; k < l - 1; ++k) catalan = catalan * 2 * (2 * k + 1) / (k + 2);
    CHECK(oracles::enumerate_trees(l).size() == catalan * (std::size_t{1} << (l - 1)));
  }
}

TEST_CASE("3142 is not separable") {
  // Source 1 2 3 4 read off in target order 3 1 4 2 (and its inverse 2 4 1 3).
  for (const auto& t : oracles::enumerate_trees(4)) {
    CHECK(t.target_order != std::vector<std::size_t>{2, 0, 3, 1});
    CHECK(t.target_order != std::vector<std::size_t>{1, 3, 0, 2});
  }
}

TEST_CASE("four leaves match enumeration over 40 trees") {
  Rng rng(40);
  const SpanScores s = random_scores(rng, 4, 3.0);
  const Array a = expected_permutation(s).matrix;
  const Array b = oracles::enum_tree_expectation(s.score, 4);
  CHECK(oracles::max_abs_error(a, b) <= 1e-9);
}

TEST_CASE("strongly straight scores give the identity") {
  for (std::size_t l : {2, 5, 12, 30}) {
    SpanScores s = SpanScores::zeros(l);
    const SpanIndex idx(l);
    for (std::size_t sp = 0; sp < idx.count(); ++sp) {
      s.score.at(sp, kStraight) = 15.0;
      s.score.at(sp, kInverted) = -15.0;
    }
    const Array m = expected_permutation(s).matrix;
    double worst = 0;
    for (std::size_t a = 0; a < l; ++a)
      for (std::size_t b = 0; b < l; ++b) worst = std::max(worst, std::abs(m.at(a, b) - (a == b ? 1.0 : 0.0)));
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("single position") {
  const auto m = expected_permutation(ad::constant(Array(Shape{0, 2})), 1);
  CHECK(m->value.shape() == Shape{1, 1});
  CHECK(m->value[0] == 1.0);
}

TEST_CASE("extreme scores stay finite") {
  SpanScores s = SpanScores::zeros(6);
  for (std::size_t k = 0; k < s.score.size(); ++k) s.score[k] = (k % 2 ? 1e6 : -1e6);
  const Array m = expected_permutation(s).matrix;
  CHECK(m.all_finite());
}

TEST_CASE("mismatched score shapes are rejected") {
  CHECK_THROWS_AS(expected_permutation(ad::constant(Array(Shape{2, 2})), 3), ShapeError);
}

TEST_CASE("expected permutation matches enumeration") {
  const auto r = checks::permutation_oracle_suite();
  INFO(checks::format_report(r));
  CHECK(r.passed);
}

TEST_CASE("expected permutation is doubly stochastic") {
  const auto r = checks::doubly_stochastic_suite(40);
  INFO(checks::format_report(r));
  CHECK(r.passed);
}

TEST_CASE("permutation gradients match finite differences") {
  const auto r = checks::permutation_gradient_check();
  INFO(checks::format_report(r));
  CHECK(r.passed);
}
