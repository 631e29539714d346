#pragma once

// Verification suites shared by the unit tests, the `gradcheck` and
// `oracle-check` commands and the acceptance binary.

#include <cstdint>
#include <string>
#include <vector>

namespace structrans::checks {

struct CheckReport {
  std::string name;
  bool passed = false;
  double worst = 0.0;      // largest observed error
  double tolerance = 0.0;  // threshold it was held to
  std::size_t cases = 0;
  std::string detail;
};

// Every registered autodiff op, `instances` random inputs each: max
// |autodiff - central difference| / (|central difference| + 1e-8) <= 1e-4.
std::vector<CheckReport> op_gradient_suite(std::size_t instances = 50, std::uint64_t seed = 7);

// d(sum log F over a random mask)/d(probs) vs finite differences, <= 1e-4.
CheckReport fertility_gradient_check(std::size_t instances = 20, std::uint64_t seed = 11);
// d(sum log(R + eps))/d(scores) for l <= 6 vs finite differences, <= 1e-4.
CheckReport permutation_gradient_check(std::size_t instances = 20, std::uint64_t seed = 13);
// Whole-model loss gradient on tiny configurations, every parameter, <= 1e-3.
std::vector<CheckReport> model_gradient_suite(std::uint64_t seed = 17);

// Marginal fertility vs enumeration for n <= 5, d <= 3, every feasible l.
CheckReport fertility_oracle_suite(std::size_t tables = 20, std::uint64_t seed = 19);
// Expected permutation vs tree enumeration for l in 2..6.
CheckReport permutation_oracle_suite(std::size_t charts = 20, std::uint64_t seed = 23);
// Row and column sums of the expected permutation up to max_length.
CheckReport doubly_stochastic_suite(std::size_t max_length = 40, std::uint64_t seed = 29);
// Viterbi CYK vs brute-force grammatical argmax, outputs re-verified.
CheckReport grammar_oracle_suite(std::size_t instances = 100, std::uint64_t seed = 31);
// Sum over lengths of P(l|x) on randomly initialised models.
CheckReport length_normalisation_suite(std::size_t models = 10, std::uint64_t seed = 37);

std::vector<CheckReport> all_gradient_checks();
std::vector<CheckReport> all_oracle_checks();

std::string format_report(const CheckReport& r);

}  // namespace structrans::checks
