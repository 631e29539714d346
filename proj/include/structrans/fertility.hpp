#pragma once

// Fertility layer dynamic programme.
//
// Each input token i draws an independent fertility f_i in 0..d from a
// categorical distribution. Conditioning on the total length l couples the
// draws; this module computes the total-length distribution and the expected
// copy alignment
//
//   F[i][j][u] = P(intermediate position j is the u-th copy of input i | sum f = l)
//
// with forward sums P(f_0 + ... + f_i = h) and backward sums
// P(f_i + ... + f_{n+1} = h), where f_0 and f_{n+1} are dummies fixed at 0.
// All probabilities are kept in the linear domain.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "structrans/autodiff.hpp"

namespace structrans::fertility {

// n x (d+1) table, probs[i][r] = P(f_i = r). Rows sum to 1.
class FertilityTable {
 public:
  explicit FertilityTable(Array probs);
  std::size_t n() const { return probs_.dim(0); }
  std::size_t max_fertility() const { return probs_.dim(1) - 1; }
  const Array& probs() const { return probs_; }

 private:
  Array probs_;
};

// forward/backward are (n+2) x (n*d+1); row 0 and row n+1 hold the dummies.
struct LengthTables {
  Array forward;
  Array backward;
};

// n x l x d tensor; index [i][j][u] is 0-based for (i, j, u-1).
struct MarginalFertility {
  std::size_t length = 0;
  Array tensor;
};

class InfeasibleLength : public std::runtime_error {
 public:
  InfeasibleLength(std::size_t length, std::vector<std::size_t> support);
  std::size_t length() const { return length_; }
  const std::vector<std::size_t>& support() const { return support_; }

 private:
  std::size_t length_;
  std::vector<std::size_t> support_;
};

struct DpStats {
  std::uint64_t marginal_terms = 0;  // multiply-adds in the marginal sum
};

// Normalizers below this trigger the underflow fallbacks.
inline constexpr double kUnderflowGuard = 1e-280;

LengthTables length_tables(const FertilityTable& table);
Array length_distribution(const FertilityTable& table);
MarginalFertility marginal_fertility(const FertilityTable& table, std::size_t length, DpStats* stats = nullptr);
// Row sums of the marginal tensor: E[f_i | sum f = l].
Array expected_fertilities(const MarginalFertility& mf);
// Lengths with nonzero probability (exact support, not thresholded).
std::vector<std::size_t> length_support(const Array& probs);

// Differentiable forms. probs must be n x (d+1) and nonnegative; rows are
// not renormalised, so finite-difference probes off the simplex are valid.
ad::Var length_distribution(const ad::Var& probs);
ad::Var marginal_fertility(const ad::Var& probs, std::size_t length, DpStats* stats = nullptr);
// log P(sum f = l), recomputed in log space when the linear value underflows.
ad::Var log_length_probability(const ad::Var& probs, std::size_t length);

}  // namespace structrans::fertility
