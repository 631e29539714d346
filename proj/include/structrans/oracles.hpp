#pragma once

// Brute-force references for the dynamic programmes and the decoders.
// Nothing here calls into the fertility, reordering or Viterbi code paths.

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "structrans/array.hpp"

namespace structrans::oracles {

struct FertilityEnumeration {
  std::size_t length = 0;
  double length_probability = 0.0;  // P(sum f = l)
  Array marginals;                  // n x l x d, zero when the length is infeasible
  bool feasible = false;
};

inline constexpr double kEnumerationLimit = 1e6;

// Enumerates all (d+1)^n fertility vectors. Refuses above kEnumerationLimit.
FertilityEnumeration enum_fertility_marginals(const Array& probs, std::size_t length);

// A labelled binary permutation tree: the target order of source positions
// and its internal nodes as (start, end, orientation) with orientation 0
// straight, 1 inverted.
struct PermutationTree {
  std::vector<std::size_t> target_order;
  std::vector<std::array<std::size_t, 3>> nodes;
};

inline constexpr std::size_t kMaxTreeLength = 7;

std::vector<PermutationTree> enumerate_trees(std::size_t length);

// Sum over all trees of P(t) R_t with P(t) ∝ exp(sum of node scores); scores
// laid out as in reordering::SpanIndex (by width, then start). Unclamped.
Array enum_tree_expectation(const Array& scores, std::size_t length);

// Central differences, one coordinate at a time.
Array finite_difference_grad(const std::function<double(const Array&)>& f, const Array& x, double step = 1e-6);

// Relative error metric |a - b| / (|b| + 1e-8), maximised over entries.
double max_relative_error(const Array& analytic, const Array& numeric);
double max_abs_error(const Array& a, const Array& b);

// --- grammars --------------------------------------------------------------

struct CnfRules {
  std::size_t nonterminals = 0;
  std::size_t start = 0;
  std::vector<std::array<std::size_t, 3>> binary;  // A -> B C
  std::vector<std::array<std::size_t, 2>> lexical;  // A -> a (terminal id)
};

// Memoised top-down derivability check, independent of the CYK chart code.
bool derives(const CnfRules& rules, const std::vector<std::size_t>& tokens);

struct BruteForceParse {
  bool found = false;
  std::vector<std::size_t> tokens;
  double log_score = 0.0;
};

// Best grammatical string of length rows(log_probs) by enumerating every
// string over the columns; ties go to the lexicographically smaller string.
BruteForceParse brute_force_grammar_argmax(const CnfRules& rules, const Array& log_probs);

// --- decoding ----------------------------------------------------------------

// Probability interfaces the exhaustive decoder needs from a model.
struct DecodeModelView {
  std::function<Array()> length_distribution;                                     // over 0..Lmax
  std::function<double(std::size_t, const std::vector<std::size_t>&)> log_prob;   // log P(y | x, l)
  std::size_t vocab = 0;
};

struct ExhaustiveResult {
  std::size_t length = 0;
  std::vector<std::size_t> tokens;
  double log_score = 0.0;
};

// Scores every (l, y) with 1 <= l <= max_length over vocab_limit tokens.
// filter, if given, rejects candidates (e.g. non-grammatical strings).
ExhaustiveResult exhaustive_decode(const DecodeModelView& model, std::size_t max_length, std::size_t vocab_limit,
                                   const std::function<bool(const std::vector<std::size_t>&)>& filter = {});

}  // namespace structrans::oracles
