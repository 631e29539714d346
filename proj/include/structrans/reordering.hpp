#pragma once

// Expected permutation matrix under a distribution over binary permutation
// trees. Each internal node covers a span [i, j) with a split k and is
// labelled straight (children concatenated in order) or inverted (right
// child's output first). P(t) ∝ exp(sum of the node scores score[i,j,o]);
// leaves score 0.
//
// Given a span, its split and its label, the two child sub-permutations are
// independent, so the conditional expected permutation of a span is a
// mixture over (k, o) of the two children's matrices placed block-diagonally
// (straight) or anti-block-diagonally (inverted). The recurrence runs
// bottom-up over span widths.

#include <cstddef>
#include <vector>

#include "structrans/autodiff.hpp"

namespace structrans::reordering {

enum Orientation : std::size_t { kStraight = 0, kInverted = 1 };

// Enumerates spans of width >= 2 over a length-l sequence, ordered by width
// and then by start. Row s of a score array belongs to span s.
class SpanIndex {
 public:
  explicit SpanIndex(std::size_t length);
  std::size_t length() const { return length_; }
  std::size_t count() const { return starts_.size(); }
  std::size_t index(std::size_t i, std::size_t j) const;
  std::size_t start(std::size_t s) const { return starts_[s]; }
  std::size_t end(std::size_t s) const { return ends_[s]; }

 private:
  std::size_t length_;
  std::vector<std::size_t> starts_, ends_, width_offset_;
};

// count() x 2 log-potentials (column 0 straight, column 1 inverted).
struct SpanScores {
  std::size_t length = 0;
  Array score;
  static SpanScores zeros(std::size_t length);
};

// logZ is (l+1) x (l+1); entries for i >= j are unused.
struct InsideChart {
  std::size_t length = 0;
  Array log_z;
};

// Posterior over (split, orientation) for each span: entry [s][k - i - 1][o]
// for span s = (i, j), shape count() x (l-1) x 2; splits past the span are 0.
struct SplitPosteriors {
  std::size_t length = 0;
  Array table;
  double at(const SpanIndex& idx, std::size_t i, std::size_t j, std::size_t k, Orientation o) const;
};

struct MarginalPermutation {
  Array matrix;  // l x l, [a][b] = P(source position a lands at target b)
};

// Scores are clamped to this range before entering the chart.
inline constexpr double kScoreClamp = 80.0;

InsideChart inside(const SpanScores& scores);
SplitPosteriors split_posteriors(const SpanScores& scores, const InsideChart& chart);
MarginalPermutation expected_permutation(const SpanScores& scores);

// Differentiable form: scores is count() x 2 for SpanIndex(length).
ad::Var expected_permutation(const ad::Var& scores, std::size_t length);

}  // namespace structrans::reordering
