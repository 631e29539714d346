#include "structrans/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace structrans::oracles {

FertilityEnumeration enum_fertility_marginals(const Array& probs, std::size_t length) {
  const std::size_t n = probs.dim(0), d = probs.dim(1) - 1;
  if (std::pow(static_cast<double>(d + 1), static_cast<double>(n)) > kEnumerationLimit)
    throw UsageError("enum_fertility_marginals: (d+1)^n exceeds the enumeration limit");
  FertilityEnumeration out;
  out.length = length;
  out.marginals = Array(Shape{n, length, d}, 0.0);
  std::vector<std::size_t> f(n, 0);
  while (true) {
    std::size_t total = 0;
    double weight = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += f[i];
      weight *= probs.at(i, f[i]);
    }
    if (total == length && weight > 0.0) {
      out.length_probability += weight;
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t copy = 0; copy < f[i]; ++copy, ++pos) out.marginals.at(i, pos, copy) += weight;
    }
    std::size_t k = 0;
    while (k < n && ++f[k] > d) f[k++] = 0;
    if (k == n) break;
  }
  out.feasible = out.length_probability > 0.0;
  if (out.feasible)
    for (auto& v : out.marginals.storage()) v /= out.length_probability;
  return out;
}

namespace {

std::vector<PermutationTree> trees_over(std::size_t i, std::size_t j) {
  if (j - i == 1) return {PermutationTree{{i}, {}}};
  std::vector<PermutationTree> out;
  for (std::size_t k = i + 1; k < j; ++k) {
    const auto left = trees_over(i, k);
    const auto right = trees_over(k, j);
    for (const auto& a : left)
      for (const auto& b : right)
        for (std::size_t o = 0; o < 2; ++o) {
          PermutationTree t;
          const auto& first = o == 0 ? a : b;
          const auto& second = o == 0 ? b : a;
          t.target_order = first.target_order;
          t.target_order.insert(t.target_order.end(), second.target_order.begin(), second.target_order.end());
          t.nodes.push_back({i, j, o});
          t.nodes.insert(t.nodes.end(), a.nodes.begin(), a.nodes.end());
          t.nodes.insert(t.nodes.end(), b.nodes.begin(), b.nodes.end());
          out.push_back(std::move(t));
        }
  }
  return out;
}

// Row of span [i, j) in a width-major score layout.
std::size_t span_row(std::size_t l, std::size_t i, std::size_t j) {
  std::size_t row = 0;
  for (std::size_t w = 2; w < j - i; ++w) row += l - w + 1;
  return row + i;
}

}  // namespace

std::vector<PermutationTree> enumerate_trees(std::size_t length) {
  if (length == 0 || length > kMaxTreeLength) throw UsageError("enumerate_trees: length out of range");
  return trees_over(0, length);
}

Array enum_tree_expectation(const Array& scores, std::size_t length) {
  const auto trees = enumerate_trees(length);
  std::vector<double> log_w(trees.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trees.size(); ++t) {
    double s = 0.0;
    for (const auto& [i, j, o] : trees[t].nodes) s += scores.at(span_row(length, i, j), o);
    log_w[t] = s;
    mx = std::max(mx, s);
  }
  double z = 0.0;
  for (double lw : log_w) z += std::exp(lw - mx);
  Array r(Shape{length, length}, 0.0);
  for (std::size_t t = 0; t < trees.size(); ++t) {
    const double p = std::exp(log_w[t] - mx) / z;
    for (std::size_t b = 0; b < length; ++b) r.at(trees[t].target_order[b], b) += p;
  }
  return r;
}

Array finite_difference_grad(const std::function<double(const Array&)>& f, const Array& x, double step) {
  Array g(x.shape(), 0.0);
  Array probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + step;
    const double up = f(probe);
    probe[k] = x[k] - step;
    const double down = f(probe);
    probe[k] = x[k];
    g[k] = (up - down) / (2.0 * step);
  }
  return g;
}

double max_relative_error(const Array& analytic, const Array& numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error", {analytic.shape(), numeric.shape()});
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k)
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / (std::abs(numeric[k]) + 1e-8));
  return worst;
}

double max_abs_error(const Array& a, const Array& b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_error", {a.shape(), b.shape()});
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  return worst;
}

bool derives(const CnfRules& rules, const std::vector<std::size_t>& tokens) {
  const std::size_t n = tokens.size();
  if (n == 0) return false;
  // memo[(A, i, j)]: -1 unknown, 0 false, 1 true
  std::map<std::array<std::size_t, 3>, bool> memo;
  std::function<bool(std::size_t, std::size_t, std::size_t)> go = [&](std::size_t a, std::size_t i, std::size_t j) {
    const std::array<std::size_t, 3> key{a, i, j};
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    bool ok = false;
    if (j - i == 1) {
      for (const auto& [lhs, term] : rules.lexical)
        if (lhs == a && term == tokens[i]) ok = true;
    } else {
      for (const auto& [lhs, b, c] : rules.binary) {
        if (lhs != a) continue;
        for (std::size_t s = i + 1; s < j && !ok; ++s) ok = go(b, i, s) && go(c, s, j);
        if (ok) break;
      }
    }
    memo[key] = ok;
    return ok;
  };
  return go(rules.start, 0, n);
}

BruteForceParse brute_force_grammar_argmax(const CnfRules& rules, const Array& log_probs) {
  const std::size_t l = log_probs.dim(0), v = log_probs.dim(1);
  if (std::pow(static_cast<double>(v), static_cast<double>(l)) > kEnumerationLimit)
    throw UsageError("brute_force_grammar_argmax: too many strings");
  BruteForceParse best;
  std::vector<std::size_t> y(l, 0);
  while (true) {
    if (derives(rules, y)) {
      double s = 0.0;
      for (std::size_t i = 0; i < l; ++i) s += log_probs.at(i, y[i]);
      // Strings are visited in lexicographic order, so ">" keeps the smaller on ties.
      if (!best.found || s > best.log_score) best = {true, y, s};
    }
    std::size_t k = l;
    while (k > 0 && ++y[k - 1] == v) y[--k] = 0;
    if (k == 0) break;
  }
  return best;
}

ExhaustiveResult exhaustive_decode(const DecodeModelView& model, std::size_t max_length, std::size_t vocab_limit,
                                   const std::function<bool(const std::vector<std::size_t>&)>& filter) {
  const std::size_t v = std::min(vocab_limit, model.vocab);
  double total = 0.0;
  for (std::size_t l = 1; l <= max_length; ++l) total += std::pow(static_cast<double>(v), static_cast<double>(l));
  if (total > kEnumerationLimit) throw UsageError("exhaustive_decode: search space exceeds the enumeration limit");
  const Array lengths = model.length_distribution();
  ExhaustiveResult best;
  bool found = false;
  for (std::size_t l = 1; l <= max_length && l < lengths.size(); ++l) {
    if (!(lengths[l] > 0.0)) continue;
    const double log_len = std::log(lengths[l]);
    std::vector<std::size_t> y(l, 0);
    while (true) {
      if (!filter || filter(y)) {
        const double s = log_len + model.log_prob(l, y);
        if (!found || s > best.log_score) {
          best = {l, y, s};
          found = true;
        }
      }
      std::size_t k = l;
      while (k > 0 && ++y[k - 1] == v) y[--k] = 0;
      if (k == 0) break;
    }
  }
  if (!found) throw UsageError("exhaustive_decode: no candidate");
  return best;
}

}  // namespace structrans::oracles
