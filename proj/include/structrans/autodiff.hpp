#pragma once

// Define-by-run reverse-mode differentiation over dense Arrays.
//
// Every op returns a fresh Node holding its forward value. When any input
// requires a gradient, the node keeps its parents and an adjoint rule;
// backward() walks the reachable graph in reverse topological order and
// adds each node's contribution into its parents' gradients. Gradients
// accumulate across calls until zero_grad() is called on the leaves.
//
// A graph and its nodes belong to one thread. Leaf nodes used as model
// parameters may be shared read-only by several threads while no backward
// pass is running.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "structrans/array.hpp"

namespace structrans::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Array value;
  Array grad;  // empty until something is accumulated
  std::vector<Var> parents;
  std::function<void(Node&)> adjoint;
  bool requires_grad = false;
  const char* op = "leaf";

  // Gradient storage, zero-initialised on first use.
  Array& grad_buffer();
  bool has_grad() const noexcept { return grad.shape() == value.shape() && grad.size() == value.size(); }
  void zero_grad();
};

Var constant(Array value);
Var parameter(Array value);

// Creates an op node. Checks the forward value is finite; drops the adjoint
// and parents when no parent requires a gradient.
Var make_node(const char* op, Array value, std::vector<Var> parents, std::function<void(Node&)> adjoint);

// While alive, ops on this thread record no parents or adjoints.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled() noexcept;

// Root must hold exactly one value (shape [] or [1]).
void backward(const Var& root);

// --- elementwise ---------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

// x (m x k) + b (k) broadcast over rows.
Var add_rowwise(const Var& x, const Var& b);
// x (m x k) scaled per row by s (m).
Var scale_rows(const Var& x, const Var& s);
// a (n x h), c (m x h) -> (m*n x h), row r*n+j = c[r] + a[j].
Var add_outer_rows(const Var& a, const Var& c);

// --- linear algebra / layout ---------------------------------------------
Var matmul(const Var& a, const Var& b);
// Batched: (b x m x k) * (b x k x n).
Var bmm(const Var& a, const Var& b);
// Swaps the last two axes of a rank-2 or rank-3 array.
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
// Rows (first-axis entries) selected by index, repeats allowed.
Var gather_rows(const Var& a, std::span<const std::size_t> rows);
// For a (m x k): out[r] = a[r, cols[r]].
Var pick(const Var& a, std::span<const std::size_t> cols);
Var embedding(const Var& table, std::span<const std::size_t> ids);

// --- reductions ----------------------------------------------------------
Var sum(const Var& a, std::size_t axis);
Var sum_all(const Var& a);
Var log_sum_exp(const Var& a, std::size_t axis);
// softmax(z / temperature) over the last axis; temperature must be > 0.
Var softmax(const Var& a, double temperature = 1.0);

// --- recurrent -----------------------------------------------------------
// Single-direction LSTM over the rows of x (T x I) with zero initial state.
// Gate layout in the 4H columns: input, forget, cell, output.
// Output row t is the hidden state after consuming row t; with reverse=true
// rows are consumed from T-1 down to 0 and outputs stay position-aligned.
Var lstm(const Var& x, const Var& w_input, const Var& w_hidden, const Var& bias, bool reverse);

}  // namespace structrans::ad
