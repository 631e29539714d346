#include "structrans/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace structrans::ad {

Array& Node::grad_buffer() {
  if (!has_grad()) grad = Array(value.shape(), 0.0);
  return grad;
}

void Node::zero_grad() {
  if (has_grad()) grad.fill(0.0);
}

Var constant(Array value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Array value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Var make_node(const char* op, Array value, std::vector<Var> parents, std::function<void(Node&)> adjoint) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in forward pass (shape " +
                       shape_string(value.shape()) + ")");
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->requires_grad = g_grad_enabled &&
                     std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->adjoint = std::move(adjoint);
  }
  return n;
}

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw UsageError("backward: root must be scalar, got shape " + shape_string(root->value.shape()));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (n->adjoint) n->zero_grad();
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->adjoint && n->has_grad()) n->adjoint(*n);
  }
}

namespace {

void require_same(const char* op, const Var& a, const Var& b) {
  if (a->value.shape() != b->value.shape()) throw ShapeError(op, {a->value.shape(), b->value.shape()});
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a->value.rank() != rank) throw ShapeError(op, {a->value.shape()});
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError(op, {shape});
  AxisSplit s;
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  s.len = shape[axis];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t k = 0; k < shape.size(); ++k)
    if (k != axis) out.push_back(shape[k]);
  return out;
}

template <class F, class DF>
Var unary(const char* op, const Var& a, F f, DF df) {
  Array out(a->value.shape());
  const auto& x = a->value.storage();
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(x[k]);
  return make_node(op, std::move(out), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * df(p.value[k], self.value[k]);
  });
}

// c (m x n) += a (m x k) * b (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (m x k) += g (m x n) * b^T   where b is (k x n)
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c (k x n) += a^T g   where a is (m x k), g is (m x n)
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Array out(a->value.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a->value[k] + b->value[k];
  return make_node("add", std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Array out(a->value.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a->value[k] - b->value[k];
  return make_node("sub", std::move(out), {a, b}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t q = 0; q < 2; ++q) {
      auto& p = self.parents[q];
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += sign[q] * self.grad[k];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Array out(a->value.shape());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a->value[k] * b->value[k];
  return make_node("mul", std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * y.value[k];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * x.value[k];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary("sigmoid", a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var add_rowwise(const Var& x, const Var& b) {
  require_rank("add_rowwise", x, 2);
  if (b->value.rank() != 1 || b->value.dim(0) != x->value.dim(1))
    throw ShapeError("add_rowwise", {x->value.shape(), b->value.shape()});
  const std::size_t m = x->value.dim(0), k = x->value.dim(1);
  Array out(x->value.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < k; ++c) out.at(r, c) = x->value.at(r, c) + b->value[c];
  return make_node("add_rowwise", std::move(out), {x, b}, [m, k](Node& self) {
    Node& px = *self.parents[0];
    Node& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t q = 0; q < g.size(); ++q) g[q] += self.grad[q];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < k; ++c) g[c] += self.grad.at(r, c);
    }
  });
}

Var scale_rows(const Var& x, const Var& s) {
  require_rank("scale_rows", x, 2);
  if (s->value.size() != x->value.dim(0)) throw ShapeError("scale_rows", {x->value.shape(), s->value.shape()});
  const std::size_t m = x->value.dim(0), k = x->value.dim(1);
  Array out(x->value.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < k; ++c) out.at(r, c) = x->value.at(r, c) * s->value[r];
  return make_node("scale_rows", std::move(out), {x, s}, [m, k](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < k; ++c) g.at(r, c) += self.grad.at(r, c) * ps.value[r];
    }
    if (ps.requires_grad) {
      auto& g = ps.grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < k; ++c) g[r] += self.grad.at(r, c) * px.value.at(r, c);
    }
  });
}

Var add_outer_rows(const Var& a, const Var& c) {
  require_rank("add_outer_rows", a, 2);
  require_rank("add_outer_rows", c, 2);
  if (a->value.dim(1) != c->value.dim(1)) throw ShapeError("add_outer_rows", {a->value.shape(), c->value.shape()});
  const std::size_t n = a->value.dim(0), m = c->value.dim(0), h = a->value.dim(1);
  Array out(Shape{m * n, h});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t q = 0; q < h; ++q) out.at(r * n + j, q) = c->value.at(r, q) + a->value.at(j, q);
  return make_node("add_outer_rows", std::move(out), {a, c}, [n, m, h](Node& self) {
    Node& pa = *self.parents[0];
    Node& pc = *self.parents[1];
    Array* ga = pa.requires_grad ? &pa.grad_buffer() : nullptr;
    Array* gc = pc.requires_grad ? &pc.grad_buffer() : nullptr;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t q = 0; q < h; ++q) {
          const double g = self.grad.at(r * n + j, q);
          if (ga) ga->at(j, q) += g;
          if (gc) gc->at(r, q) += g;
        }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
    throw ShapeError("matmul", {a->value.shape(), b->value.shape()});
  const std::size_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  Array out(Shape{m, n});
  gemm_nn(a->value.data().data(), b->value.data().data(), out.data().data(), m, k, n);
  return make_node("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      gemm_nt(self.grad.data().data(), pb.value.data().data(), pa.grad_buffer().data().data(), m, k, n);
    if (pb.requires_grad)
      gemm_tn(pa.value.data().data(), self.grad.data().data(), pb.grad_buffer().data().data(), m, k, n);
  });
}

Var bmm(const Var& a, const Var& b) {
  if (a->value.rank() != 3 || b->value.rank() != 3 || a->value.dim(0) != b->value.dim(0) ||
      a->value.dim(2) != b->value.dim(1))
    throw ShapeError("bmm", {a->value.shape(), b->value.shape()});
  const std::size_t bs = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n = b->value.dim(2);
  Array out(Shape{bs, m, n});
  for (std::size_t q = 0; q < bs; ++q)
    gemm_nn(a->value.data().data() + q * m * k, b->value.data().data() + q * k * n, out.data().data() + q * m * n,
            m, k, n);
  return make_node("bmm", std::move(out), {a, b}, [bs, m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t q = 0; q < bs; ++q) {
      const double* g = self.grad.data().data() + q * m * n;
      if (pa.requires_grad)
        gemm_nt(g, pb.value.data().data() + q * k * n, pa.grad_buffer().data().data() + q * m * k, m, k, n);
      if (pb.requires_grad)
        gemm_tn(pa.value.data().data() + q * m * k, g, pb.grad_buffer().data().data() + q * k * n, m, k, n);
    }
  });
}

Var transpose(const Var& a) {
  const auto& s = a->value.shape();
  if (s.size() != 2 && s.size() != 3) throw ShapeError("transpose", {s});
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Array out(os);
  for (std::size_t q = 0; q < batch; ++q)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[q * r * c + j * r + i] = a->value[q * r * c + i * c + j];
  return make_node("transpose", std::move(out), {a}, [batch, r, c](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t q = 0; q < batch; ++q)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[q * r * c + i * c + j] += self.grad[q * r * c + j * r + i];
  });
}

Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a->value.size()) throw ShapeError("reshape", {a->value.shape(), shape});
  return make_node("reshape", a->value.reshaped(std::move(shape)), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const Shape& first = parts[0]->value.shape();
  if (axis >= first.size()) throw ShapeError("concat", {first});
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(p->value.shape());
  for (const auto& p : parts) {
    const auto& s = p->value.shape();
    if (s.size() != first.size()) throw ShapeError("concat", shapes);
    for (std::size_t k = 0; k < s.size(); ++k)
      if (k != axis && s[k] != first[k]) throw ShapeError("concat", shapes);
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis("concat", out_shape, axis);
  Array out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p->value.dim(axis);
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(p->value.data().data() + o * len * os.inner, len * os.inner,
                  out.data().data() + (o * os.len + off) * os.inner);
    off += len;
  }
  return make_node("concat", std::move(out), parts, [os, offsets, axis](Node& self) {
    for (std::size_t q = 0; q < self.parents.size(); ++q) {
      Node& p = *self.parents[q];
      if (!p.requires_grad) continue;
      const std::size_t len = p.value.dim(axis);
      auto& g = p.grad_buffer();
      for (std::size_t o = 0; o < os.outer; ++o) {
        const double* src = self.grad.data().data() + (o * os.len + offsets[q]) * os.inner;
        double* dst = g.data().data() + o * len * os.inner;
        for (std::size_t t = 0; t < len * os.inner; ++t) dst[t] += src[t];
      }
    }
  });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis("slice", a->value.shape(), axis);
  if (begin > end || end > s.len) throw ShapeError("slice", {a->value.shape(), Shape{begin, end}});
  Shape out_shape = a->value.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = end - begin;
  Array out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(a->value.data().data() + (o * s.len + begin) * s.inner, len * s.inner,
                out.data().data() + o * len * s.inner);
  return make_node("slice", std::move(out), {a}, [s, begin, len](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = self.grad.data().data() + o * len * s.inner;
      double* dst = g.data().data() + (o * s.len + begin) * s.inner;
      for (std::size_t t = 0; t < len * s.inner; ++t) dst[t] += src[t];
    }
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  if (a->value.rank() < 1) throw ShapeError("gather_rows", {a->value.shape()});
  const std::size_t m = a->value.dim(0);
  const std::size_t width = m ? a->value.size() / m : 0;
  for (auto r : rows)
    if (r >= m) throw ShapeError("gather_rows", {a->value.shape(), Shape{r}});
  Shape out_shape = a->value.shape();
  out_shape[0] = rows.size();
  Array out(out_shape);
  for (std::size_t q = 0; q < rows.size(); ++q)
    std::copy_n(a->value.data().data() + rows[q] * width, width, out.data().data() + q * width);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_node("gather_rows", std::move(out), {a}, [idx = std::move(idx), width](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t q = 0; q < idx.size(); ++q) {
      const double* src = self.grad.data().data() + q * width;
      double* dst = g.data().data() + idx[q] * width;
      for (std::size_t t = 0; t < width; ++t) dst[t] += src[t];
    }
  });
}

Var pick(const Var& a, std::span<const std::size_t> cols) {
  require_rank("pick", a, 2);
  const std::size_t m = a->value.dim(0), k = a->value.dim(1);
  if (cols.size() != m) throw ShapeError("pick", {a->value.shape(), Shape{cols.size()}});
  Array out(Shape{m});
  for (std::size_t r = 0; r < m; ++r) {
    if (cols[r] >= k) throw ShapeError("pick", {a->value.shape(), Shape{r, cols[r]}});
    out[r] = a->value.at(r, cols[r]);
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return make_node("pick", std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) g.at(r, idx[r]) += self.grad[r];
  });
}

Var embedding(const Var& table, std::span<const std::size_t> ids) {
  require_rank("embedding", table, 2);
  for (auto id : ids)
    if (id >= table->value.dim(0))
      throw ShapeError("embedding", {table->value.shape(), Shape{id}});
  return gather_rows(table, ids);
}

Var sum(const Var& a, std::size_t axis) {
  const AxisSplit s = split_axis("sum", a->value.shape(), axis);
  Array out(drop_axis(a->value.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += a->value[(o * s.len + l) * s.inner + i];
  return make_node("sum", std::move(out), {a}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Var sum_all(const Var& a) {
  double acc = 0.0;
  for (double v : a->value.data()) acc += v;
  return make_node("sum_all", Array::scalar(acc), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double up = self.grad[0];
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += up;
  });
}

Var log_sum_exp(const Var& a, std::size_t axis) {
  const AxisSplit s = split_axis("log_sum_exp", a->value.shape(), axis);
  if (s.len == 0) throw ShapeError("log_sum_exp", {a->value.shape()});
  Array out(drop_axis(a->value.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, a->value[(o * s.len + l) * s.inner + i]);
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) acc += std::exp(a->value[(o * s.len + l) * s.inner + i] - mx);
      out[o * s.inner + i] = mx + std::log(acc);
    }
  return make_node("log_sum_exp", std::move(out), {a}, [s](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double lse = self.value[o * s.inner + i];
        const double up = self.grad[o * s.inner + i];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t k = (o * s.len + l) * s.inner + i;
          g[k] += up * std::exp(p.value[k] - lse);
        }
      }
  });
}

Var softmax(const Var& a, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("softmax: temperature must be positive");
  if (a->value.rank() < 1) throw ShapeError("softmax", {a->value.shape()});
  const std::size_t k = a->value.shape().back();
  const std::size_t rows = k ? a->value.size() / k : 0;
  Array out(a->value.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = a->value.data().data() + r * k;
    double* y = out.data().data() + r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, z[c] / temperature);
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) acc += (y[c] = std::exp(z[c] / temperature - mx));
    for (std::size_t c = 0; c < k; ++c) y[c] /= acc;
  }
  return make_node("softmax", std::move(out), {a}, [rows, k, temperature](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data().data() + r * k;
      const double* up = self.grad.data().data() + r * k;
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) dot += up[c] * y[c];
      for (std::size_t c = 0; c < k; ++c) g[r * k + c] += y[c] * (up[c] - dot) / temperature;
    }
  });
}

Var lstm(const Var& x, const Var& w_input, const Var& w_hidden, const Var& bias, bool reverse) {
  require_rank("lstm", x, 2);
  const std::size_t steps = x->value.dim(0), in = x->value.dim(1);
  if (w_hidden->value.rank() != 2 || w_hidden->value.dim(1) != 4 * w_hidden->value.dim(0))
    throw ShapeError("lstm", {x->value.shape(), w_input->value.shape(), w_hidden->value.shape(), bias->value.shape()});
  const std::size_t hid = w_hidden->value.dim(0);
  if (w_input->value.shape() != Shape{in, 4 * hid} || bias->value.shape() != Shape{4 * hid})
    throw ShapeError("lstm", {x->value.shape(), w_input->value.shape(), w_hidden->value.shape(), bias->value.shape()});

  // Per step (in position order): activated gates (4H) and cell state (H).
  auto gates = std::make_shared<std::vector<double>>(steps * 4 * hid);
  auto cells = std::make_shared<std::vector<double>>(steps * hid);
  Array out(Shape{steps, hid});
  std::vector<double> z(4 * hid);
  const double* wx = w_input->value.data().data();
  const double* wh = w_hidden->value.data().data();
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    std::copy(bias->value.data().begin(), bias->value.data().end(), z.begin());
    gemm_nn(x->value.data().data() + t * in, wx, z.data(), 1, in, 4 * hid);
    const double* c_prev = nullptr;
    if (s > 0) {
      const std::size_t tp = reverse ? t + 1 : t - 1;
      gemm_nn(out.data().data() + tp * hid, wh, z.data(), 1, hid, 4 * hid);
      c_prev = cells->data() + tp * hid;
    }
    double* gt = gates->data() + t * 4 * hid;
    double* ct = cells->data() + t * hid;
    double* ht = out.data().data() + t * hid;
    for (std::size_t q = 0; q < hid; ++q) {
      const double ig = sigmoid_scalar(z[q]);
      const double fg = sigmoid_scalar(z[hid + q]);
      const double cg = std::tanh(z[2 * hid + q]);
      const double og = sigmoid_scalar(z[3 * hid + q]);
      gt[q] = ig;
      gt[hid + q] = fg;
      gt[2 * hid + q] = cg;
      gt[3 * hid + q] = og;
      ct[q] = ig * cg + (c_prev ? fg * c_prev[q] : 0.0);
      ht[q] = og * std::tanh(ct[q]);
    }
  }

  return make_node("lstm", std::move(out), {x, w_input, w_hidden, bias},
                   [steps, in, hid, reverse, gates, cells](Node& self) {
    Node& px = *self.parents[0];
    Node& pwx = *self.parents[1];
    Node& pwh = *self.parents[2];
    Node& pb = *self.parents[3];
    std::vector<double> dh_next(hid, 0.0), dc_next(hid, 0.0), dz(4 * hid);
    const double* wx = pwx.value.data().data();
    const double* wh = pwh.value.data().data();
    for (std::size_t s = steps; s-- > 0;) {
      const std::size_t t = reverse ? steps - 1 - s : s;
      const double* gt = gates->data() + t * 4 * hid;
      const double* ct = cells->data() + t * hid;
      const double* c_prev = nullptr;
      const double* h_prev = nullptr;
      if (s > 0) {
        const std::size_t tp = reverse ? t + 1 : t - 1;
        c_prev = cells->data() + tp * hid;
        h_prev = self.value.data().data() + tp * hid;
      }
      for (std::size_t q = 0; q < hid; ++q) {
        const double ig = gt[q], fg = gt[hid + q], cg = gt[2 * hid + q], og = gt[3 * hid + q];
        const double tc = std::tanh(ct[q]);
        const double dh = self.grad.at(t, q) + dh_next[q];
        const double dc = dh * og * (1.0 - tc * tc) + dc_next[q];
        dz[q] = dc * cg * ig * (1.0 - ig);
        dz[hid + q] = c_prev ? dc * c_prev[q] * fg * (1.0 - fg) : 0.0;
        dz[2 * hid + q] = dc * ig * (1.0 - cg * cg);
        dz[3 * hid + q] = dh * tc * og * (1.0 - og);
        dc_next[q] = dc * fg;
      }
      if (pb.requires_grad) {
        auto& g = pb.grad_buffer();
        for (std::size_t q = 0; q < 4 * hid; ++q) g[q] += dz[q];
      }
      if (pwx.requires_grad)
        gemm_tn(px.value.data().data() + t * in, dz.data(), pwx.grad_buffer().data().data(), 1, in, 4 * hid);
      if (px.requires_grad)
        gemm_nt(dz.data(), wx, px.grad_buffer().data().data() + t * in, 1, in, 4 * hid);
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      if (h_prev) {
        if (pwh.requires_grad) gemm_tn(h_prev, dz.data(), pwh.grad_buffer().data().data(), 1, hid, 4 * hid);
        gemm_nt(dz.data(), wh, dh_next.data(), 1, hid, 4 * hid);
      }
    }
  });
}

}  // namespace structrans::ad
