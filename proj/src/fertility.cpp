#include "structrans/fertility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace structrans::fertility {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string infeasible_message(std::size_t length, const std::vector<std::size_t>& support) {
  std::ostringstream os;
  os << "infeasible length " << length << " (length support:";
  for (auto h : support) os << ' ' << h;
  os << ')';
  return os.str();
}

void check_probs(const char* op, const Array& p) {
  if (p.rank() != 2 || p.dim(1) < 2 || p.dim(0) == 0) throw ShapeError(op, {p.shape()});
  for (double v : p.data())
    if (!(v >= 0.0)) throw DomainError(std::string(op) + ": fertility probabilities must be nonnegative");
}

// Forward and backward partial-sum tables over rows 0..n+1.
struct Sweeps {
  std::size_t n = 0, d = 0, width = 0;
  std::vector<double> fwd, bwd;
  double f(std::size_t i, std::size_t h) const { return fwd[i * width + h]; }
  double b(std::size_t i, std::size_t h) const { return bwd[i * width + h]; }
};

Sweeps sweep(const Array& p) {
  Sweeps s;
  s.n = p.dim(0);
  s.d = p.dim(1) - 1;
  s.width = s.n * s.d + 1;
  s.fwd.assign((s.n + 2) * s.width, 0.0);
  s.bwd.assign((s.n + 2) * s.width, 0.0);
  s.fwd[0] = 1.0;
  for (std::size_t i = 1; i <= s.n; ++i) {
    const std::size_t reach = (i - 1) * s.d;
    for (std::size_t h = 0; h <= reach; ++h) {
      const double prev = s.fwd[(i - 1) * s.width + h];
      if (prev == 0.0) continue;
      for (std::size_t r = 0; r <= s.d; ++r) s.fwd[i * s.width + h + r] += p.at(i - 1, r) * prev;
    }
  }
  std::copy_n(s.fwd.begin() + s.n * s.width, s.width, s.fwd.begin() + (s.n + 1) * s.width);
  s.bwd[(s.n + 1) * s.width] = 1.0;
  for (std::size_t i = s.n; i >= 1; --i) {
    const std::size_t reach = (s.n - i) * s.d;
    for (std::size_t h = 0; h <= reach; ++h) {
      const double next = s.bwd[(i + 1) * s.width + h];
      if (next == 0.0) continue;
      for (std::size_t r = 0; r <= s.d; ++r) s.bwd[i * s.width + h + r] += p.at(i - 1, r) * next;
    }
  }
  std::copy_n(s.bwd.begin() + s.width, s.width, s.bwd.begin());
  return s;
}

// Backpropagates adjoints of the forward table rows 1..n+1 into probs.
void forward_sweep_adjoint(const Array& p, const Sweeps& s, std::vector<double>& gf, Array& gp) {
  const std::size_t w = s.width;
  for (std::size_t h = 0; h < w; ++h) gf[s.n * w + h] += gf[(s.n + 1) * w + h];
  for (std::size_t i = s.n; i >= 1; --i) {
    const std::size_t reach = (i - 1) * s.d;
    for (std::size_t h = 0; h <= reach; ++h) {
      const double prev = s.fwd[(i - 1) * w + h];
      double gprev = 0.0;
      for (std::size_t r = 0; r <= s.d; ++r) {
        const double g = gf[i * w + h + r];
        gp.at(i - 1, r) += g * prev;
        gprev += g * p.at(i - 1, r);
      }
      gf[(i - 1) * w + h] += gprev;
    }
  }
}

// Backpropagates adjoints of the backward table rows 0..n into probs.
void backward_sweep_adjoint(const Array& p, const Sweeps& s, std::vector<double>& gb, Array& gp) {
  const std::size_t w = s.width;
  for (std::size_t h = 0; h < w; ++h) gb[w + h] += gb[h];
  for (std::size_t i = 1; i <= s.n; ++i) {
    const std::size_t reach = (s.n - i) * s.d;
    for (std::size_t h = 0; h <= reach; ++h) {
      const double next = s.bwd[(i + 1) * w + h];
      double gnext = 0.0;
      for (std::size_t r = 0; r <= s.d; ++r) {
        const double g = gb[i * w + h + r];
        gp.at(i - 1, r) += g * next;
        gnext += g * p.at(i - 1, r);
      }
      gb[(i + 1) * w + h] += gnext;
    }
  }
}

// Unnormalised numerator of the marginal for every feasible (i, j, u),
// divided by z. Loop limits enforce j-u >= 0, l-j-v >= 0 and u+v <= d.
void marginal_values(const Array& p, const Sweeps& s, std::size_t l, double z, Array& out, DpStats* stats) {
  const std::size_t n = s.n, d = s.d;
  std::uint64_t terms = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= l; ++j) {
      for (std::size_t u = 1; u <= std::min(d, j); ++u) {
        const double before = s.f(i - 1, j - u);
        if (before == 0.0) continue;
        const std::size_t vmax = std::min(l - j, d - u);
        double acc = 0.0;
        for (std::size_t v = 0; v <= vmax; ++v) {
          if (l - j - v < s.width) acc += p.at(i - 1, u + v) * s.b(i + 1, l - j - v);
        }
        terms += vmax + 1;
        out.at(i - 1, j - 1, u - 1) = before * acc / z;
      }
    }
  }
  if (stats) stats->marginal_terms += terms;
}

void check_length(std::size_t l, const Array& p) {
  const std::size_t lmax = p.dim(0) * (p.dim(1) - 1);
  if (l == 0 || l > lmax) throw InfeasibleLength(l, length_support(p));
}

// log of the forward/backward tables; only the normaliser fallback needs them.
struct LogSweeps {
  std::size_t n = 0, d = 0, width = 0;
  std::vector<double> fwd, bwd;
};

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

LogSweeps log_sweep(const Array& p) {
  LogSweeps s;
  s.n = p.dim(0);
  s.d = p.dim(1) - 1;
  s.width = s.n * s.d + 1;
  s.fwd.assign((s.n + 2) * s.width, kNegInf);
  s.bwd.assign((s.n + 2) * s.width, kNegInf);
  s.fwd[0] = 0.0;
  for (std::size_t i = 1; i <= s.n; ++i)
    for (std::size_t h = 0; h <= (i - 1) * s.d; ++h)
      for (std::size_t r = 0; r <= s.d; ++r)
        if (p.at(i - 1, r) > 0.0)
          s.fwd[i * s.width + h + r] =
              log_add(s.fwd[i * s.width + h + r], std::log(p.at(i - 1, r)) + s.fwd[(i - 1) * s.width + h]);
  std::copy_n(s.fwd.begin() + s.n * s.width, s.width, s.fwd.begin() + (s.n + 1) * s.width);
  s.bwd[(s.n + 1) * s.width] = 0.0;
  for (std::size_t i = s.n; i >= 1; --i)
    for (std::size_t h = 0; h <= (s.n - i) * s.d; ++h)
      for (std::size_t r = 0; r <= s.d; ++r)
        if (p.at(i - 1, r) > 0.0)
          s.bwd[i * s.width + h + r] =
              log_add(s.bwd[i * s.width + h + r], std::log(p.at(i - 1, r)) + s.bwd[(i + 1) * s.width + h]);
  std::copy_n(s.bwd.begin() + s.width, s.width, s.bwd.begin());
  return s;
}

// Exponential tilting q_i(r) ∝ p_i(r) theta^r leaves the distribution
// conditioned on sum f = l unchanged. Picks theta so the tilted mean total is
// l, which lifts P(sum f = l) out of the underflow range. Returns log theta
// and the per-row log normalisers.
double tilt(const Array& p, std::size_t l, Array& q, std::vector<double>& log_norm) {
  const std::size_t n = p.dim(0), d = p.dim(1) - 1;
  auto tilted = [&](double lt) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = kNegInf;
      for (std::size_t r = 0; r <= d; ++r)
        if (p.at(i, r) > 0.0) mx = std::max(mx, std::log(p.at(i, r)) + lt * static_cast<double>(r));
      double z = 0.0;
      for (std::size_t r = 0; r <= d; ++r)
        if (p.at(i, r) > 0.0) z += std::exp(std::log(p.at(i, r)) + lt * static_cast<double>(r) - mx);
      log_norm[i] = mx + std::log(z);
      for (std::size_t r = 0; r <= d; ++r) {
        q.at(i, r) = p.at(i, r) > 0.0 ? std::exp(std::log(p.at(i, r)) + lt * static_cast<double>(r) - log_norm[i]) : 0.0;
        mean += static_cast<double>(r) * q.at(i, r);
      }
    }
    return mean;
  };
  double lo = -700.0, hi = 700.0;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (tilted(mid) < static_cast<double>(l) ? lo : hi) = mid;
  }
  const double lt = 0.5 * (lo + hi);
  tilted(lt);
  return lt;
}

}  // namespace

InfeasibleLength::InfeasibleLength(std::size_t length, std::vector<std::size_t> support)
    : std::runtime_error(infeasible_message(length, support)), length_(length), support_(std::move(support)) {}

FertilityTable::FertilityTable(Array probs) : probs_(std::move(probs)) {
  check_probs("FertilityTable", probs_);
  for (std::size_t i = 0; i < probs_.dim(0); ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < probs_.dim(1); ++r) s += probs_.at(i, r);
    if (std::abs(s - 1.0) > 1e-9) throw DomainError("FertilityTable: row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
}

std::vector<std::size_t> length_support(const Array& p) {
  const std::size_t n = p.dim(0), d = p.dim(1) - 1;
  std::vector<char> reach(n * d + 1, 0), next(n * d + 1, 0);
  reach[0] = 1;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(next.begin(), next.end(), 0);
    for (std::size_t h = 0; h <= i * d; ++h)
      if (reach[h])
        for (std::size_t r = 0; r <= d; ++r)
          if (p.at(i, r) > 0.0) next[h + r] = 1;
    reach.swap(next);
  }
  std::vector<std::size_t> out;
  for (std::size_t h = 0; h < reach.size(); ++h)
    if (reach[h]) out.push_back(h);
  return out;
}

LengthTables length_tables(const FertilityTable& table) {
  const Sweeps s = sweep(table.probs());
  return {Array(Shape{s.n + 2, s.width}, s.fwd), Array(Shape{s.n + 2, s.width}, s.bwd)};
}

Array length_distribution(const FertilityTable& table) {
  const Sweeps s = sweep(table.probs());
  return Array(Shape{s.width}, std::vector<double>(s.fwd.begin() + (s.n + 1) * s.width, s.fwd.end()));
}

MarginalFertility marginal_fertility(const FertilityTable& table, std::size_t length, DpStats* stats) {
  auto probs = ad::constant(table.probs());
  return {length, marginal_fertility(probs, length, stats)->value};
}

Array expected_fertilities(const MarginalFertility& mf) {
  const std::size_t n = mf.tensor.dim(0), l = mf.tensor.dim(1), d = mf.tensor.dim(2);
  Array out(Shape{n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < l; ++j)
      for (std::size_t u = 0; u < d; ++u) out[i] += mf.tensor.at(i, j, u);
  return out;
}

ad::Var length_distribution(const ad::Var& probs) {
  check_probs("length_distribution", probs->value);
  auto s = std::make_shared<Sweeps>(sweep(probs->value));
  Array out(Shape{s->width}, std::vector<double>(s->fwd.begin() + (s->n + 1) * s->width, s->fwd.end()));
  return ad::make_node("length_distribution", std::move(out), {probs}, [s](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    std::vector<double> gf(s->fwd.size(), 0.0);
    for (std::size_t h = 0; h < s->width; ++h) gf[(s->n + 1) * s->width + h] = self.grad[h];
    forward_sweep_adjoint(p.value, *s, gf, p.grad_buffer());
  });
}

ad::Var marginal_fertility(const ad::Var& probs, std::size_t length, DpStats* stats) {
  check_probs("marginal_fertility", probs->value);
  check_length(length, probs->value);
  const std::size_t n = probs->value.dim(0), d = probs->value.dim(1) - 1, l = length;

  auto s = std::make_shared<Sweeps>(sweep(probs->value));
  double z = s->f(n + 1, l);
  if (z >= kUnderflowGuard) {
    Array out(Shape{n, l, d});
    marginal_values(probs->value, *s, l, z, out, stats);
    return ad::make_node("marginal_fertility", std::move(out), {probs}, [s, l, z](ad::Node& self) {
      ad::Node& pn = *self.parents[0];
      const Array& p = pn.value;
      const std::size_t n = s->n, d = s->d, w = s->width;
      Array& gp = pn.grad_buffer();
      std::vector<double> gf(s->fwd.size(), 0.0), gb(s->bwd.size(), 0.0);
      double gz = 0.0;
      for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= l; ++j)
          for (std::size_t u = 1; u <= std::min(d, j); ++u) {
            const double g = self.grad.at(i - 1, j - 1, u - 1);
            const double val = self.value.at(i - 1, j - 1, u - 1);
            gz -= g * val / z;
            const double before = s->f(i - 1, j - u);
            if (g == 0.0) continue;
            const double gs = g / z;
            const std::size_t vmax = std::min(l - j, d - u);
            double inner = 0.0;
            for (std::size_t v = 0; v <= vmax; ++v) {
              const std::size_t rest = l - j - v;
              if (rest >= w) continue;
              const double pv = p.at(i - 1, u + v);
              const double after = s->b(i + 1, rest);
              inner += pv * after;
              gp.at(i - 1, u + v) += gs * before * after;
              gb[(i + 1) * w + rest] += gs * before * pv;
            }
            gf[(i - 1) * w + j - u] += gs * inner;
          }
      gf[(n + 1) * w + l] += gz;
      forward_sweep_adjoint(p, *s, gf, gp);
      backward_sweep_adjoint(p, *s, gb, gp);
    });
  }

  // Underflow: rerun on the tilted table, which has the same conditional
  // marginals. Row scaling leaves the marginals invariant, so the Jacobian
  // of the tilt reduces to the diagonal factor theta^r / c_i.
  const auto support = length_support(probs->value);
  if (std::find(support.begin(), support.end(), l) == support.end()) throw InfeasibleLength(l, support);
  Array q(probs->value.shape());
  std::vector<double> log_norm(n);
  const double log_theta = tilt(probs->value, l, q, log_norm);
  if (!(sweep(q).f(n + 1, l) >= kUnderflowGuard))
    throw NumericError("marginal_fertility: P(l=" + std::to_string(l) + ") underflows even after tilting");
  auto tilted = ad::parameter(q);
  auto inner = marginal_fertility(tilted, l, stats);
  Array factor(probs->value.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r <= d; ++r) factor.at(i, r) = std::exp(log_theta * static_cast<double>(r) - log_norm[i]);
  return ad::make_node("marginal_fertility", inner->value, {probs},
                       [inner, tilted, factor = std::move(factor)](ad::Node& self) {
    inner->grad = self.grad;
    tilted->zero_grad();
    inner->adjoint(*inner);
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += tilted->grad[k] * factor[k];
  });
}

ad::Var log_length_probability(const ad::Var& probs, std::size_t length) {
  check_probs("log_length_probability", probs->value);
  check_length(length, probs->value);
  const std::size_t l = length;
  auto s = std::make_shared<Sweeps>(sweep(probs->value));
  const double z = s->f(s->n + 1, l);
  if (z >= kUnderflowGuard) {
    return ad::make_node("log_length_probability", Array::scalar(std::log(z)), {probs}, [s, l, z](ad::Node& self) {
      ad::Node& p = *self.parents[0];
      std::vector<double> gf(s->fwd.size(), 0.0);
      gf[(s->n + 1) * s->width + l] = self.grad[0] / z;
      forward_sweep_adjoint(p.value, *s, gf, p.grad_buffer());
    });
  }
  // Log-space normaliser: d log Z / d p_i(r) = sum_h F[i-1][h] B[i+1][l-r-h] / Z.
  auto ls = std::make_shared<LogSweeps>(log_sweep(probs->value));
  const double log_z = ls->fwd[(ls->n + 1) * ls->width + l];
  if (log_z == kNegInf) throw InfeasibleLength(l, length_support(probs->value));
  return ad::make_node("log_length_probability", Array::scalar(log_z), {probs}, [ls, l, log_z](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    const std::size_t w = ls->width;
    for (std::size_t i = 1; i <= ls->n; ++i)
      for (std::size_t r = 0; r <= ls->d && r <= l; ++r) {
        double acc = 0.0;
        for (std::size_t h = 0; h + r <= l; ++h) {
          const std::size_t rest = l - r - h;
          if (h >= w || rest >= w) continue;
          const double t = ls->fwd[(i - 1) * w + h] + ls->bwd[(i + 1) * w + rest] - log_z;
          if (t > kNegInf) acc += std::exp(t);
        }
        gp.at(i - 1, r) += self.grad[0] * acc;
      }
  });
}

}  // namespace structrans::fertility
