#include "structrans/checks.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

#include "structrans/autodiff.hpp"
#include "structrans/fertility.hpp"
#include "structrans/inference.hpp"
#include "structrans/model.hpp"
#include "structrans/oracles.hpp"
#include "structrans/parameters.hpp"
#include "structrans/reordering.hpp"
#include "structrans/training.hpp"

namespace structrans::checks {

namespace {

Array random_array(Rng& rng, Shape shape, double lo, double hi) {
  Array a(std::move(shape));
  for (auto& v : a.storage()) v = rng.uniform(lo, hi);
  return a;
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

using Builder = std::function<ad::Var(const std::vector<ad::Var>&)>;

// Gradient of sum(weights * op(inputs)) w.r.t. every input, analytic vs FD.
double compare_gradients(const std::vector<Array>& inputs, const Builder& build, Rng& rng) {
  std::vector<ad::Var> vars;
  for (const auto& a : inputs) vars.push_back(ad::parameter(a));
  auto out = build(vars);
  const Array weights = random_array(rng, out->value.shape(), -1.0, 1.0);
  auto loss = ad::sum_all(ad::mul(out, ad::constant(weights)));
  ad::backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Array& probe) {
      std::vector<ad::Var> cs;
      for (std::size_t q = 0; q < inputs.size(); ++q) cs.push_back(ad::constant(q == k ? probe : inputs[q]));
      const auto node = build(cs);
      const Array& y = node->value;
      double s = 0.0;
      for (std::size_t t = 0; t < y.size(); ++t) s += weights[t] * y[t];
      return s;
    };
    const Array numeric = oracles::finite_difference_grad(f, inputs[k], 1e-6);
    const Array analytic = vars[k]->has_grad() ? vars[k]->grad : Array(inputs[k].shape(), 0.0);
    worst = std::max(worst, oracles::max_relative_error(analytic, numeric));
  }
  return worst;
}

struct OpCase {
  const char* name;
  std::function<std::vector<Array>(Rng&)> inputs;
  Builder build;
};

std::vector<OpCase> op_cases() {
  auto mat = [](Rng& r, double lo = -1.5, double hi = 1.5) {
    return random_array(r, Shape{dim(r, 1, 4), dim(r, 1, 4)}, lo, hi);
  };
  std::vector<OpCase> cases;
  cases.push_back({"add", [mat](Rng& r) { auto a = mat(r); return std::vector<Array>{a, random_array(r, a.shape(), -1, 1)}; },
                   [](auto& v) { return ad::add(v[0], v[1]); }});
  cases.push_back({"sub", [mat](Rng& r) { auto a = mat(r); return std::vector<Array>{a, random_array(r, a.shape(), -1, 1)}; },
                   [](auto& v) { return ad::sub(v[0], v[1]); }});
  cases.push_back({"mul", [mat](Rng& r) { auto a = mat(r); return std::vector<Array>{a, random_array(r, a.shape(), -1, 1)}; },
                   [](auto& v) { return ad::mul(v[0], v[1]); }});
  cases.push_back({"scale", [mat](Rng& r) { return std::vector<Array>{mat(r)}; },
                   [](auto& v) { return ad::scale(v[0], -1.7); }});
  cases.push_back({"exp", [mat](Rng& r) { return std::vector<Array>{mat(r)}; }, [](auto& v) { return ad::exp(v[0]); }});
  cases.push_back({"log", [mat](Rng& r) { return std::vector<Array>{mat(r, 0.3, 2.0)}; },
                   [](auto& v) { return ad::log(v[0]); }});
  cases.push_back({"tanh", [mat](Rng& r) { return std::vector<Array>{mat(r)}; }, [](auto& v) { return ad::tanh(v[0]); }});
  cases.push_back({"sigmoid", [mat](Rng& r) { return std::vector<Array>{mat(r)}; },
                   [](auto& v) { return ad::sigmoid(v[0]); }});
  cases.push_back({"add_rowwise",
                   [mat](Rng& r) { auto a = mat(r); return std::vector<Array>{a, random_array(r, Shape{a.dim(1)}, -1, 1)}; },
                   [](auto& v) { return ad::add_rowwise(v[0], v[1]); }});
  cases.push_back({"scale_rows",
                   [mat](Rng& r) { auto a = mat(r); return std::vector<Array>{a, random_array(r, Shape{a.dim(0)}, -1, 1)}; },
                   [](auto& v) { return ad::scale_rows(v[0], v[1]); }});
  cases.push_back({"add_outer_rows",
                   [mat](Rng& r) {
                     auto a = mat(r);
                     return std::vector<Array>{a, random_array(r, Shape{dim(r, 1, 3), a.dim(1)}, -1, 1)};
                   },
                   [](auto& v) { return ad::add_outer_rows(v[0], v[1]); }});
  cases.push_back({"matmul",
                   [mat](Rng& r) { auto a = mat(r); return std::vector<Array>{a, random_array(r, Shape{a.dim(1), dim(r, 1, 4)}, -1, 1)}; },
                   [](auto& v) { return ad::matmul(v[0], v[1]); }});
  cases.push_back({"bmm",
                   [](Rng& r) {
                     const std::size_t b = dim(r, 1, 3), m = dim(r, 1, 3), k = dim(r, 1, 3), n = dim(r, 1, 3);
                     return std::vector<Array>{random_array(r, Shape{b, m, k}, -1, 1), random_array(r, Shape{b, k, n}, -1, 1)};
                   },
                   [](auto& v) { return ad::bmm(v[0], v[1]); }});
  cases.push_back({"transpose", [](Rng& r) { return std::vector<Array>{random_array(r, Shape{dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)}, -1, 1)}; },
                   [](auto& v) { return ad::transpose(v[0]); }});
  cases.push_back({"reshape", [mat](Rng& r) { return std::vector<Array>{mat(r)}; },
                   [](auto& v) { return ad::reshape(v[0], Shape{v[0]->value.size()}); }});
  cases.push_back({"concat",
                   [mat](Rng& r) { auto a = mat(r); return std::vector<Array>{a, random_array(r, Shape{a.dim(0), dim(r, 1, 3)}, -1, 1)}; },
                   [](auto& v) { return ad::concat({v[0], v[1]}, 1); }});
  cases.push_back({"slice", [](Rng& r) { return std::vector<Array>{random_array(r, Shape{dim(r, 1, 3), 4}, -1, 1)}; },
                   [](auto& v) { return ad::slice(v[0], 1, 1, 3); }});
  cases.push_back({"gather_rows", [](Rng& r) { return std::vector<Array>{random_array(r, Shape{3, dim(r, 1, 4)}, -1, 1)}; },
                   [](auto& v) {
                     const std::size_t rows[] = {2, 0, 2, 1};
                     return ad::gather_rows(v[0], rows);
                   }});
  cases.push_back({"pick", [](Rng& r) { return std::vector<Array>{random_array(r, Shape{3, 3}, -1, 1)}; },
                   [](auto& v) {
                     const std::size_t cols[] = {2, 0, 1};
                     return ad::pick(v[0], cols);
                   }});
  cases.push_back({"embedding", [](Rng& r) { return std::vector<Array>{random_array(r, Shape{5, dim(r, 1, 4)}, -1, 1)}; },
                   [](auto& v) {
                     const std::size_t ids[] = {4, 1, 1};
                     return ad::embedding(v[0], ids);
                   }});
  cases.push_back({"sum", [](Rng& r) { return std::vector<Array>{random_array(r, Shape{dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)}, -1, 1)}; },
                   [](auto& v) { return ad::sum(v[0], 1); }});
  cases.push_back({"sum_all", [mat](Rng& r) { return std::vector<Array>{mat(r)}; },
                   [](auto& v) { return ad::sum_all(v[0]); }});
  cases.push_back({"log_sum_exp", [](Rng& r) { return std::vector<Array>{random_array(r, Shape{dim(r, 1, 3), dim(r, 2, 4), dim(r, 1, 3)}, -2, 2)}; },
                   [](auto& v) { return ad::log_sum_exp(v[0], 1); }});
  cases.push_back({"softmax", [](Rng& r) { return std::vector<Array>{random_array(r, Shape{dim(r, 1, 3), dim(r, 2, 5)}, -2, 2)}; },
                   [](auto& v) { return ad::softmax(v[0], 0.7); }});
  for (bool reverse : {false, true}) {
    cases.push_back({reverse ? "lstm(reverse)" : "lstm",
                     [](Rng& r) {
                       const std::size_t t = dim(r, 1, 4), in = dim(r, 1, 3), h = dim(r, 1, 3);
                       return std::vector<Array>{random_array(r, Shape{t, in}, -1, 1), random_array(r, Shape{in, 4 * h}, -1, 1),
                                                 random_array(r, Shape{h, 4 * h}, -1, 1), random_array(r, Shape{4 * h}, -0.5, 0.5)};
                     },
                     [reverse](auto& v) { return ad::lstm(v[0], v[1], v[2], v[3], reverse); }});
  }
  return cases;
}

Array random_fertility_table(Rng& rng, std::size_t n, std::size_t d) {
  Array p(Shape{n, d + 1});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r <= d; ++r) s += (p.at(i, r) = rng.uniform(0.05, 1.0));
    for (std::size_t r = 0; r <= d; ++r) p.at(i, r) /= s;
  }
  return p;
}

}  // namespace

std::vector<CheckReport> op_gradient_suite(std::size_t instances, std::uint64_t seed) {
  std::vector<CheckReport> out;
  Rng rng(seed);
  for (const auto& c : op_cases()) {
    CheckReport r{std::string("gradient:") + c.name, true, 0.0, 1e-4, instances, ""};
    for (std::size_t t = 0; t < instances; ++t) r.worst = std::max(r.worst, compare_gradients(c.inputs(rng), c.build, rng));
    r.passed = r.worst <= r.tolerance;
    out.push_back(r);
  }
  return out;
}

CheckReport fertility_gradient_check(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  CheckReport r{"gradient:marginal_fertility", true, 0.0, 1e-4, instances, ""};
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t n = dim(rng, 1, 5), d = dim(rng, 1, 3);
    const Array p = random_fertility_table(rng, n, d);
    const std::size_t l = dim(rng, 1, n * d);
    // Random mask over cells with non-negligible mass.
    const Array base = fertility::marginal_fertility(fertility::FertilityTable(p), l).tensor;
    Array mask(Shape{n, l, d}, 0.0);
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = (base[k] > 1e-3 && rng.bernoulli(0.5)) ? 1.0 : 0.0;
    auto loss_of = [&](const ad::Var& probs) {
      auto f = fertility::marginal_fertility(probs, l);
      // log over masked cells; unmasked cells are fed 1 so they contribute 0.
      Array one_minus(mask.shape());
      for (std::size_t k = 0; k < mask.size(); ++k) one_minus[k] = 1.0 - mask[k];
      auto picked = ad::add(ad::mul(f, ad::constant(mask)), ad::constant(one_minus));
      return ad::add(ad::sum_all(ad::log(picked)), ad::scale(fertility::log_length_probability(probs, l), 0.5));
    };
    auto probs = ad::parameter(p);
    ad::backward(loss_of(probs));
    const Array numeric = oracles::finite_difference_grad(
        [&](const Array& q) { return loss_of(ad::constant(q))->value[0]; }, p, 1e-6);
    r.worst = std::max(r.worst, oracles::max_relative_error(probs->grad, numeric));
  }
  r.passed = r.worst <= r.tolerance;
  return r;
}

CheckReport permutation_gradient_check(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  CheckReport r{"gradient:expected_permutation", true, 0.0, 1e-4, instances, ""};
  constexpr double eps = 1e-3;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t l = dim(rng, 2, 6);
    const Array s = random_array(rng, Shape{reordering::SpanIndex(l).count(), 2}, -2.0, 2.0);
    auto loss_of = [&](const ad::Var& scores) {
      auto m = reordering::expected_permutation(scores, l);
      return ad::sum_all(ad::log(ad::add(m, ad::constant(Array(m->value.shape(), eps)))));
    };
    auto scores = ad::parameter(s);
    ad::backward(loss_of(scores));
    const Array numeric = oracles::finite_difference_grad(
        [&](const Array& q) { return loss_of(ad::constant(q))->value[0]; }, s, 1e-6);
    r.worst = std::max(r.worst, oracles::max_relative_error(scores->grad, numeric));
  }
  r.passed = r.worst <= r.tolerance;
  return r;
}

CheckReport fertility_oracle_suite(std::size_t tables, std::uint64_t seed) {
  Rng rng(seed);
  CheckReport r{"oracle:marginal_fertility", true, 0.0, 1e-9, 0, ""};
  for (std::size_t n = 1; n <= 5; ++n)
    for (std::size_t d = 1; d <= 3; ++d)
      for (std::size_t t = 0; t < tables; ++t) {
        // Some tables carry exact zeros so that infeasible lengths occur.
        Array p = random_fertility_table(rng, n, d);
        if (t % 4 == 3) {
          for (std::size_t i = 0; i < n; ++i) {
            p.at(i, rng.below(d + 1)) = 0.0;
            double s = 0.0;
            for (std::size_t q = 0; q <= d; ++q) s += p.at(i, q);
            for (std::size_t q = 0; q <= d; ++q) p.at(i, q) /= s;
          }
        }
        const Array lengths = fertility::length_distribution(fertility::FertilityTable(p));
        for (std::size_t l = 1; l <= n * d; ++l) {
          const auto expect = oracles::enum_fertility_marginals(p, l);
          r.worst = std::max(r.worst, std::abs(lengths[l] - expect.length_probability));
          if (!expect.feasible) continue;
          ++r.cases;
          const auto got = fertility::marginal_fertility(fertility::FertilityTable(p), l);
          r.worst = std::max(r.worst, oracles::max_abs_error(got.tensor, expect.marginals));
        }
      }
  r.passed = r.worst <= r.tolerance;
  return r;
}

CheckReport permutation_oracle_suite(std::size_t charts, std::uint64_t seed) {
  Rng rng(seed);
  CheckReport r{"oracle:expected_permutation", true, 0.0, 1e-9, 0, ""};
  for (std::size_t l = 2; l <= 6; ++l)
    for (std::size_t t = 0; t < charts; ++t) {
      reordering::SpanScores s{l, random_array(rng, Shape{reordering::SpanIndex(l).count(), 2}, -3.0, 3.0)};
      const Array got = reordering::expected_permutation(s).matrix;
      const Array expect = oracles::enum_tree_expectation(s.score, l);
      r.worst = std::max(r.worst, oracles::max_abs_error(got, expect));
      ++r.cases;
    }
  r.passed = r.worst <= r.tolerance;
  return r;
}

CheckReport doubly_stochastic_suite(std::size_t max_length, std::uint64_t seed) {
  Rng rng(seed);
  CheckReport r{"property:doubly_stochastic", true, 0.0, 1e-6, 0, ""};
  for (std::size_t l = 1; l <= max_length; ++l) {
    reordering::SpanScores s{l, random_array(rng, Shape{reordering::SpanIndex(l).count(), 2}, -5.0, 5.0)};
    const Array m = reordering::expected_permutation(s).matrix;
    for (std::size_t a = 0; a < l; ++a) {
      double row = 0.0, col = 0.0;
      for (std::size_t b = 0; b < l; ++b) {
        row += m.at(a, b);
        col += m.at(b, a);
        if (m.at(a, b) < 0.0 || m.at(a, b) > 1.0) r.worst = std::max(r.worst, 1.0);
      }
      r.worst = std::max({r.worst, std::abs(row - 1.0), std::abs(col - 1.0)});
    }
    ++r.cases;
  }
  r.passed = r.worst <= r.tolerance;
  return r;
}

namespace {

struct TinyCase {
  const char* name;
  model::Order order;
  model::DecoderKind decoder;
  std::size_t embedding_dim;
  bool guidance;
};

model::ModelConfig tiny_config(const TinyCase& c) {
  model::ModelConfig mc;
  mc.source_vocab = 3;
  mc.target_vocab = 3;
  mc.embedding_dim = c.embedding_dim;
  mc.fertility_hidden = mc.reorder_hidden = mc.decoder_hidden = 2;
  mc.fertility_mlp = mc.reorder_mlp = mc.decoder_mlp = 4;
  mc.max_fertility = 2;
  mc.temperature = 0.8;
  mc.rho = 0.7;
  mc.init_scale = 0.5;
  mc.order = c.order;
  mc.decoder = c.decoder;
  if (c.decoder == model::DecoderKind::kCopy) mc.copy_targets = {2, 0, 1};
  return mc;
}

}  // namespace

std::vector<CheckReport> model_gradient_suite(std::uint64_t seed) {
  const std::vector<TinyCase> cases = {
      {"F->R independent", model::Order::kFertilityFirst, model::DecoderKind::kIndependent, 4, false},
      {"F->R independent, projected skips", model::Order::kFertilityFirst, model::DecoderKind::kIndependent, 5, false},
      {"R->F independent", model::Order::kReorderFirst, model::DecoderKind::kIndependent, 4, false},
      {"F->R copy", model::Order::kFertilityFirst, model::DecoderKind::kCopy, 4, false},
      {"F->R autoregressive", model::Order::kFertilityFirst, model::DecoderKind::kAutoregressive, 4, false},
      {"F->R independent, guidance", model::Order::kFertilityFirst, model::DecoderKind::kIndependent, 4, true},
  };
  Rng rng(seed);
  std::vector<CheckReport> out;
  for (const auto& c : cases) {
    CheckReport r{std::string("gradient:model ") + c.name, true, 0.0, 1e-3, 0, ""};
    for (std::size_t inst = 0; inst < 2; ++inst) {
      model::Model m(tiny_config(c), rng.engine()());
      const std::size_t n = dim(rng, 1, 4);
      const std::size_t l = dim(rng, 1, std::min<std::size_t>(5, n * 2));
      training::IdExample ex;
      for (std::size_t k = 0; k < n; ++k) ex.source.push_back(rng.below(3));
      for (std::size_t k = 0; k < l; ++k) ex.target.push_back(rng.below(3));
      training::TrainConfig cfg;
      cfg.length_weight = 0.7;
      cfg.guidance = c.guidance;
      cfg.guidance_weight = 0.5;
      training::Links links;
      if (c.guidance) links = {{0, 0}, {n - 1, l - 1}};

      auto& store = m.parameters();
      store.zero_grad();
      ad::backward(training::example_loss(m, ex, cfg, 0, &links).total);
      for (const auto& [name, param] : store.entries()) {
        Array analytic = param->has_grad() ? param->grad : Array(param->value.shape());
        Array numeric(param->value.shape());
        for (std::size_t q = 0; q < param->value.size(); ++q) {
          const double orig = param->value[q];
          auto eval = [&](double v) {
            param->value[q] = v;
            ad::NoGradGuard guard;
            return training::example_loss(m, ex, cfg, 0, &links).total->value[0];
          };
          // Five-point stencil, O(h^4) truncation error.
          constexpr double h = 1e-3;
          numeric[q] = (8.0 * (eval(orig + h) - eval(orig - h)) - (eval(orig + 2 * h) - eval(orig - 2 * h))) / (12 * h);
          param->value[q] = orig;
        }
        const double err = oracles::max_relative_error(analytic, numeric);
        if (err > r.worst) {
          r.worst = err;
          r.detail = "worst parameter " + name;
        }
      }
      store.zero_grad();
      ++r.cases;
    }
    r.passed = r.worst <= r.tolerance;
    out.push_back(r);
  }
  return out;
}

CheckReport grammar_oracle_suite(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  CheckReport r{"oracle:viterbi_cyk", true, 0.0, 1e-9, instances, ""};
  std::size_t parsed = 0, mismatched = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    inference::CompiledGrammar g;
    g.nonterminals = dim(rng, 1, 4);
    const std::size_t vocab = dim(rng, 1, 4), l = dim(rng, 1, 4);
    g.start = 0;
    const std::size_t nb = dim(rng, 1, 6), nl = dim(rng, 1, 6);
    for (std::size_t k = 0; k < nb; ++k) g.binary.push_back({rng.below(g.nonterminals), rng.below(g.nonterminals), rng.below(g.nonterminals)});
    for (std::size_t k = 0; k < nl; ++k) g.lexical.push_back({rng.below(g.nonterminals), rng.below(vocab)});
    Array logp(Shape{l, vocab});
    for (std::size_t i = 0; i < l; ++i) {
      double z = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) z += logp.at(i, v) = rng.uniform(0.01, 1.0);
      for (std::size_t v = 0; v < vocab; ++v) logp.at(i, v) = std::log(logp.at(i, v) / z);
    }
    oracles::CnfRules rules{g.nonterminals, g.start, g.binary, g.lexical};
    const auto brute = oracles::brute_force_grammar_argmax(rules, logp);
    bool found = true;
    inference::ViterbiResult v;
    try {
      v = inference::viterbi_cyk(logp, g);
    } catch (const inference::NoParse&) {
      found = false;
    }
    if (found != brute.found) {
      ++mismatched;
      continue;
    }
    if (!found) continue;
    ++parsed;
    double rescored = 0.0;
    for (std::size_t i = 0; i < l; ++i) rescored += logp.at(i, v.tokens[i]);
    if (v.tokens.size() != l || !oracles::derives(rules, v.tokens)) ++mismatched;
    r.worst = std::max({r.worst, std::abs(v.log_score - brute.log_score), std::abs(rescored - v.log_score)});
  }
  if (mismatched) r.worst = std::max(r.worst, 1.0);
  r.detail = std::to_string(parsed) + " with a parse, " + std::to_string(mismatched) + " disagreements";
  r.passed = r.worst <= r.tolerance && mismatched == 0;
  return r;
}

CheckReport length_normalisation_suite(std::size_t models, std::uint64_t seed) {
  Rng rng(seed);
  CheckReport r{"property:length_normalisation", true, 0.0, 1e-9, 0, ""};
  for (std::size_t t = 0; t < models; ++t) {
    model::ModelConfig mc;
    mc.source_vocab = 5;
    mc.target_vocab = 5;
    mc.embedding_dim = 8;
    mc.fertility_hidden = mc.reorder_hidden = mc.decoder_hidden = 4;
    mc.fertility_mlp = mc.reorder_mlp = mc.decoder_mlp = 8;
    mc.max_fertility = dim(rng, 1, 5);
    mc.temperature = rng.uniform(0.2, 2.0);
    mc.init_scale = rng.uniform(0.1, 2.0);
    mc.order = t % 2 ? model::Order::kReorderFirst : model::Order::kFertilityFirst;
    model::Model m(mc, rng.engine()());
    ad::NoGradGuard guard;
    for (std::size_t s = 0; s < 5; ++s) {
      model::Ids src(dim(rng, 1, 15));
      for (auto& x : src) x = rng.below(5);
      const Array dist = m.length_distribution(m.encode(src))->value;
      double total = 0.0;
      for (std::size_t k = 0; k < dist.size(); ++k) total += dist[k];
      r.worst = std::max(r.worst, std::abs(total - 1.0));
      ++r.cases;
    }
  }
  r.passed = r.worst <= r.tolerance;
  return r;
}

std::vector<CheckReport> all_gradient_checks() {
  auto out = op_gradient_suite();
  out.push_back(fertility_gradient_check());
  out.push_back(permutation_gradient_check());
  for (auto& r : model_gradient_suite()) out.push_back(std::move(r));
  return out;
}

std::vector<CheckReport> all_oracle_checks() {
  return {fertility_oracle_suite(), permutation_oracle_suite(), doubly_stochastic_suite(), grammar_oracle_suite(),
          length_normalisation_suite()};
}

std::string format_report(const CheckReport& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS " : "FAIL ") << r.name << "  worst=" << std::setprecision(3) << std::scientific << r.worst
     << " tol=" << r.tolerance << std::defaultfloat << " cases=" << r.cases;
  if (!r.detail.empty()) os << "  " << r.detail;
  return os.str();
}

}  // namespace structrans::checks
