#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "structrans/checks.hpp"
#include "structrans/config.hpp"
#include "structrans/fertility.hpp"
#include "structrans/model.hpp"
#include "structrans/reordering.hpp"

using namespace structrans;
using namespace structrans::model;
using doctest::Approx;

namespace {

ModelConfig small_config(DecoderKind decoder = DecoderKind::kIndependent, Order order = Order::kFertilityFirst) {
  ModelConfig c;
  c.source_vocab = 5;
  c.target_vocab = 4;
  c.embedding_dim = 6;
  c.fertility_hidden = c.reorder_hidden = c.decoder_hidden = 3;
  c.fertility_mlp = c.reorder_mlp = c.decoder_mlp = 7;
  c.max_fertility = 3;
  c.init_scale = 0.5;
  c.order = order;
  c.decoder = decoder;
  if (decoder == DecoderKind::kCopy) c.copy_targets = {0, 1, 2, 3, 0};
  return c;
}

void zero(Model& m, const std::string& name) { m.parameters().get(name)->value.fill(0.0); }

bool bit_equal(const Array& a, const Array& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double max_diff(const Array& a, const Array& b) {
  double w = 0;
  for (std::size_t k = 0; k < a.size(); ++k) w = std::max(w, std::abs(a[k] - b[k]));
  return w;
}

void check_rows_are_distributions(const Array& p) {
  for (std::size_t r = 0; r < p.dim(0); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < p.dim(1); ++c) {
      CHECK(p.at(r, c) >= 0.0);
      s += p.at(r, c);
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

// softmax(W_u MLP(h'_j)) computed straight from the parameters.
Array direct_token_probs(const Model& m, const Array& states) {
  const auto& c = m.config();
  const auto& P = m.parameters();
  const Array &w1 = P.get("dec.w1")->value, &b1 = P.get("dec.b1")->value;
  const Array &wo = P.get("dec.out.w")->value, &bo = P.get("dec.out.b")->value;
  const std::size_t n = states.dim(0), D = states.dim(1), M = c.decoder_mlp, d = c.max_fertility, V = c.target_vocab;
  Array out(Shape{n * d, V});
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> h(M);
    for (std::size_t k = 0; k < M; ++k) {
      double a = b1[k];
      for (std::size_t q = 0; q < D; ++q) a += states.at(j, q) * w1.at(q, k);
      h[k] = std::tanh(a);
    }
    for (std::size_t u = 0; u < d; ++u) {
      std::vector<double> z(V);
      double mx = -1e300, s = 0;
      for (std::size_t y = 0; y < V; ++y) {
        z[y] = bo[u * V + y];
        for (std::size_t k = 0; k < M; ++k) z[y] += h[k] * wo.at(k, u * V + y);
        mx = std::max(mx, z[y]);
      }
      for (std::size_t y = 0; y < V; ++y) s += std::exp(z[y] - mx);
      for (std::size_t y = 0; y < V; ++y) out.at(j * d + u, y) = std::exp(z[y] - mx) / s;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("single-token input") {
  Model m(small_config(), 1);
  const auto enc = m.encode({2});
  CHECK(enc.embeddings->value.dim(0) == 1);
  CHECK(enc.decoder_states->value.dim(0) == 1);
  CHECK(m.fertility_probs(enc)->value.dim(0) == 1);
}

TEST_CASE("rho zero leaves the embeddings") {
  auto c = small_config();
  c.rho = 0.0;
  Model m(c, 3);
  const auto enc = m.encode({0, 1, 4});
  CHECK(bit_equal(enc.decoder_states->value, enc.embeddings->value));
}

TEST_CASE("same seed gives identical outputs") {
  for (auto order : {Order::kFertilityFirst, Order::kReorderFirst}) {
    Model a(small_config(DecoderKind::kIndependent, order), 9), b(small_config(DecoderKind::kIndependent, order), 9);
    const Ids src{1, 3, 0, 2};
    const auto fa = a.forward(a.encode(src), 5), fb = b.forward(b.encode(src), 5);
    CHECK(bit_equal(fa.output->value, fb.output->value));
    CHECK(bit_equal(fa.span_scores->value, fb.span_scores->value));
    CHECK(bit_equal(a.encode(src).decoder_states->value, b.encode(src).decoder_states->value));
  }
}

TEST_CASE("invalid inputs") {
  auto c = small_config();
  c.max_source_length = 4;
  Model m(c, 1);
  CHECK_THROWS_AS(m.encode({}), ConfigError);
  CHECK_THROWS_AS(m.encode({0, 0, 0, 0, 0}), ConfigError);
  CHECK_THROWS_AS(m.encode({5}), std::out_of_range);
  auto bad = small_config();
  bad.temperature = 0.0;
  CHECK_THROWS_AS(Model(bad, 1), ConfigError);
  auto copy = small_config(DecoderKind::kCopy);
  copy.copy_targets.pop_back();
  CHECK_THROWS_AS(Model(copy, 1), ConfigError);
}

TEST_CASE("fertility head") {
  SUBCASE("zero output layer gives uniform rows") {
    Model m(small_config(), 2);
    zero(m, "fert.mlp.w2");
    const Array p = m.fertility_probs(m.encode({0, 1, 2}))->value;
    for (double v : p.storage()) CHECK(v == Approx(0.25));
  }
  SUBCASE("low temperature approaches one-hot") {
    auto c = small_config();
    c.temperature = 0.001;
    Model m(c, 2);
    zero(m, "fert.mlp.w2");
    m.parameters().get("fert.mlp.b2")->value = Array::vector({0.1, 0.3, 0.2, 0.0});
    const Array p = m.fertility_probs(m.encode({0, 1}))->value;
    CHECK(p.at(0, 1) > 1.0 - 1e-6);
    CHECK(p.at(1, 1) > 1.0 - 1e-6);
  }
  SUBCASE("random weights give distributions") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Model m(small_config(), seed);
      const Array p = m.fertility_probs(m.encode({4, 3, 2, 1, 0}))->value;
      for (std::size_t i = 0; i < p.dim(0); ++i) {
        double s = 0;
        for (std::size_t r = 0; r < p.dim(1); ++r) s += p.at(i, r);
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("intermediate sequence") {
  Model m(small_config(), 4);
  const Array w = m.parameters().get("copy_embed")->value;
  const auto enc = m.encode({0, 3});
  const Array& x = enc.embeddings->value;
  const std::size_t E = 6;
  SUBCASE("identity alignment") {
    Array f(Shape{2, 2, 3});
    f.at(0, 0, 0) = f.at(1, 1, 0) = 1.0;
    const Array h = m.compose_intermediate(enc.embeddings, ad::constant(f))->value;
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t e = 0; e < E; ++e) CHECK(h.at(j, e) == Approx(x.at(j, e) + w.at(0, e)));
  }
  SUBCASE("first input copied twice") {
    Array f(Shape{2, 2, 3});
    f.at(0, 0, 0) = f.at(0, 1, 1) = 1.0;
    const Array h = m.compose_intermediate(enc.embeddings, ad::constant(f))->value;
    for (std::size_t e = 0; e < E; ++e) {
      CHECK(h.at(0, e) == Approx(x.at(0, e) + w.at(0, e)));
      CHECK(h.at(1, e) == Approx(x.at(0, e) + w.at(1, e)));
    }
  }
  SUBCASE("soft alignment stays in the convex hull") {
    const auto probs = m.fertility_probs(enc);
    const auto f = fertility::marginal_fertility(probs, 4);
    const Array h = m.compose_intermediate(enc.embeddings, f)->value;
    double bound = 0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t u = 0; u < 3; ++u) {
        double s = 0;
        for (std::size_t e = 0; e < E; ++e) s += std::pow(x.at(i, e) + w.at(u, e), 2);
        bound = std::max(bound, std::sqrt(s));
      }
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t e = 0; e < E; ++e) s += h.at(j, e) * h.at(j, e);
      CHECK(std::sqrt(s) <= bound + 1e-12);
    }
  }
}

TEST_CASE("span scores") {
  Model m(small_config(), 5);
  const auto enc = m.encode({1, 2, 3});
  CHECK(m.reordering_scores(ad::slice(enc.embeddings, 0, 0, 1))->value.dim(0) == 0);
  const Array s = m.reordering_scores(enc.embeddings)->value;
  CHECK(s.dim(0) == reordering::SpanIndex(3).count());
  CHECK(s.dim(1) == 2);
  zero(m, "reorder.mlp.w2");
  const Array zeroed = m.reordering_scores(enc.embeddings)->value;
  for (double v : zeroed.storage()) CHECK(v == 0.0);
}

TEST_CASE("output rows are distributions for every variant") {
  for (auto dec : {DecoderKind::kIndependent, DecoderKind::kCopy, DecoderKind::kAutoregressive})
    for (auto order : {Order::kFertilityFirst, Order::kReorderFirst}) {
      Model m(small_config(dec, order), 6);
      const Ids src{0, 4, 2};
      const Ids tgt{1, 0, 3, 3, 2};
      const auto f = m.forward(m.encode(src), tgt.size(), tgt);
      CHECK(f.output->value.dim(0) == tgt.size());
      check_rows_are_distributions(f.output->value);
    }
}

TEST_CASE("one input, one output") {
  auto c = small_config();
  c.max_fertility = 1;
  Model m(c, 7);
  const auto enc = m.encode({3});
  const auto f = m.forward(enc, 1);
  const Array direct = direct_token_probs(m, enc.decoder_states->value);
  for (std::size_t y = 0; y < 4; ++y) CHECK(f.output->value.at(0, y) == Approx(direct.at(0, y)).epsilon(1e-12));
}

TEST_CASE("hard alignments select per-copy classifiers") {
  Model m(small_config(), 8);
  const auto enc = m.encode({1, 1, 4});
  const Array direct = direct_token_probs(m, enc.decoder_states->value);
  CHECK(max_diff(m.token_probs(enc)->value, direct) <= 1e-12);
  // Output i taken from (input a[i], copy u[i]).
  const std::size_t d = 3, l = 4;
  const std::size_t a[l] = {2, 0, 0, 1}, u[l] = {0, 1, 0, 2};
  Array align(Shape{3 * d, l});
  for (std::size_t i = 0; i < l; ++i) align.at(a[i] * d + u[i], i) = 1.0;
  const Array out = m.output_distributions(enc, ad::constant(align), {})->value;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t y = 0; y < 4; ++y) CHECK(out.at(i, y) == Approx(direct.at(a[i] * d + u[i], y)).epsilon(1e-12));
}

TEST_CASE("copies of one token can translate differently") {
  Model m(small_config(), 10);
  zero(m, "dec.out.w");
  auto& b = m.parameters().get("dec.out.b")->value;
  b.fill(0.0);
  b[0 * 4 + 2] = 5.0;  // copy 1 prefers token 2
  b[1 * 4 + 3] = 5.0;  // copy 2 prefers token 3
  const auto enc = m.encode({4});
  Array align(Shape{3, 2});
  align.at(0, 0) = align.at(1, 1) = 1.0;
  const Array out = m.output_distributions(enc, ad::constant(align), {})->value;
  CHECK(out.at(0, 2) > 0.9);
  CHECK(out.at(1, 3) > 0.9);
}

TEST_CASE("copy gate") {
  Model m(small_config(DecoderKind::kCopy), 11);
  const auto enc = m.encode({2, 4});
  SUBCASE("open gate copies the surface token") {
    m.parameters().get("dec.gate.b")->value.fill(40.0);
    const Array tp = m.token_probs(enc)->value;
    for (std::size_t u = 0; u < 3; ++u) {
      CHECK(tp.at(0 * 3 + u, 2) == Approx(1.0));
      CHECK(tp.at(1 * 3 + u, 0) == Approx(1.0));
    }
  }
  SUBCASE("closed gate falls back to the classifier") {
    m.parameters().get("dec.gate.b")->value.fill(-40.0);
    zero(m, "dec.gate.w");
    CHECK(max_diff(m.token_probs(enc)->value, direct_token_probs(m, enc.decoder_states->value)) <= 1e-12);
  }
  SUBCASE("source tokens need a target slot") {
    data::Vocabularies v{data::Vocabulary({"a", "b"}), data::Vocabulary({"a"})};
    auto c = small_config(DecoderKind::kCopy);
    CHECK_THROWS_AS(config::bind_vocabularies(c, v), ConfigError);
    const auto merged = config::vocabularies_for({{{"a", "b"}, {"c"}}}, {}, DecoderKind::kCopy);
    CHECK(merged.target.contains("a"));
    CHECK(merged.target.contains("b"));
    CHECK_NOTHROW(config::bind_vocabularies(c, merged));
  }
}

TEST_CASE("autoregressive outputs depend only on earlier tokens") {
  Model m(small_config(DecoderKind::kAutoregressive), 12);
  const auto enc = m.encode({0, 1, 2});
  const auto f1 = m.forward(enc, 4, {0, 1, 2});
  const auto f2 = m.forward(enc, 4, {0, 3, 3});
  for (std::size_t y = 0; y < 4; ++y) {
    CHECK(f1.output->value.at(0, y) == f2.output->value.at(0, y));
    CHECK(f1.output->value.at(1, y) == f2.output->value.at(1, y));
  }
  CHECK(max_diff(f1.output->value, f2.output->value) > 0.0);
  // Prefix-free call returns only the first position.
  const Array first = m.output_distributions(enc, f1.alignment, {})->value;
  CHECK(first.dim(0) == 1);
  for (std::size_t y = 0; y < 4; ++y) CHECK(first.at(0, y) == f1.output->value.at(0, y));
}

TEST_CASE("restoring parameters reproduces the model") {
  Model a(small_config(), 13);
  Model b(small_config(), a.parameters().snapshot());
  const Ids src{3, 1};
  CHECK(bit_equal(a.forward(a.encode(src), 3).output->value, b.forward(b.encode(src), 3).output->value));
}

TEST_CASE("text embeddings") {
  Model m(small_config(), 14);
  const auto path = std::filesystem::temp_directory_path() / "structrans_emb.txt";
  {
    std::ofstream os(path);
    os << "b 1 2 3 4 5 6\r\n";
    os << "zz 1 1 1 1 1 1\n";
  }
  CHECK(load_text_embeddings(m, path, {"a", "b", "c", "d", "e"}) == 1);
  const Array& e = m.parameters().get("embed")->value;
  for (std::size_t k = 0; k < 6; ++k) CHECK(e.at(1, k) == double(k + 1));
  {
    std::ofstream os(path);
    os << "a 1 2\n";
  }
  CHECK_THROWS(load_text_embeddings(m, path, {"a"}));
  std::filesystem::remove(path);
}

TEST_CASE("whole-model gradients match finite differences") {
  for (const auto& r : checks::model_gradient_suite()) {
    INFO(checks::format_report(r));
    CHECK(r.passed);
  }
}

TEST_CASE("length distribution sums to one") {
  const auto r = checks::length_normalisation_suite();
  INFO(checks::format_report(r));
  CHECK(r.passed);
}
