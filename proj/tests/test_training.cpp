#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "structrans/training.hpp"

using namespace structrans;
using namespace structrans::training;
using doctest::Approx;

namespace {

// Independent EM for IBM Model 1 over string tokens, with "NULL" prepended.
struct ToyEm {
  std::map<std::pair<std::string, std::string>, double> t;  // (x, y) -> t(y|x)
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> corpus;
  std::vector<std::string> ys;

  double prob(const std::string& x, const std::string& y) const {
    auto it = t.find({x, y});
    return it == t.end() ? 1.0 / double(ys.size()) : it->second;
  }
  void iterate() {
    std::map<std::pair<std::string, std::string>, double> count;
    std::map<std::string, double> total;
    for (const auto& [src, tgt] : corpus) {
      std::vector<std::string> xs{"NULL"};
      xs.insert(xs.end(), src.begin(), src.end());
      for (const auto& y : tgt) {
        double z = 0;
        for (const auto& x : xs) z += prob(x, y);
        for (const auto& x : xs) {
          count[{x, y}] += prob(x, y) / z;
          total[x] += prob(x, y) / z;
        }
      }
    }
    std::map<std::pair<std::string, std::string>, double> next;
    for (const auto& [key, c] : count) next[key] = c / total[key.first];
    for (const auto& [x, tot] : total)
      for (const auto& y : ys)
        if (!next.count({x, y})) next[{x, y}] = 0.0;
    t = next;
  }
  double posterior(std::size_t sent, std::size_t j, std::size_t i) const {
    const auto& [src, tgt] = corpus[sent];
    std::vector<std::string> xs{"NULL"};
    xs.insert(xs.end(), src.begin(), src.end());
    double z = 0;
    for (const auto& x : xs) z += prob(x, tgt[i]);
    return prob(src[j], tgt[i]) / z;
  }
};

// Source ids: a=0, b=1; target ids: p=0, q=1.
std::vector<IdExample> toy_corpus() { return {{{0, 1}, {0, 1}}, {{0}, {0}}}; }

ToyEm toy_oracle(std::size_t iterations) {
  ToyEm em;
  em.corpus = {{{"a", "b"}, {"p", "q"}}, {{"a"}, {"p"}}};
  em.ys = {"p", "q"};
  for (std::size_t k = 0; k < iterations; ++k) em.iterate();
  return em;
}

model::ModelConfig tiny(std::size_t d, std::size_t vocab) {
  model::ModelConfig c;
  c.source_vocab = vocab;
  c.target_vocab = vocab;
  c.embedding_dim = 4;
  c.fertility_hidden = c.reorder_hidden = c.decoder_hidden = 2;
  c.fertility_mlp = c.reorder_mlp = c.decoder_mlp = 4;
  c.max_fertility = d;
  return c;
}

void zero_all(model::Model& m) {
  for (const auto& [name, p] : m.parameters().entries()) p->value.fill(0.0);
}

}  // namespace

TEST_CASE("ibm1 on a single repeated pair") {
  const auto r = ibm1_train({{{0}, {0}}, {{0}, {0}}}, 1, 1, 1);
  CHECK(r.t.table.at(0, 0) == Approx(1.0));
}

TEST_CASE("first E-step is uniform") {
  TranslationTable t{2, 2, Array(Shape{3, 2}, 0.5)};
  const Array post = ibm1_posteriors(t, {0, 1}, {0, 1});
  for (double v : post.storage()) CHECK(v == Approx(1.0 / 3.0));
}

TEST_CASE("ibm1 matches an independent EM run") {
  const auto r = ibm1_train(toy_corpus(), 2, 2, 5);
  const auto em = toy_oracle(5);
  const char* xs[] = {"a", "b", "NULL"};
  const char* ys[] = {"p", "q"};
  for (std::size_t x = 0; x < 3; ++x)
    for (std::size_t y = 0; y < 2; ++y) CHECK(r.t.table.at(x, y) == Approx(em.prob(xs[x], ys[y])).epsilon(1e-12));
  CHECK(r.t.table.at(0, 0) > 0.8);
}

TEST_CASE("ibm1 log-likelihood never decreases") {
  Rng rng(3);
  std::vector<IdExample> corpus;
  for (int k = 0; k < 40; ++k) {
    IdExample e;
    for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) e.source.push_back(rng.below(7));
    for (std::size_t i = 0, m = 1 + rng.below(6); i < m; ++i) e.target.push_back(rng.below(5));
    corpus.push_back(e);
  }
  const auto r = ibm1_train(corpus, 7, 5, 15);
  REQUIRE(r.log_likelihood.size() == 16);
  for (std::size_t k = 1; k < r.log_likelihood.size(); ++k) CHECK(r.log_likelihood[k] >= r.log_likelihood[k - 1] - 1e-10);
  for (std::size_t x = 0; x <= 7; ++x) {
    double s = 0;
    for (std::size_t y = 0; y < 5; ++y) s += r.t.table.at(x, y);
    CHECK(s == Approx(1.0));
  }
}

TEST_CASE("ibm1 skips empty pairs") {
  const auto r = ibm1_train({{{0}, {0}}, {{}, {0}}, {{0}, {}}}, 1, 1, 2);
  CHECK(r.skipped == 2);
  CHECK_THROWS(ibm1_train({}, 1, 1, 1));
}

TEST_CASE("guidance extraction") {
  SUBCASE("deterministic table keeps only certain links") {
    TranslationTable t{2, 2, Array::matrix(3, 2, {1, 0, 0, 1, 0, 0})};
    const auto links = extract_guidance(t, {{{0, 1}, {1, 0}}}, 1.0);
    CHECK(links[0] == Links{{1, 0}, {0, 1}});
  }
  SUBCASE("uniform posteriors fall below the threshold") {
    TranslationTable t{2, 2, Array(Shape{3, 2}, 0.5)};
    CHECK(extract_guidance(t, {{{0, 1}, {0, 1}}}, 1.0 / 3.0 + 1e-9)[0].empty());
  }
  SUBCASE("toy corpus") {
    const auto r = ibm1_train(toy_corpus(), 2, 2, 5);
    const auto em = toy_oracle(5);
    std::size_t kept = 0;
    for (double chi : {0.9, 0.5}) {
      const auto links = extract_guidance(r.t, toy_corpus(), chi);
      Links expected[2];
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < em.corpus[s].second.size(); ++i)
          for (std::size_t j = 0; j < em.corpus[s].first.size(); ++j)
            if (em.posterior(s, j, i) >= chi) expected[s].emplace_back(j, i);
      CHECK(links[0] == expected[0]);
      CHECK(links[1] == expected[1]);
      kept += links[0].size() + links[1].size();
    }
    CHECK(kept > 0);
  }
}

TEST_CASE("zero-weight model loss") {
  model::Model m(tiny(1, 2), 1);
  zero_all(m);
  TrainConfig cfg;
  cfg.length_weight = 0.0;
  const IdExample ex{{0}, {1}};
  // Conditioning forces f = 1; the output softmax is uniform over 2 tokens.
  CHECK(example_loss(m, ex, cfg, 0).total->value[0] == Approx(std::log(2.0)).epsilon(1e-14));
  cfg.length_weight = 1.0;
  const auto terms = example_loss(m, ex, cfg, 0);
  CHECK(terms.length == Approx(std::log(2.0)));
  CHECK(terms.total->value[0] == Approx(2.0 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("certain model has zero loss") {
  model::Model m(tiny(1, 2), 1);
  zero_all(m);
  m.parameters().get("fert.mlp.b2")->value = Array::vector({-800.0, 0.0});
  m.parameters().get("dec.out.b")->value = Array::vector({0.0, 800.0});
  TrainConfig cfg;
  CHECK(std::abs(example_loss(m, {{0}, {1}}, cfg, 0).total->value[0]) <= 1e-12);
}

TEST_CASE("loss terms") {
  model::Model m(tiny(2, 3), 4);
  const IdExample ex{{0, 1, 2}, {2, 1, 0, 0}};
  TrainConfig cfg;
  cfg.length_weight = 0.0;
  const auto nll = example_loss(m, ex, cfg, 0);
  CHECK(nll.total->value[0] == Approx(nll.likelihood));
  cfg.length_weight = 0.5;
  const auto both = example_loss(m, ex, cfg, 0);
  CHECK(both.total->value[0] == Approx(both.likelihood + 0.5 * both.length));

  cfg.guidance = true;
  cfg.guidance_weight = 2.0;
  cfg.guidance_epochs = 3;
  const Links links{{0, 3}, {2, 0}};
  const auto g = example_loss(m, ex, cfg, 0, &links);
  CHECK(g.guidance < 0.0);
  CHECK(g.total->value[0] == Approx(g.likelihood + 0.5 * g.length - 2.0 * g.guidance));
  const auto late = example_loss(m, ex, cfg, 3, &links);
  CHECK(late.guidance == 0.0);
  CHECK(late.total->value[0] == Approx(both.total->value[0]));
}

TEST_CASE("guidance vanishes on a certain link") {
  model::Model m(tiny(1, 2), 1);
  const IdExample ex{{0}, {1}};
  TrainConfig cfg;
  cfg.guidance = true;
  const Links links{{0, 0}};
  CHECK(example_loss(m, ex, cfg, 0, &links).guidance == Approx(0.0));
}

TEST_CASE("infeasible target length names the example") {
  model::Model m(tiny(2, 2), 1);
  TrainConfig cfg;
  try {
    example_loss(m, {{0}, {0, 1, 1}}, cfg, 0, nullptr, 17);
    FAIL("expected DatasetError");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("example 17") != std::string::npos);
  }
}

TEST_CASE("overfitting one example") {
  model::Model m(tiny(2, 3), 5);
  const std::vector<IdExample> data{{{0, 1, 2}, {0, 1, 2, 2, 1, 0}}};
  TrainConfig cfg;
  cfg.epochs = 600;
  cfg.learning_rate = 0.02;
  const auto r = train(m, data, data, cfg);
  REQUIRE(r.history.size() == 600);
  CHECK(r.history.back().train_loss < 0.01);
  std::size_t increases = 0;
  for (std::size_t k = 100; k < r.history.size(); ++k) increases += r.history[k].train_loss > r.history[k - 1].train_loss;
  CHECK(increases == 0);
  CHECK(r.best_dev_exact_match == 1.0);
}

TEST_CASE("training is deterministic") {
  std::vector<IdExample> data;
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    IdExample e;
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) e.source.push_back(rng.below(3));
    e.target = e.source;
    e.target.insert(e.target.end(), e.source.rbegin(), e.source.rend());
    data.push_back(e);
  }
  TrainConfig cfg;
  cfg.epochs = 3;
  std::ostringstream log_a, log_b;
  model::Model a(tiny(2, 3), 8), b(tiny(2, 3), 8);
  train(a, data, data, cfg, &log_a);
  train(b, data, data, cfg, &log_b);
  std::istringstream la(log_a.str()), lb(log_b.str());
  std::string x, y;
  std::size_t lines = 0;
  while (std::getline(la, x) && std::getline(lb, y)) {
    // Identical apart from wall time.
    CHECK(x.substr(0, x.find("wall_ms")) == y.substr(0, y.find("wall_ms")));
    ++lines;
  }
  CHECK(lines == 3);
  for (std::size_t k = 0; k < a.parameters().size(); ++k)
    CHECK(a.parameters().entries()[k].second->value.storage() == b.parameters().entries()[k].second->value.storage());
}

TEST_CASE("non-finite values abort training with diagnostics") {
  model::Model m(tiny(2, 3), 1);
  m.parameters().get("embed")->value.at(1, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(m, {{{0}, {0}}, {{1}, {1}}}, {}, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("example 1") != std::string::npos);
  }
}

TEST_CASE("invalid training configs") {
  TrainConfig cfg;
  cfg.guidance_threshold = 0.0;
  CHECK_THROWS_AS(cfg.validate(), model::ConfigError);
  cfg = TrainConfig{};
  cfg.length_weight = -1.0;
  CHECK_THROWS_AS(cfg.validate(), model::ConfigError);
}
