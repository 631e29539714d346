#include "structrans/training.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "structrans/fertility.hpp"
#include "structrans/inference.hpp"

namespace structrans::training {

void TrainConfig::validate() const {
  if (!(length_weight >= 0.0)) throw model::ConfigError("length_weight must be nonnegative");
  if (!(guidance_weight >= 0.0)) throw model::ConfigError("guidance_weight must be nonnegative");
  if (!(guidance_threshold > 0.0 && guidance_threshold <= 1.0))
    throw model::ConfigError("guidance_threshold must lie in (0, 1]");
  if (!(learning_rate > 0.0)) throw model::ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw model::ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw model::ConfigError("epsilon must be positive");
  if (stop_patience == 0) throw model::ConfigError("stop_patience must be at least 1");
}

// --- IBM Model 1 -------------------------------------------------------------

namespace {

bool usable(const IdExample& e) { return !e.source.empty() && !e.target.empty(); }

}  // namespace

Array ibm1_posteriors(const TranslationTable& t, const Ids& source, const Ids& target) {
  const std::size_t n = source.size(), m = target.size();
  Array post(Shape{n + 1, m});
  for (std::size_t i = 0; i < m; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j <= n; ++j) {
      const std::size_t x = j < n ? source[j] : t.null_id();
      z += post.at(j, i) = t.table.at(x, target[i]);
    }
    for (std::size_t j = 0; j <= n; ++j) post.at(j, i) = z > 0.0 ? post.at(j, i) / z : 1.0 / double(n + 1);
  }
  return post;
}

double ibm1_log_likelihood(const TranslationTable& t, const std::vector<IdExample>& corpus) {
  double ll = 0.0;
  for (const auto& e : corpus) {
    if (!usable(e)) continue;
    const std::size_t n = e.source.size();
    for (auto y : e.target) {
      double acc = t.table.at(t.null_id(), y);
      for (auto x : e.source) acc += t.table.at(x, y);
      ll += std::log(acc / double(n + 1));
    }
  }
  return ll;
}

Ibm1Result ibm1_train(const std::vector<IdExample>& corpus, std::size_t source_vocab, std::size_t target_vocab,
                      std::size_t iterations) {
  if (corpus.empty()) throw std::invalid_argument("ibm1_train: empty corpus");
  Ibm1Result r;
  r.t.source_vocab = source_vocab;
  r.t.target_vocab = target_vocab;
  r.t.table = Array(Shape{source_vocab + 1, target_vocab}, 1.0 / double(target_vocab));
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    if (usable(corpus[k])) continue;
    ++r.skipped;
    std::clog << "warning: ibm1: skipping example " << k << " with an empty side\n";
  }
  r.log_likelihood.push_back(ibm1_log_likelihood(r.t, corpus));
  for (std::size_t it = 0; it < iterations; ++it) {
    Array counts(r.t.table.shape());
    for (const auto& e : corpus) {
      if (!usable(e)) continue;
      const Array post = ibm1_posteriors(r.t, e.source, e.target);
      const std::size_t n = e.source.size();
      for (std::size_t i = 0; i < e.target.size(); ++i)
        for (std::size_t j = 0; j <= n; ++j) counts.at(j < n ? e.source[j] : r.t.null_id(), e.target[i]) += post.at(j, i);
    }
    for (std::size_t x = 0; x <= source_vocab; ++x) {
      double z = 0.0;
      for (std::size_t y = 0; y < target_vocab; ++y) z += counts.at(x, y);
      if (z <= 0.0) continue;  // unseen source token keeps its row
      for (std::size_t y = 0; y < target_vocab; ++y) r.t.table.at(x, y) = counts.at(x, y) / z;
    }
    r.log_likelihood.push_back(ibm1_log_likelihood(r.t, corpus));
  }
  return r;
}

std::vector<Links> extract_guidance(const TranslationTable& t, const std::vector<IdExample>& corpus, double chi) {
  std::vector<Links> out(corpus.size());
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    const auto& e = corpus[k];
    if (!usable(e)) continue;
    const Array post = ibm1_posteriors(t, e.source, e.target);
    for (std::size_t i = 0; i < e.target.size(); ++i)
      for (std::size_t j = 0; j < e.source.size(); ++j)
        if (post.at(j, i) >= chi) out[k].emplace_back(j, i);
  }
  return out;
}

// --- objective ---------------------------------------------------------------

LossTerms example_loss(const model::Model& m, const IdExample& ex, const TrainConfig& cfg, std::size_t epoch,
                       const Links* links, std::size_t example_id) {
  const std::size_t n = ex.source.size(), l = ex.target.size();
  if (l == 0 || l > m.max_length(n))
    throw DatasetError("example " + std::to_string(example_id) + ": target length " + std::to_string(l) +
                       " infeasible for source length " + std::to_string(n) + " (maximum " +
                       std::to_string(m.max_length(n)) + ")");
  const auto enc = m.encode(ex.source);
  model::Forward f;
  try {
    f = m.forward(enc, l, ex.target);
  } catch (const fertility::InfeasibleLength& e) {
    throw DatasetError("example " + std::to_string(example_id) + ": " + e.what());
  }
  LossTerms terms;
  std::vector<ad::Var> parts;

  ad::Var nll = ad::neg(ad::sum_all(ad::log(ad::pick(f.output, ex.target))));
  terms.likelihood = nll->value[0];
  parts.push_back(nll);

  if (cfg.length_weight > 0.0) {
    ad::Var len = ad::neg(fertility::log_length_probability(f.fertility_probs, l));
    terms.length = len->value[0];
    parts.push_back(ad::scale(len, cfg.length_weight));
  }

  if (cfg.guidance && links && !links->empty() && epoch < cfg.guidance_epochs && cfg.guidance_weight > 0.0) {
    const std::size_t d = m.config().max_fertility;
    // n x l: probability that output j comes from some copy of input i.
    ad::Var per_input = ad::sum(ad::reshape(f.alignment, {n, d, l}), 1);
    std::vector<std::size_t> rows, cols;
    for (const auto& [i, j] : *links) {
      if (i >= n || j >= l) throw DatasetError("example " + std::to_string(example_id) + ": guidance link out of range");
      rows.push_back(i);
      cols.push_back(j);
    }
    ad::Var g = ad::sum_all(ad::log(ad::pick(ad::gather_rows(per_input, rows), cols)));
    terms.guidance = g->value[0];
    parts.push_back(ad::scale(g, -cfg.guidance_weight));
  }

  terms.total = parts[0];
  for (std::size_t k = 1; k < parts.size(); ++k) terms.total = ad::add(terms.total, parts[k]);
  return terms;
}

// --- training loop -----------------------------------------------------------

double dev_exact_match(const model::Model& m, const std::vector<IdExample>& dev_set) {
  if (dev_set.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& e : dev_set) hits += inference::decode(m, e.source, nullptr).tokens == e.target;
  return double(hits) / double(dev_set.size());
}

std::string metrics_json(const EpochMetrics& e) {
  nlohmann::json j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["dev_exact_match"] = e.dev_exact_match;
  j["wall_ms"] = e.wall_ms;
  return j.dump();
}

TrainResult train(model::Model& m, const std::vector<IdExample>& train_set, const std::vector<IdExample>& dev_set,
                  const TrainConfig& cfg, std::ostream* metrics) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (std::size_t k = 0; k < train_set.size(); ++k) {
    const auto& e = train_set[k];
    if (e.source.empty() || e.target.empty() || e.target.size() > m.max_length(e.source.size()))
      throw DatasetError("training example " + std::to_string(k) + ": target length " + std::to_string(e.target.size()) +
                         " infeasible for source length " + std::to_string(e.source.size()));
  }

  std::vector<Links> guidance;
  if (cfg.guidance) {
    auto ibm = ibm1_train(train_set, m.config().source_vocab, m.config().target_vocab, cfg.ibm1_iterations);
    guidance = extract_guidance(ibm.t, train_set, cfg.guidance_threshold);
  }

  Adam adam(m.parameters(), Adam::Options{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.clip_norm});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::size_t streak = 0;
  m.parameters().zero_grad();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double total = 0.0;
    for (auto k : order) {
      LossTerms terms;
      try {
        terms = example_loss(m, train_set[k], cfg, epoch, cfg.guidance ? &guidance[k] : nullptr, k);
        ad::backward(terms.total);
      } catch (const NumericError& e) {
        throw TrainingError("non-finite value at epoch " + std::to_string(epoch) + ", example " + std::to_string(k) +
                            ": " + e.what());
      }
      const double loss = terms.total->value[0];
      const double norm = adam.step();
      if (!std::isfinite(loss) || !std::isfinite(norm))
        throw TrainingError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", example " +
                            std::to_string(k) + " (loss " + std::to_string(loss) + ", gradient norm " +
                            std::to_string(norm) + ")");
      total += loss;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = total / double(train_set.size());
    em.dev_exact_match = dev_exact_match(m, dev_set);
    em.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(em);
    if (metrics) *metrics << metrics_json(em) << std::endl;

    if (em.dev_exact_match >= result.best_dev_exact_match) {
      result.best_dev_exact_match = em.dev_exact_match;
      result.best_epoch = epoch;
      result.best_parameters = m.parameters().snapshot();
    }
    streak = em.dev_exact_match >= cfg.stop_dev_exact_match ? streak + 1 : 0;
    if (streak >= cfg.stop_patience) break;
  }
  m.parameters().assign(result.best_parameters);
  return result;
}

}  // namespace structrans::training
