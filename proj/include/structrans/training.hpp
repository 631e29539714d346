#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "structrans/model.hpp"

namespace structrans::training {

using model::Ids;

struct IdExample {
  Ids source;
  Ids target;
};

struct TrainConfig {
  double length_weight = 1.0;      // lambda_1
  double guidance_weight = 1.0;    // lambda_2
  std::size_t guidance_epochs = 10;  // m
  double guidance_threshold = 0.6;   // chi
  bool guidance = false;
  std::size_t ibm1_iterations = 5;
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  // Stop once dev exact match has reached stop_dev_exact_match (<= 1) on
  // stop_patience consecutive epochs. Disabled when above 1.
  double stop_dev_exact_match = 2.0;
  std::size_t stop_patience = 1;

  void validate() const;
};

// --- IBM Model 1 -------------------------------------------------------------

// t(y | x) as a (S+1) x T table; row S is the null source token.
struct TranslationTable {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  Array table;
  std::size_t null_id() const { return source_vocab; }
};

struct Ibm1Result {
  TranslationTable t;
  // Corpus log-likelihood before the first iteration and after each one.
  std::vector<double> log_likelihood;
  std::size_t skipped = 0;  // pairs with an empty side
};

Ibm1Result ibm1_train(const std::vector<IdExample>& corpus, std::size_t source_vocab, std::size_t target_vocab,
                      std::size_t iterations);

// (n+1) x m posteriors P(a_i = j | x, y); row n is the null token.
Array ibm1_posteriors(const TranslationTable& t, const Ids& source, const Ids& target);

double ibm1_log_likelihood(const TranslationTable& t, const std::vector<IdExample>& corpus);

// (source index, target index) pairs.
using Links = std::vector<std::pair<std::size_t, std::size_t>>;

// Links whose posterior is at least chi, excluding the null token.
std::vector<Links> extract_guidance(const TranslationTable& t, const std::vector<IdExample>& corpus, double chi);

// --- objective ---------------------------------------------------------------

struct LossTerms {
  ad::Var total;
  double length = 0.0;      // -log P(l|x)
  double likelihood = 0.0;  // -sum_i log P(y_i | ...)
  double guidance = 0.0;    // sum over links of log alignment probability (<= 0)
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss for one example; links may be null. Guidance applies while
// epoch < guidance_epochs.
LossTerms example_loss(const model::Model& m, const IdExample& example, const TrainConfig& cfg, std::size_t epoch,
                       const Links* links = nullptr, std::size_t example_id = 0);

// --- training loop -----------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean over examples
  double dev_exact_match = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_dev_exact_match = -1.0;
  std::vector<std::pair<std::string, Array>> best_parameters;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Seeded per-epoch shuffle, one Adam step per example, dev exact match after
// every epoch. The model ends holding the best-dev parameters. Each epoch's
// metrics go to `metrics` (if given) as one JSON object per line.
TrainResult train(model::Model& m, const std::vector<IdExample>& train_set, const std::vector<IdExample>& dev_set,
                  const TrainConfig& cfg, std::ostream* metrics = nullptr);

// Exact match of greedy top-1 decoding against the references.
double dev_exact_match(const model::Model& m, const std::vector<IdExample>& dev_set);

std::string metrics_json(const EpochMetrics& e);

}  // namespace structrans::training
