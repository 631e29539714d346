#pragma once

// Fertility + reordering sequence transducer.
//
// F->R: embeddings x feed a BiLSTM and an MLP giving per-token fertility
// distributions; conditioning on the output length l gives the marginal
// copy alignment F (n x l x d). The intermediate sequence
// h_j = sum_{i,u} F[i][j][u] (x_i + w_u) is scored span by span, and the
// tree DP turns the scores into an expected permutation R (l x l).
//
// R->F: the scorer runs over x itself (R is n x n), the fertility encoder
// reads the reordered mixtures R^T x, and the alignment composes R then F.
//
// Either way the decoder sees an alignment A ((n*d) x l) with
// A[j*d + u][i] = P(output i comes from copy u of input j), and
// P(y_i) = sum_{j,u} A[j*d+u][i] P(y | x_j, u).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "structrans/autodiff.hpp"
#include "structrans/parameters.hpp"

namespace structrans::model {

using ad::Var;
using Ids = std::vector<std::size_t>;

enum class Order { kFertilityFirst, kReorderFirst };
enum class DecoderKind { kIndependent, kCopy, kAutoregressive };

std::string to_string(Order o);
std::string to_string(DecoderKind k);
Order parse_order(const std::string& s);           // "F->R" | "R->F"
DecoderKind parse_decoder(const std::string& s);   // "independent" | "copy" | "autoregressive"

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t embedding_dim = 32;
  std::size_t fertility_hidden = 16;
  std::size_t reorder_hidden = 16;
  std::size_t decoder_hidden = 16;
  std::size_t fertility_mlp = 64;
  std::size_t reorder_mlp = 64;
  std::size_t decoder_mlp = 64;
  std::size_t max_fertility = 4;
  std::size_t max_source_length = 64;
  double temperature = 1.0;
  double rho = 1.0;
  double init_scale = 0.1;
  Order order = Order::kFertilityFirst;
  DecoderKind decoder = DecoderKind::kIndependent;
  // Copy decoder only: target id of each source id.
  std::vector<std::size_t> copy_targets;

  void validate() const;
};

struct EncodedInput {
  Ids source;
  Var embeddings;        // n x E
  Var decoder_states;    // n x E, rho * BiLSTM(x) + x
};

// Everything computed for one (source, length) pair.
struct Forward {
  std::size_t length = 0;
  Var fertility_probs;   // n x (d+1)
  Var marginal_fertility;  // n x l x d
  Var intermediate;      // l x E (F->R only)
  Var span_scores;       // spans x 2
  Var permutation;       // l x l (F->R) or n x n (R->F)
  Var alignment;         // (n*d) x l
  Var output;            // l x V, rows are distributions
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  // Restores a model from stored parameters; names and shapes must match.
  Model(ModelConfig config, const std::vector<std::pair<std::string, Array>>& values);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  EncodedInput encode(const Ids& source) const;
  // softmax_tau(MLP(states)) over 0..d.
  Var fertility_head(const Var& states) const;
  // Fertility distributions for an encoded input (runs the reordering for R->F).
  Var fertility_probs(const EncodedInput& enc) const;
  Var compose_intermediate(const Var& embeddings, const Var& marginal) const;
  // spans x 2 (straight, inverted) for SpanIndex(rows(sequence)).
  Var reordering_scores(const Var& sequence) const;
  // Per-position output distributions. prefix holds y_1..y_{l-1} for the
  // autoregressive decoder (teacher forcing) and is ignored otherwise.
  Var output_distributions(const EncodedInput& enc, const Var& alignment, const Ids& prefix) const;
  // (n*d) x V, row j*d + u is P(y | x_j, copy u+1). Not for the
  // autoregressive decoder, whose distributions depend on the prefix.
  Var token_probs(const EncodedInput& enc) const;

  Forward forward(const EncodedInput& enc, std::size_t length, const Ids& prefix = {}) const;
  // P(l | x) over l = 0..n*d.
  Var length_distribution(const EncodedInput& enc) const;

  std::size_t max_length(std::size_t n) const { return n * config_.max_fertility; }

 private:
  void build(std::uint64_t seed);
  Var bilstm(const std::string& prefix, const Var& x) const;
  Var mlp(const std::string& prefix, const Var& x) const;
  Var alignment_matrix(const Var& marginal, const Var& permutation, std::size_t n, std::size_t l) const;
  Var autoregressive_output(const EncodedInput& enc, const Var& alignment, const Ids& prefix, std::size_t l) const;
  const Var& p(const std::string& name) const { return store_.get(name); }

  ModelConfig config_;
  ParameterStore store_;
};

// Text embeddings: one token per line followed by embedding_dim floats.
// Rows of the embedding table for listed tokens are overwritten; other
// tokens keep their initialisation. Returns the number of rows replaced.
std::size_t load_text_embeddings(Model& model, const std::filesystem::path& path,
                                 const std::vector<std::string>& source_tokens);

}  // namespace structrans::model
