#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "structrans/data.hpp"
#include "structrans/model.hpp"

namespace structrans::inference {

using model::Ids;

// CNF grammar read from text:
//
//   # comment
//   %start S
//   S -> A B
//   A -> 'a'
//
// Nonterminals are declared by appearing on a left-hand side. Without a
// %start line the first left-hand side is the start symbol.
struct Grammar {
  std::vector<std::string> nonterminals;
  std::vector<std::string> terminals;
  std::size_t start = 0;
  std::vector<std::array<std::size_t, 3>> binary;   // A -> B C
  std::vector<std::array<std::size_t, 2>> lexical;  // A -> terminal

  std::size_t nonterminal(const std::string& name) const;
};

class GrammarError : public std::runtime_error {
 public:
  GrammarError(const std::string& where, std::size_t line, const std::string& what);
};

Grammar parse_grammar(std::istream& in, const std::string& where = "<grammar>");
Grammar parse_grammar_file(const std::filesystem::path& path);

// Grammar with terminals resolved to target vocabulary ids.
struct CompiledGrammar {
  std::size_t nonterminals = 0;
  std::size_t start = 0;
  std::vector<std::array<std::size_t, 3>> binary;
  std::vector<std::array<std::size_t, 2>> lexical;  // A -> token id
};

// Every terminal must be in the vocabulary.
CompiledGrammar compile(const Grammar& grammar, const data::Vocabulary& vocabulary);

class NoParse : public std::runtime_error {
 public:
  explicit NoParse(std::size_t length);
  std::size_t length() const { return length_; }

 private:
  std::size_t length_;
};

struct ViterbiResult {
  Ids tokens;
  double log_score = 0.0;
};

// Best string in L(G) of length rows(log_probs) under per-position scores
// log_probs (l x V). Ties go to the earlier split, rule and token.
ViterbiResult viterbi_cyk(const Array& log_probs, const CompiledGrammar& grammar);
// CYK recognizer over the same representation.
bool recognizes(const CompiledGrammar& grammar, const Ids& tokens);

struct DecodeResult {
  Ids tokens;
  std::size_t length = 0;
  double log_score = 0.0;         // log P(l|x) + sum_i log P(y_i | ...)
  double length_log_prob = 0.0;
  std::vector<std::size_t> attempted;  // candidate lengths, best first
};

class NoFeasibleLength : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The k most probable lengths in 1..n*d (ties toward smaller l), skipping
// lengths of probability zero.
std::vector<std::size_t> top_lengths(const Array& length_distribution, std::size_t k);

DecodeResult predict(const model::Model& m, const Ids& source, std::size_t k = 1);
DecodeResult predict_grammar(const model::Model& m, const Ids& source, const CompiledGrammar& grammar,
                             std::size_t k = 5);
DecodeResult predict_autoregressive(const model::Model& m, const Ids& source, std::size_t k = 1);

// Dispatches on the decoder kind and the presence of a grammar. k = 0 picks
// the default (1, or 5 with a grammar).
DecodeResult decode(const model::Model& m, const Ids& source, const CompiledGrammar* grammar, std::size_t k = 0);

// log P(y | x, l) for a full candidate, using the model's own distributions.
double sequence_log_prob(const model::Model& m, const Ids& source, const Ids& target);

// One JSON object per line: source, prediction, length, log_score.
void write_predictions(std::ostream& out, const std::vector<data::Tokens>& sources,
                       const std::vector<data::Tokens>& predictions, const std::vector<DecodeResult>& results);

}  // namespace structrans::inference
