#include "structrans/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace structrans::inference {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_identifier(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (std::isspace(static_cast<unsigned char>(c)) || c == '\'' || c == '#') return false;
  return true;
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

}  // namespace

std::size_t Grammar::nonterminal(const std::string& name) const {
  auto it = std::find(nonterminals.begin(), nonterminals.end(), name);
  if (it == nonterminals.end()) throw std::out_of_range("unknown nonterminal '" + name + "'");
  return static_cast<std::size_t>(it - nonterminals.begin());
}

GrammarError::GrammarError(const std::string& where, std::size_t line, const std::string& what)
    : std::runtime_error(where + ":" + std::to_string(line) + ": " + what) {}

Grammar parse_grammar(std::istream& in, const std::string& where) {
  struct RawRule {
    std::size_t line;
    std::string lhs;
    std::vector<std::string> rhs;
    bool lexical;
  };
  std::vector<RawRule> rules;
  std::string start_name;
  std::size_t start_line = 0;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // '#' starts a comment unless quoted.
    bool quoted = false;
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (line[c] == '\'') quoted = !quoted;
      if (line[c] == '#' && !quoted) {
        line.resize(c);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("%start", 0) == 0) {
      start_name = trim(line.substr(6));
      if (!is_identifier(start_name)) throw GrammarError(where, number, "bad %start line");
      start_line = number;
      continue;
    }
    const auto arrow = line.find("->");
    if (arrow == std::string::npos) throw GrammarError(where, number, "expected 'A -> B C' or \"A -> 'a'\"");
    RawRule r{number, trim(line.substr(0, arrow)), {}, false};
    if (!is_identifier(r.lhs)) throw GrammarError(where, number, "bad left-hand side '" + r.lhs + "'");
    const std::string rhs = trim(line.substr(arrow + 2));
    if (!rhs.empty() && rhs.front() == '\'') {
      if (rhs.size() < 3 || rhs.back() != '\'' || rhs.find('\'', 1) != rhs.size() - 1)
        throw GrammarError(where, number, "bad terminal " + rhs);
      r.lexical = true;
      r.rhs.push_back(rhs.substr(1, rhs.size() - 2));
    } else {
      std::istringstream parts(rhs);
      std::string sym;
      while (parts >> sym) {
        if (sym.front() == '\'')
          throw GrammarError(where, number, "rule is not in CNF (terminals must stand alone: A -> 'a')");
        if (!is_identifier(sym)) throw GrammarError(where, number, "bad symbol '" + sym + "'");
        r.rhs.push_back(sym);
      }
      if (r.rhs.size() != 2)
        throw GrammarError(where, number, "rule is not in CNF (need two nonterminals or one quoted terminal)");
    }
    rules.push_back(std::move(r));
  }

  Grammar g;
  std::unordered_map<std::string, std::size_t> nt, term;
  for (const auto& r : rules)
    if (nt.emplace(r.lhs, g.nonterminals.size()).second) g.nonterminals.push_back(r.lhs);
  for (const auto& r : rules) {
    if (r.lexical) {
      auto [it, fresh] = term.emplace(r.rhs[0], g.terminals.size());
      if (fresh) g.terminals.push_back(r.rhs[0]);
      g.lexical.push_back({nt.at(r.lhs), it->second});
    } else {
      std::array<std::size_t, 3> b{nt.at(r.lhs), 0, 0};
      for (std::size_t k = 0; k < 2; ++k) {
        auto it = nt.find(r.rhs[k]);
        if (it == nt.end()) throw GrammarError(where, r.line, "nonterminal '" + r.rhs[k] + "' has no rules");
        b[k + 1] = it->second;
      }
      g.binary.push_back(b);
    }
  }
  if (g.lexical.empty()) throw GrammarError(where, number, "grammar has no lexical rules");
  if (!start_name.empty()) {
    auto it = nt.find(start_name);
    if (it == nt.end()) throw GrammarError(where, start_line, "start symbol '" + start_name + "' has no rules");
    g.start = it->second;
  }
  return g;
}

Grammar parse_grammar_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_grammar(in, path.string());
}

CompiledGrammar compile(const Grammar& grammar, const data::Vocabulary& vocabulary) {
  CompiledGrammar c;
  c.nonterminals = grammar.nonterminals.size();
  c.start = grammar.start;
  c.binary = grammar.binary;
  for (const auto& [a, t] : grammar.lexical) {
    const auto& token = grammar.terminals[t];
    if (!vocabulary.contains(token)) throw data::UnknownToken(token);
    c.lexical.push_back({a, vocabulary.id(token)});
  }
  return c;
}

NoParse::NoParse(std::size_t length)
    : std::runtime_error("no parse at length " + std::to_string(length)), length_(length) {}

ViterbiResult viterbi_cyk(const Array& log_probs, const CompiledGrammar& g) {
  if (log_probs.rank() != 2 || log_probs.dim(0) == 0) throw ShapeError("viterbi_cyk", {log_probs.shape()});
  const std::size_t l = log_probs.dim(0), V = log_probs.dim(1), N = g.nonterminals;
  struct Cell {
    double score = kNegInf;
    std::size_t split = 0, left = 0, right = 0, token = 0;
    bool set = false;
  };
  // chart[(i * (l + 1) + j) * N + A] for span [i, j).
  std::vector<Cell> chart((l + 1) * (l + 1) * N);
  auto cell = [&](std::size_t i, std::size_t j, std::size_t a) -> Cell& { return chart[(i * (l + 1) + j) * N + a]; };

  for (std::size_t i = 0; i < l; ++i)
    for (const auto& [a, tok] : g.lexical) {
      if (tok >= V) throw ShapeError("viterbi_cyk", {log_probs.shape(), Shape{tok}});
      Cell& c = cell(i, i + 1, a);
      const double s = log_probs.at(i, tok);
      if (!c.set || s > c.score || (s == c.score && tok < c.token)) {
        c.score = s;
        c.token = tok;
        c.set = true;
      }
    }
  for (std::size_t w = 2; w <= l; ++w)
    for (std::size_t i = 0; i + w <= l; ++i) {
      const std::size_t j = i + w;
      for (std::size_t k = i + 1; k < j; ++k)
        for (const auto& [a, b, c] : g.binary) {
          const Cell& lc = cell(i, k, b);
          const Cell& rc = cell(k, j, c);
          if (!lc.set || !rc.set) continue;
          const double s = lc.score + rc.score;
          Cell& t = cell(i, j, a);
          if (!t.set || s > t.score) {
            t.score = s;
            t.split = k;
            t.left = b;
            t.right = c;
            t.set = true;
          }
        }
    }
  const Cell& root = cell(0, l, g.start);
  if (!root.set) throw NoParse(l);

  ViterbiResult out;
  out.log_score = root.score;
  out.tokens.reserve(l);
  std::vector<std::array<std::size_t, 3>> stack{{0, l, g.start}};
  while (!stack.empty()) {
    auto [i, j, a] = stack.back();
    stack.pop_back();
    const Cell& c = cell(i, j, a);
    if (j == i + 1) {
      out.tokens.push_back(c.token);
      continue;
    }
    stack.push_back({c.split, j, c.right});
    stack.push_back({i, c.split, c.left});
  }
  return out;
}

bool recognizes(const CompiledGrammar& g, const Ids& tokens) {
  const std::size_t l = tokens.size(), N = g.nonterminals;
  if (l == 0) return false;
  std::vector<char> chart((l + 1) * (l + 1) * N, 0);
  auto at = [&](std::size_t i, std::size_t j, std::size_t a) -> char& { return chart[(i * (l + 1) + j) * N + a]; };
  for (std::size_t i = 0; i < l; ++i)
    for (const auto& [a, tok] : g.lexical)
      if (tok == tokens[i]) at(i, i + 1, a) = 1;
  for (std::size_t w = 2; w <= l; ++w)
    for (std::size_t i = 0; i + w <= l; ++i)
      for (std::size_t k = i + 1; k < i + w; ++k)
        for (const auto& [a, b, c] : g.binary)
          if (at(i, k, b) && at(k, i + w, c)) at(i, i + w, a) = 1;
  return at(0, l, g.start);
}

std::vector<std::size_t> top_lengths(const Array& dist, std::size_t k) {
  std::vector<std::size_t> candidates;
  for (std::size_t l = 1; l < dist.size(); ++l)
    if (dist[l] > 0.0) candidates.push_back(l);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  if (candidates.size() > k) candidates.resize(k);
  return candidates;
}

namespace {

Ids row_argmax(const Array& probs) {
  const std::size_t rows = probs.dim(0), V = probs.dim(1);
  Ids out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 1; c < V; ++c)
      if (probs.at(r, c) > probs.at(r, out[r])) out[r] = c;
  return out;
}

std::vector<std::size_t> candidate_lengths(const model::Model& m, const model::EncodedInput& enc, std::size_t k,
                                           Array* dist_out) {
  if (k == 0) throw std::invalid_argument("top-k must be at least 1");
  Array dist = m.length_distribution(enc)->value;
  auto lengths = top_lengths(dist, k);
  if (lengths.empty()) throw NoFeasibleLength("no feasible output length in 1.." + std::to_string(dist.size() - 1));
  *dist_out = std::move(dist);
  return lengths;
}

// Keeps the best-scoring candidate; ties keep the earlier (more probable) length.
void consider(DecodeResult& best, bool& have, Ids tokens, std::size_t l, double length_lp, double token_lp) {
  const double score = length_lp + token_lp;
  if (!have || score > best.log_score) {
    best.tokens = std::move(tokens);
    best.length = l;
    best.length_log_prob = length_lp;
    best.log_score = score;
    have = true;
  }
}

}  // namespace

DecodeResult predict(const model::Model& m, const Ids& source, std::size_t k) {
  ad::NoGradGuard no_grad;
  const auto enc = m.encode(source);
  Array dist;
  const auto lengths = candidate_lengths(m, enc, k, &dist);
  DecodeResult best;
  bool have = false;
  for (auto l : lengths) {
    const auto f = m.forward(enc, l);
    Ids tokens = row_argmax(f.output->value);
    double lp = 0.0;
    for (std::size_t i = 0; i < l; ++i) lp += safe_log(f.output->value.at(i, tokens[i]));
    consider(best, have, std::move(tokens), l, std::log(dist[l]), lp);
  }
  best.attempted = lengths;
  return best;
}

DecodeResult predict_grammar(const model::Model& m, const Ids& source, const CompiledGrammar& grammar,
                             std::size_t k) {
  ad::NoGradGuard no_grad;
  const auto enc = m.encode(source);
  Array dist;
  const auto lengths = candidate_lengths(m, enc, k, &dist);
  DecodeResult best;
  bool have = false;
  for (auto l : lengths) {
    const auto f = m.forward(enc, l);
    Array lp(f.output->value.shape());
    for (std::size_t c = 0; c < lp.size(); ++c) lp[c] = safe_log(f.output->value[c]);
    try {
      auto v = viterbi_cyk(lp, grammar);
      if (!std::isfinite(v.log_score)) continue;
      consider(best, have, std::move(v.tokens), l, std::log(dist[l]), v.log_score);
    } catch (const NoParse&) {
    }
  }
  if (!have) {
    std::string tried;
    for (auto l : lengths) tried += (tried.empty() ? "" : ", ") + std::to_string(l);
    throw NoFeasibleLength("no grammatical output at any attempted length (" + tried + ")");
  }
  best.attempted = lengths;
  return best;
}

DecodeResult predict_autoregressive(const model::Model& m, const Ids& source, std::size_t k) {
  ad::NoGradGuard no_grad;
  const auto enc = m.encode(source);
  Array dist;
  const auto lengths = candidate_lengths(m, enc, k, &dist);
  DecodeResult best;
  bool have = false;
  for (auto l : lengths) {
    const auto f = m.forward(enc, l, {});
    Ids prefix;
    double lp = 0.0;
    for (std::size_t i = 0; i < l; ++i) {
      const Array out = m.output_distributions(enc, f.alignment, prefix)->value;
      const std::size_t V = out.dim(1);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < V; ++c)
        if (out.at(i, c) > out.at(i, arg)) arg = c;
      lp += safe_log(out.at(i, arg));
      prefix.push_back(arg);
    }
    consider(best, have, std::move(prefix), l, std::log(dist[l]), lp);
  }
  best.attempted = lengths;
  return best;
}

DecodeResult decode(const model::Model& m, const Ids& source, const CompiledGrammar* grammar, std::size_t k) {
  if (grammar) {
    if (m.config().decoder == model::DecoderKind::kAutoregressive)
      throw std::invalid_argument("grammar-constrained decoding needs a non-autoregressive decoder");
    return predict_grammar(m, source, *grammar, k == 0 ? 5 : k);
  }
  if (k == 0) k = 1;
  if (m.config().decoder == model::DecoderKind::kAutoregressive) return predict_autoregressive(m, source, k);
  return predict(m, source, k);
}

double sequence_log_prob(const model::Model& m, const Ids& source, const Ids& target) {
  ad::NoGradGuard no_grad;
  const auto enc = m.encode(source);
  const auto f = m.forward(enc, target.size(), target);
  double lp = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) lp += safe_log(f.output->value.at(i, target[i]));
  return lp;
}

void write_predictions(std::ostream& out, const std::vector<data::Tokens>& sources,
                       const std::vector<data::Tokens>& predictions, const std::vector<DecodeResult>& results) {
  if (sources.size() != predictions.size() || sources.size() != results.size())
    throw std::invalid_argument("write_predictions: mismatched counts");
  for (std::size_t k = 0; k < sources.size(); ++k) {
    nlohmann::json j;
    j["source"] = sources[k];
    j["prediction"] = predictions[k];
    j["length"] = results[k].length;
    j["log_score"] = results[k].log_score;
    out << j.dump() << '\n';
  }
}

}  // namespace structrans::inference
