#include "structrans/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "structrans/parameters.hpp"

namespace structrans::data {

namespace {

const std::vector<std::string> kBaseSymbols = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k"};
const std::vector<std::string> kCluster = {"x", "y", "z"};

Tokens uniform_sequence(Rng& rng, std::size_t length, const std::vector<std::string>& alphabet) {
  Tokens out;
  out.reserve(length);
  for (std::size_t k = 0; k < length; ++k) out.push_back(alphabet[rng.below(alphabet.size())]);
  return out;
}

std::size_t uniform_length(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

Example mirror_example(Tokens source) {
  Example e{std::move(source), {}};
  e.target = mirror(e.source);
  return e;
}

constexpr std::size_t kMinTrainLength = 3;
constexpr std::size_t kMaxTrainLength = 9;

// Left to right; at each step the cluster is appended with probability 0.2
// when it still fits under the maximum length.
Tokens clustered_sequence(Rng& rng) {
  const std::size_t length = uniform_length(rng, kMinTrainLength, kMaxTrainLength);
  Tokens out;
  while (out.size() < length) {
    if (out.size() + kCluster.size() <= kMaxTrainLength && rng.bernoulli(kClusterProbability)) {
      out.insert(out.end(), kCluster.begin(), kCluster.end());
    } else {
      out.push_back(kBaseSymbols[rng.below(kBaseSymbols.size())]);
    }
  }
  return out;
}

}  // namespace

Tokens mirror(const Tokens& source) {
  Tokens out = source;
  out.insert(out.end(), source.rbegin(), source.rend());
  return out;
}

Splits generate_mirror_a(std::uint64_t seed) {
  Rng rng(seed);
  Splits s;
  for (std::size_t k = 0; k < kTrainSize; ++k)
    s.train.push_back(mirror_example(uniform_sequence(rng, uniform_length(rng, kMinTrainLength, kMaxTrainLength), kBaseSymbols)));
  for (std::size_t k = 0; k < kDevSize; ++k) s.dev.push_back(mirror_example(uniform_sequence(rng, 10, kBaseSymbols)));
  for (std::size_t k = 0; k < kTestSize; ++k)
    s.test.push_back(mirror_example(uniform_sequence(rng, uniform_length(rng, 11, 20), kBaseSymbols)));
  return s;
}

bool has_loose_xyz(const Tokens& source) {
  std::vector<char> covered(source.size(), 0);
  for (std::size_t k = 0; k + 2 < source.size(); ++k)
    if (source[k] == "x" && source[k + 1] == "y" && source[k + 2] == "z") covered[k] = covered[k + 1] = covered[k + 2] = 1;
  for (std::size_t k = 0; k < source.size(); ++k)
    if (!covered[k] && std::find(kCluster.begin(), kCluster.end(), source[k]) != kCluster.end()) return true;
  return false;
}

Splits generate_mirror_b(std::uint64_t seed) {
  Rng rng(seed);
  Splits s;
  for (std::size_t k = 0; k < kTrainSize; ++k) s.train.push_back(mirror_example(clustered_sequence(rng)));
  for (std::size_t k = 0; k < kDevSize; ++k) s.dev.push_back(mirror_example(clustered_sequence(rng)));
  std::vector<std::string> all = kBaseSymbols;
  all.insert(all.end(), kCluster.begin(), kCluster.end());
  while (s.test.size() < kTestSize) {
    Tokens src = uniform_sequence(rng, uniform_length(rng, kMinTrainLength, kMaxTrainLength), all);
    if (has_loose_xyz(src)) s.test.push_back(mirror_example(std::move(src)));
  }
  return s;
}

FormatError::FormatError(const std::string& where, std::size_t line, const std::string& what)
    : std::runtime_error(where + ":" + std::to_string(line) + ": " + what), line_(line) {}

Dataset read_jsonl(std::istream& in, const std::string& where) {
  Dataset out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("source") || !j.contains("target"))
        throw FormatError(where, number, "expected an object with \"source\" and \"target\"");
      Example e{j.at("source").get<Tokens>(), j.at("target").get<Tokens>()};
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(where, number, ex.what());
    }
  }
  return out;
}

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_jsonl(in, path.string());
}

std::vector<Tokens> read_sequences_jsonl(std::istream& in, const std::vector<std::string>& keys,
                                         const std::string& where) {
  std::vector<Tokens> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto key = std::find_if(keys.begin(), keys.end(), [&](const std::string& k) { return j.is_object() && j.contains(k); });
      if (key == keys.end()) {
        std::string names;
        for (const auto& k : keys) names += (names.empty() ? "\"" : ", \"") + k + "\"";
        throw FormatError(where, number, "expected an object with one of " + names);
      }
      out.push_back(j.at(*key).get<Tokens>());
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(where, number, ex.what());
    }
  }
  return out;
}

std::vector<Tokens> read_sequences_jsonl(const std::filesystem::path& path, const std::vector<std::string>& keys) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_sequences_jsonl(in, keys, path.string());
}

void write_jsonl(std::ostream& out, const Dataset& data) {
  for (const auto& e : data) {
    nlohmann::json j;
    j["source"] = e.source;
    j["target"] = e.target;
    out << j.dump() << '\n';
  }
}

void write_jsonl(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_jsonl(out, data);
}

double exact_match(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references) {
  if (predictions.size() != references.size())
    throw std::invalid_argument("exact_match: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(references.size()) + " references");
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < predictions.size(); ++k) hits += predictions[k] == references[k];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

UnknownToken::UnknownToken(const std::string& token) : std::out_of_range("unknown token '" + token + "'") {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) add(t);
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw UnknownToken(token);
  return it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Tokens Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(token(id));
  return out;
}

Vocabularies build_vocabularies(const Dataset& data) {
  Vocabularies v;
  for (const auto& e : data) {
    for (const auto& t : e.source) v.source.add(t);
    for (const auto& t : e.target) v.target.add(t);
  }
  return v;
}

}  // namespace structrans::data
