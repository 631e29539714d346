#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace structrans::data {

using Tokens = std::vector<std::string>;

struct Example {
  Tokens source;
  Tokens target;
  bool operator==(const Example&) const = default;
};

using Dataset = std::vector<Example>;

struct Splits {
  Dataset train, dev, test;
};

// Mirroring task: target = source followed by its reverse.
Tokens mirror(const Tokens& source);

// Setup A: 11 symbols; train lengths 3..9, dev length 10, test 11..20.
Splits generate_mirror_a(std::uint64_t seed);
// Setup B: 11 symbols plus x, y, z, which appear in train/dev only as the
// cluster "x y z"; test inputs (lengths 3..9, all 14 symbols) contain some
// x, y or z outside a complete cluster.
Splits generate_mirror_b(std::uint64_t seed);

inline constexpr std::size_t kTrainSize = 4000;
inline constexpr std::size_t kDevSize = 200;
inline constexpr std::size_t kTestSize = 1000;
inline constexpr double kClusterProbability = 0.2;

// True when some x, y or z is not covered by an in-order "x y z" trigram.
bool has_loose_xyz(const Tokens& source);

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& where, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// One {"source": [...], "target": [...]} object per line. Blank lines are
// skipped and a trailing CR is tolerated.
Dataset read_jsonl(std::istream& in, const std::string& where = "<stream>");
Dataset read_jsonl(const std::filesystem::path& path);
void write_jsonl(std::ostream& out, const Dataset& data);
// One token list per line, taken from the first of `keys` present.
std::vector<Tokens> read_sequences_jsonl(std::istream& in, const std::vector<std::string>& keys,
                                         const std::string& where = "<stream>");
std::vector<Tokens> read_sequences_jsonl(const std::filesystem::path& path, const std::vector<std::string>& keys);
void write_jsonl(const std::filesystem::path& path, const Dataset& data);

double exact_match(const std::vector<Tokens>& predictions, const std::vector<Tokens>& references);

class UnknownToken : public std::out_of_range {
 public:
  explicit UnknownToken(const std::string& token);
};

// Closed token <-> dense id map.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::size_t> encode(const Tokens& tokens) const;
  Tokens decode(const std::vector<std::size_t>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct Vocabularies {
  Vocabulary source, target;
};

// Tokens in order of first appearance.
Vocabularies build_vocabularies(const Dataset& data);

}  // namespace structrans::data
